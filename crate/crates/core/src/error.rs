//! Error type shared by all pipeline modules.

use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::LesionClass;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Ground-truth or submission file does not match the expected schema.
    #[error("schema error: {0}")]
    Schema(String),

    /// A ground-truth row is not a valid one-hot label.
    #[error("malformed label at data row {row}: {message}")]
    MalformedLabel { row: usize, message: String },

    /// The same image id appears more than once.
    #[error("duplicate image id: {0}")]
    DuplicateImageId(String),

    /// A class has too few records to be split.
    #[error("class {0} has fewer than 2 records; cannot stratify")]
    InsufficientClass(LesionClass),

    /// An oversample plan was requested for a class with no source images.
    #[error("class {0} has no source images")]
    EmptyClass(LesionClass),

    /// Decoded image is not 8-bit three-channel RGB.
    #[error("expected an 8-bit 3-channel RGB image, got {0}")]
    ChannelCount(String),

    /// Invalid image or tensor dimension.
    #[error("invalid dimension: {0}")]
    Dimension(String),

    /// Augmentation parameters violate their constraints.
    #[error("invalid augmentation spec: {0}")]
    AugmentationSpec(String),

    /// Oversample plan is inconsistent with the data or request.
    #[error("oversample plan error: {0}")]
    Plan(String),

    /// Pretrained backbone weights could not be resolved or loaded.
    #[error("cannot load backbone weights: {0}")]
    WeightLoad(String),

    /// Array shapes do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A label vector is not one-hot.
    #[error("invalid label: {0}")]
    Label(String),

    /// A probability vector violates the simplex constraints.
    #[error("invalid probability vector: {0}")]
    Probability(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}, batch {batch}: loss is not finite")]
    Divergence { epoch: usize, batch: usize },

    /// Training schedule violates its invariants.
    #[error("invalid training schedule: {0}")]
    Schedule(String),

    /// Checkpoint file is corrupt, truncated, or has the wrong version.
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    /// An output file could not be written.
    #[error("failed to persist {path}: {source}")]
    Persistence {
        path: PathBuf,
        source: std::io::Error,
    },

    /// Prediction sets do not cover the same image ids.
    #[error("prediction coverage mismatch: missing {missing:?}, unexpected {extra:?}")]
    Coverage {
        missing: Vec<String>,
        extra: Vec<String>,
    },

    /// An ensemble weight is zero, negative, or the weight count is wrong.
    #[error("invalid ensemble weight: {0}")]
    Weight(String),

    /// An operation that needs data received none.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// An image file could not be opened or decoded.
    #[error("cannot read image {path}: {message}")]
    ImageRead { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
