//! End-to-end pipeline for seven-class dermoscopic skin-lesion
//! classification: ground-truth ingestion and stratified splitting,
//! preprocessing, seeded augmentation with minority oversampling, two-phase
//! fine-tuning of pluggable pretrained backbones, softmax ensembling, and
//! challenge-format evaluation.
//!
//! Everything that involves randomness is a pure function of explicit seeds,
//! so runs reproduce bit-for-bit regardless of thread count.

pub mod augment;
pub mod dataset;
pub mod ensemble;
pub mod error;
pub mod evaluate;
pub mod model;
pub mod preprocess;
pub mod rng;
pub mod train;

pub use augment::{
    apply_augmentation, build_oversample_plan, sample_epoch, AugmentationSpec, OversamplePlan,
    ValueRange,
};
pub use dataset::{
    class_distribution, load_ground_truth, merge_ground_truth, read_manifest, stratified_split,
    verify_images, write_manifest, ClassDistribution, LesionClass, SampleRecord,
    VerificationReport, NUM_CLASSES,
};
pub use ensemble::{fuse, FusionMode, PredictionSet};
pub use error::{Error, Result};
pub use evaluate::{
    accuracy, balanced_accuracy, confusion, per_class_metrics, read_submission, write_submission,
    ConfusionMatrix, MetricsReport, PerClassMetrics,
};
pub use model::{
    build_classifier, softmax, BackboneDescriptor, ClassifierModel, NamedArray,
    ProbabilityVector, TrainabilityMode,
};
pub use preprocess::{
    load_unit_image, resize, subtract_mean, to_unit_range, ImageBuffer, NormalizationParams,
};
pub use train::{
    cross_entropy, cross_entropy_one_hot, early_stop_check, history_to_csv, load_checkpoint,
    mean_cross_entropy, predict_images, predict_records, run_training, save_checkpoint,
    Checkpoint, EpochRecord, OptimizerState, TrainData, TrainSchedule, Trainer,
};
