//! Checkpoint container: one binary archive holding every parameter array
//! (and, for resumable checkpoints, the optimizer moments) keyed by
//! hierarchical names, plus a JSON metadata block. A plain-text `key=value`
//! sidecar mirrors the metadata for toolchain-independent inspection.
//!
//! Layout:
//!
//! ```text
//! bytes 0..8    magic  b"DERMACKP"
//! bytes 8..12   format version, u32 little-endian
//! bytes 12..20  metadata length, u64 little-endian
//! ...           metadata JSON
//! ...           array payload, f64 little-endian, concatenated in index order
//! ```

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    build_classifier, BackboneDescriptor, ClassifierModel, NamedArray, TrainabilityMode,
};
use crate::train::{EpochRecord, TrainSchedule};

const MAGIC: &[u8; 8] = b"DERMACKP";
const FORMAT_VERSION: u32 = 1;

/// Adam state attached to a resumable checkpoint.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub mode: TrainabilityMode,
    pub steps: u64,
    pub moment1: Vec<NamedArray>,
    pub moment2: Vec<NamedArray>,
}

/// A self-contained training state: enough to run inference (parameters and
/// descriptor) and, when the optimizer state is present, to continue training
/// exactly where it stopped.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub descriptor: BackboneDescriptor,
    pub hidden_dim: Option<usize>,
    pub trainability: TrainabilityMode,
    pub schedule: TrainSchedule,
    pub epochs_completed: usize,
    pub best_epoch: usize,
    pub best_score: f64,
    pub history: Vec<EpochRecord>,
    pub params: Vec<NamedArray>,
    pub optimizer: Option<OptimizerState>,
}

#[derive(Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct OptimizerMeta {
    mode: TrainabilityMode,
    steps: u64,
}

#[derive(Serialize, Deserialize)]
struct CheckpointMeta {
    descriptor: BackboneDescriptor,
    hidden_dim: Option<usize>,
    trainability: TrainabilityMode,
    schedule: TrainSchedule,
    epochs_completed: usize,
    best_epoch: usize,
    best_score: f64,
    history: Vec<EpochRecord>,
    optimizer: Option<OptimizerMeta>,
    arrays: Vec<ArrayEntry>,
}

impl Checkpoint {
    /// Rebuild the model this checkpoint was taken from. Fails with a shape
    /// error when stored arrays do not match the descriptor's geometry.
    pub fn build_model(&self) -> Result<ClassifierModel> {
        let mut model = build_classifier(&self.descriptor, self.hidden_dim, 0)?;
        model.restore(&self.params)?;
        model.set_trainable(self.trainability);
        Ok(model)
    }
}

fn persist_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let wrap = |source: std::io::Error| Error::Persistence {
        path: path.to_path_buf(),
        source,
    };
    let parent = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(parent) = parent {
        fs::create_dir_all(parent).map_err(wrap)?;
    }
    let mut temp = tempfile::NamedTempFile::new_in(parent.unwrap_or(Path::new(".")))
        .map_err(wrap)?;
    temp.write_all(bytes).map_err(wrap)?;
    temp.persist(path)
        .map_err(|e| wrap(e.error))
        .map(|_| ())
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn sidecar_body(checkpoint: &Checkpoint) -> String {
    let mut body = String::new();
    let mut push = |key: &str, value: String| {
        body.push_str(key);
        body.push('=');
        body.push_str(&value);
        body.push('\n');
    };
    push("format_version", FORMAT_VERSION.to_string());
    push("backbone", checkpoint.descriptor.name.clone());
    push("input_side", checkpoint.descriptor.input_side.to_string());
    push("feature_dim", checkpoint.descriptor.feature_dim.to_string());
    push(
        "hidden_dim",
        checkpoint
            .hidden_dim
            .map_or_else(|| "none".to_string(), |d| d.to_string()),
    );
    push("trainability", checkpoint.trainability.to_string());
    push("epochs_completed", checkpoint.epochs_completed.to_string());
    push("best_epoch", checkpoint.best_epoch.to_string());
    push("best_score", format!("{:.6}", checkpoint.best_score));
    push("seed", checkpoint.schedule.seed.to_string());
    push("max_epochs", checkpoint.schedule.max_epochs.to_string());
    push(
        "resumable",
        checkpoint.optimizer.is_some().to_string(),
    );
    body
}

/// Serialize and atomically write a checkpoint plus its sidecar.
pub fn save_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<()> {
    let mut arrays: Vec<&NamedArray> = checkpoint.params.iter().collect();
    let mut entries: Vec<ArrayEntry> = checkpoint
        .params
        .iter()
        .map(|a| ArrayEntry {
            name: a.name.clone(),
            shape: a.shape.clone(),
        })
        .collect();
    if let Some(optimizer) = &checkpoint.optimizer {
        for (prefix, moments) in [("optim.m.", &optimizer.moment1), ("optim.v.", &optimizer.moment2)]
        {
            for array in moments {
                entries.push(ArrayEntry {
                    name: format!("{prefix}{}", array.name),
                    shape: array.shape.clone(),
                });
                arrays.push(array);
            }
        }
    }

    let meta = CheckpointMeta {
        descriptor: checkpoint.descriptor.clone(),
        hidden_dim: checkpoint.hidden_dim,
        trainability: checkpoint.trainability,
        schedule: checkpoint.schedule,
        epochs_completed: checkpoint.epochs_completed,
        best_epoch: checkpoint.best_epoch,
        best_score: checkpoint.best_score,
        history: checkpoint.history.clone(),
        optimizer: checkpoint.optimizer.as_ref().map(|o| OptimizerMeta {
            mode: o.mode,
            steps: o.steps,
        }),
        arrays: entries,
    };
    let meta_json = serde_json::to_vec(&meta)
        .map_err(|e| Error::CheckpointFormat(format!("cannot encode metadata: {e}")))?;

    let payload_len: usize = arrays.iter().map(|a| a.data.len() * 8).sum();
    let mut bytes = Vec::with_capacity(20 + meta_json.len() + payload_len);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    bytes.extend_from_slice(&(meta_json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&meta_json);
    for array in arrays {
        for value in &array.data {
            bytes.extend_from_slice(&value.to_le_bytes());
        }
    }

    persist_atomically(path, &bytes)?;
    persist_atomically(&sidecar_path(path), sidecar_body(checkpoint).as_bytes())
}

/// Read and validate a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path)?;
    if bytes.len() < 20 {
        return Err(Error::CheckpointFormat(format!(
            "{} is truncated ({} bytes)",
            path.display(),
            bytes.len()
        )));
    }
    if &bytes[0..8] != MAGIC {
        return Err(Error::CheckpointFormat(format!(
            "{} does not start with the checkpoint magic",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::CheckpointFormat(format!(
            "unsupported checkpoint version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let meta_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let payload_start = 20usize
        .checked_add(meta_len)
        .ok_or_else(|| Error::CheckpointFormat("metadata length overflows".to_string()))?;
    if bytes.len() < payload_start {
        return Err(Error::CheckpointFormat(
            "metadata block is truncated".to_string(),
        ));
    }
    let meta: CheckpointMeta = serde_json::from_slice(&bytes[20..payload_start])
        .map_err(|e| Error::CheckpointFormat(format!("metadata does not parse: {e}")))?;

    let expected_values: usize = meta
        .arrays
        .iter()
        .map(|e| e.shape.iter().product::<usize>())
        .sum();
    let payload = &bytes[payload_start..];
    if payload.len() != expected_values * 8 {
        return Err(Error::CheckpointFormat(format!(
            "array payload holds {} bytes, metadata expects {}",
            payload.len(),
            expected_values * 8
        )));
    }

    let mut offset = 0usize;
    let mut params = Vec::new();
    let mut moment1 = Vec::new();
    let mut moment2 = Vec::new();
    for entry in &meta.arrays {
        let len: usize = entry.shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for i in 0..len {
            let start = offset + i * 8;
            data.push(f64::from_le_bytes(
                payload[start..start + 8].try_into().expect("8 bytes"),
            ));
        }
        offset += len * 8;
        if let Some(name) = entry.name.strip_prefix("optim.m.") {
            moment1.push(NamedArray {
                name: name.to_string(),
                shape: entry.shape.clone(),
                data,
            });
        } else if let Some(name) = entry.name.strip_prefix("optim.v.") {
            moment2.push(NamedArray {
                name: name.to_string(),
                shape: entry.shape.clone(),
                data,
            });
        } else {
            params.push(NamedArray {
                name: entry.name.clone(),
                shape: entry.shape.clone(),
                data,
            });
        }
    }

    let optimizer = meta.optimizer.map(|o| OptimizerState {
        mode: o.mode,
        steps: o.steps,
        moment1,
        moment2,
    });

    Ok(Checkpoint {
        descriptor: meta.descriptor,
        hidden_dim: meta.hidden_dim,
        trainability: meta.trainability,
        schedule: meta.schedule,
        epochs_completed: meta.epochs_completed,
        best_epoch: meta.best_epoch,
        best_score: meta.best_score,
        history: meta.history,
        params,
        optimizer,
    })
}
