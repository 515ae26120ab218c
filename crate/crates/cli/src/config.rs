//! The run-config file: one TOML document plus `--set` overrides fully
//! determines a run.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use derma_core::augment::AugmentationSpec;
use derma_core::ensemble::FusionMode;
use derma_core::model::BackboneDescriptor;
use derma_core::preprocess::NormalizationParams;
use derma_core::rng::derive_seed;
use derma_core::train::TrainSchedule;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    /// One or more ground-truth tables; multiple files are merged.
    pub ground_truth: Vec<PathBuf>,
    pub image_root: PathBuf,
    pub image_extension: String,
    pub holdout_fraction: f64,
    pub split_seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            ground_truth: Vec::new(),
            image_root: PathBuf::new(),
            image_extension: ".jpg".to_string(),
            holdout_fraction: 0.1,
            split_seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreprocessConfig {
    /// RGB means subtracted after unit-range conversion. The ILSVRC means
    /// [0.485, 0.456, 0.406] are the usual choice for ImageNet backbones.
    pub channel_means: [f64; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub backbone: String,
    /// Optional hidden layer between features and the output layer; 0
    /// disables it.
    pub hidden_dim: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: "tiny-test".to_string(),
            hidden_dim: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OversampleConfig {
    /// Samples drawn per training epoch, split evenly across classes.
    pub epoch_size: usize,
}

impl Default for OversampleConfig {
    fn default() -> Self {
        OversampleConfig { epoch_size: 7007 }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub mode: FusionMode,
    /// Prediction files fused when the subcommand gets no file arguments.
    pub members: Vec<PathBuf>,
    /// Per-member weights; empty means uniform.
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub preprocess: PreprocessConfig,
    #[serde(default)]
    pub augment: AugmentationSpec,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainSchedule,
    #[serde(default)]
    pub oversample: OversampleConfig,
    #[serde(default)]
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// How much of the config a subcommand relies on.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ValidationMode {
    /// Dataset paths must exist (prepare, train, predict).
    Full,
    /// Only numeric constraints are checked (ensemble, evaluate).
    Light,
}

impl RunConfig {
    /// Load the config file, apply `--set` overrides and the master seed,
    /// then validate.
    pub fn load(
        path: &Path,
        overrides: &[String],
        master_seed: Option<u64>,
        output_override: Option<&Path>,
        mode: ValidationMode,
    ) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        let mut value: toml::Value = toml::from_str(&text)
            .with_context(|| format!("config file {} is not valid TOML", path.display()))?;
        for spec in overrides {
            apply_override(&mut value, spec)?;
        }
        let mut config: RunConfig = value
            .try_into()
            .with_context(|| format!("config file {} has invalid contents", path.display()))?;

        if let Some(seed) = master_seed {
            // One seed drives every module through labeled sub-seeds.
            config.dataset.split_seed = derive_seed(seed, "split");
            config.train.seed = derive_seed(seed, "train");
        }
        if let Some(dir) = output_override {
            config.output.dir = dir.to_path_buf();
        }
        config.validate(mode)?;
        Ok(config)
    }

    pub fn validate(&self, mode: ValidationMode) -> Result<()> {
        if mode == ValidationMode::Full {
            if self.dataset.ground_truth.is_empty() {
                bail!("config field dataset.ground_truth: at least one table is required");
            }
            for path in &self.dataset.ground_truth {
                if !path.is_file() {
                    bail!(
                        "config field dataset.ground_truth: {} does not exist",
                        path.display()
                    );
                }
            }
            if !self.dataset.image_root.is_dir() {
                bail!(
                    "config field dataset.image_root: {} is not a directory",
                    self.dataset.image_root.display()
                );
            }
        }
        if !self.dataset.image_extension.starts_with('.') {
            bail!(
                "config field dataset.image_extension: {:?} must start with '.'",
                self.dataset.image_extension
            );
        }
        if !(self.dataset.holdout_fraction > 0.0 && self.dataset.holdout_fraction < 1.0) {
            bail!(
                "config field dataset.holdout_fraction: {} must lie in (0, 1)",
                self.dataset.holdout_fraction
            );
        }
        NormalizationParams::new(self.preprocess.channel_means)
            .context("config field preprocess.channel_means")?;
        self.augment.validate().context("config section [augment]")?;
        BackboneDescriptor::lookup(&self.model.backbone)
            .context("config field model.backbone")?;
        self.train.validate().context("config section [train]")?;
        if self.oversample.epoch_size < derma_core::NUM_CLASSES {
            bail!(
                "config field oversample.epoch_size: {} is below one draw per class",
                self.oversample.epoch_size
            );
        }
        if !self.ensemble.weights.is_empty() {
            for &w in &self.ensemble.weights {
                if !(w > 0.0 && w.is_finite()) {
                    bail!("config field ensemble.weights: {w} must be positive and finite");
                }
            }
        }
        if self.output.dir.as_os_str().is_empty() {
            bail!("no output directory: set [output] dir or pass --output");
        }
        Ok(())
    }

    pub fn normalization(&self) -> NormalizationParams {
        NormalizationParams::new(self.preprocess.channel_means)
            .expect("validated at load time")
    }

    pub fn hidden_dim(&self) -> Option<usize> {
        (self.model.hidden_dim > 0).then_some(self.model.hidden_dim)
    }

    /// Create the output directory if needed and return it.
    pub fn ensure_output_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.output.dir).with_context(|| {
            format!("cannot create output directory {}", self.output.dir.display())
        })?;
        Ok(&self.output.dir)
    }
}

/// Apply one `--set key.path=value` override onto the raw TOML tree. The
/// value is parsed as TOML, falling back to a plain string.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<()> {
    let (path, raw) = spec
        .split_once('=')
        .with_context(|| format!("--set {spec:?}: expected KEY=VALUE"))?;
    let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|table| table.get("v").cloned())
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let keys: Vec<&str> = path.split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        bail!("--set {spec:?}: empty key segment");
    }
    let mut node = root;
    for key in &keys[..keys.len() - 1] {
        let table = node
            .as_table_mut()
            .with_context(|| format!("--set {spec:?}: {key} is not a table"))?;
        node = table
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    let table = node
        .as_table_mut()
        .with_context(|| format!("--set {spec:?}: target is not a table"))?;
    table.insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
