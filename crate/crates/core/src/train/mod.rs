//! Two-phase fine-tuning: a warmup phase that trains only the classifier head
//! at a low learning rate, then full-network updates at a higher rate, with
//! Adam, cross-entropy loss, per-epoch balanced-accuracy validation, early
//! stopping, and atomic checkpointing.
//!
//! Every epoch's randomness is a pure function of `(schedule seed, epoch)`,
//! so a run can be interrupted, resumed from the last checkpoint, and produce
//! the identical loss sequence.

mod adam;
mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, OptimizerState};

use std::collections::{HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{apply_augmentation, sample_epoch, sample_rng, AugmentationSpec, OversamplePlan};
use crate::dataset::{LesionClass, SampleRecord, NUM_CLASSES};
use crate::ensemble::PredictionSet;
use crate::error::{Error, Result};
use crate::evaluate;
use crate::model::{softmax, ClassifierModel, ProbabilityVector, TrainabilityMode};
use crate::preprocess::{load_unit_image, resize, subtract_mean, ImageBuffer, NormalizationParams};
use crate::rng::{derive_indexed_seed, derive_seed, seeded_rng};
use crate::{augment, model};

use adam::Adam;

/// Probabilities are clamped to at least this before taking the log.
pub const PROBABILITY_FLOOR: f64 = 1e-12;

/// Decoded images are cached up to this many entries; beyond it the trainer
/// decodes on demand.
const IMAGE_CACHE_LIMIT: usize = 4096;

/// The two-phase fine-tuning plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSchedule {
    /// Head-only warmup epochs.
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_lr: f64,
    pub max_epochs: usize,
    /// Epochs without validation improvement tolerated before stopping.
    pub early_stop_patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> TrainSchedule {
        TrainSchedule {
            phase1_epochs: 2,
            phase1_lr: 1e-4,
            phase2_lr: 1e-2,
            max_epochs: 50,
            early_stop_patience: 10,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.phase1_epochs >= self.max_epochs {
            return Err(Error::Schedule(format!(
                "phase1_epochs ({}) must be below max_epochs ({})",
                self.phase1_epochs, self.max_epochs
            )));
        }
        for (name, lr) in [("phase1_lr", self.phase1_lr), ("phase2_lr", self.phase2_lr)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Schedule(format!(
                    "{name} is {lr}, must be positive and finite"
                )));
            }
        }
        if self.early_stop_patience == 0 {
            return Err(Error::Schedule(
                "early_stop_patience must be at least 1".to_string(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Schedule("batch_size must be at least 1".to_string()));
        }
        Ok(())
    }

    pub fn mode_for_epoch(&self, epoch: usize) -> TrainabilityMode {
        if epoch <= self.phase1_epochs {
            TrainabilityMode::HeadOnly
        } else {
            TrainabilityMode::All
        }
    }

    pub fn lr_for_epoch(&self, epoch: usize) -> f64 {
        if epoch <= self.phase1_epochs {
            self.phase1_lr
        } else {
            self.phase2_lr
        }
    }
}

/// One row of the training history.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub validation_score: f64,
    pub learning_rate: f64,
    pub trainability: TrainabilityMode,
    pub wall_seconds: f64,
}

/// Negative log-probability of the true class, with the probability clamped
/// to [`PROBABILITY_FLOOR`].
pub fn cross_entropy(probabilities: &ProbabilityVector, label: LesionClass) -> f64 {
    -probabilities.probability(label).max(PROBABILITY_FLOOR).ln()
}

/// [`cross_entropy`] with the label given as a one-hot vector; anything not
/// one-hot (tolerance 1e-9) is rejected.
pub fn cross_entropy_one_hot(
    probabilities: &ProbabilityVector,
    label: &[f64; NUM_CLASSES],
) -> Result<f64> {
    let mut hot = None;
    for (i, &v) in label.iter().enumerate() {
        if (v - 1.0).abs() <= 1e-9 {
            if hot.is_some() {
                return Err(Error::Label("more than one entry equals 1".to_string()));
            }
            hot = Some(i);
        } else if v.abs() > 1e-9 {
            return Err(Error::Label(format!("entry {i} is {v}, expected 0 or 1")));
        }
    }
    let hot = hot.ok_or_else(|| Error::Label("no entry equals 1".to_string()))?;
    Ok(cross_entropy(
        probabilities,
        LesionClass::from_ordinal(hot).expect("index below NUM_CLASSES"),
    ))
}

/// Mean cross-entropy over a batch.
pub fn mean_cross_entropy(probabilities: &[ProbabilityVector], labels: &[LesionClass]) -> f64 {
    debug_assert_eq!(probabilities.len(), labels.len());
    let total: f64 = probabilities
        .iter()
        .zip(labels)
        .map(|(p, &label)| cross_entropy(p, label))
        .sum();
    total / labels.len() as f64
}

/// Fused softmax + cross-entropy: returns the mean batch loss and the logit
/// gradient `(softmax(z) - onehot) / n`.
pub fn softmax_cross_entropy_grad(
    logits: &Array2<f64>,
    labels: &[LesionClass],
) -> (f64, Array2<f64>) {
    let n = labels.len();
    debug_assert_eq!(logits.dim().0, n);
    let mut dlogits = Array2::zeros(logits.dim());
    let mut loss_sum = 0.0;
    for (row, &label) in labels.iter().enumerate() {
        let mut z = [0.0; NUM_CLASSES];
        for (v, &l) in z.iter_mut().zip(logits.row(row).iter()) {
            *v = l;
        }
        let probs = softmax(z);
        loss_sum += cross_entropy(&probs, label);
        let values = probs.values();
        for class in 0..NUM_CLASSES {
            let indicator = if class == label.ordinal() { 1.0 } else { 0.0 };
            dlogits[(row, class)] = (values[class] - indicator) / n as f64;
        }
    }
    (loss_sum / n as f64, dlogits)
}

/// True once the best validation score lies more than `patience` epochs
/// before the latest epoch. Ties keep the earliest best.
pub fn early_stop_check(history: &[EpochRecord], patience: usize) -> bool {
    if history.is_empty() {
        return false;
    }
    let mut best = 0usize;
    for (index, record) in history.iter().enumerate() {
        if record.validation_score > history[best].validation_score {
            best = index;
        }
    }
    history.len() - 1 - best > patience
}

/// Comma-separated history log: `epoch,phase,lr,train_loss,val_score,seconds`.
pub fn history_to_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,phase,lr,train_loss,val_score,seconds\n");
    for r in history {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3}\n",
            r.epoch, r.trainability, r.learning_rate, r.train_loss, r.validation_score,
            r.wall_seconds
        ));
    }
    out
}

/// Training and holdout record sets.
pub struct TrainData<'a> {
    pub train: &'a [SampleRecord],
    pub holdout: &'a [SampleRecord],
}

/// Drives the two-phase schedule over a model.
pub struct Trainer {
    model: ClassifierModel,
    schedule: TrainSchedule,
    augmentation: AugmentationSpec,
    plan: OversamplePlan,
    normalization: NormalizationParams,
    optimizer: Adam,
    history: Vec<EpochRecord>,
    best_epoch: usize,
    best_score: f64,
    best_params: Option<Vec<model::NamedArray>>,
    best_trainability: TrainabilityMode,
    image_cache: HashMap<PathBuf, Arc<ImageBuffer>>,
}

impl Trainer {
    pub fn new(
        model: ClassifierModel,
        schedule: TrainSchedule,
        augmentation: AugmentationSpec,
        plan: OversamplePlan,
        normalization: NormalizationParams,
    ) -> Result<Trainer> {
        schedule.validate()?;
        augmentation.validate()?;
        let mode = schedule.mode_for_epoch(1);
        Ok(Trainer {
            model,
            schedule,
            augmentation,
            plan,
            normalization,
            optimizer: Adam::new(mode),
            history: Vec::new(),
            best_epoch: 0,
            best_score: f64::NEG_INFINITY,
            best_params: None,
            best_trainability: mode,
            image_cache: HashMap::new(),
        })
    }

    /// Continue from a resumable checkpoint. The schedule's phase structure
    /// and seed must match the original run for the continuation to replay
    /// the uninterrupted loss sequence.
    pub fn resume(
        checkpoint: Checkpoint,
        schedule: TrainSchedule,
        augmentation: AugmentationSpec,
        plan: OversamplePlan,
        normalization: NormalizationParams,
    ) -> Result<Trainer> {
        schedule.validate()?;
        augmentation.validate()?;
        let model = checkpoint.build_model()?;
        let optimizer = match &checkpoint.optimizer {
            Some(state) => Adam::from_arrays(state.mode, state.steps, &state.moment1, &state.moment2),
            None => Adam::new(model.trainability()),
        };
        let best_trainability = checkpoint
            .history
            .get(checkpoint.best_epoch.wrapping_sub(1))
            .map_or(model.trainability(), |r| r.trainability);
        Ok(Trainer {
            model,
            schedule,
            augmentation,
            plan,
            normalization,
            optimizer,
            history: checkpoint.history,
            best_epoch: checkpoint.best_epoch,
            best_score: checkpoint.best_score,
            best_params: None,
            best_trainability,
            image_cache: HashMap::new(),
        })
    }

    pub fn model(&self) -> &ClassifierModel {
        &self.model
    }

    pub fn history(&self) -> &[EpochRecord] {
        &self.history
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn best_score(&self) -> f64 {
        self.best_score
    }

    /// True once the schedule is exhausted or early stopping has fired.
    pub fn is_finished(&self) -> bool {
        self.history.len() >= self.schedule.max_epochs
            || early_stop_check(&self.history, self.schedule.early_stop_patience)
    }

    /// Run exactly the next epoch. When `checkpoint_dir` is given,
    /// `last.ckpt` is rewritten and `best.ckpt` refreshed on improvement.
    pub fn step_epoch(
        &mut self,
        data: &TrainData<'_>,
        checkpoint_dir: Option<&Path>,
    ) -> Result<EpochRecord> {
        if data.train.is_empty() {
            return Err(Error::EmptyInput("no training records".to_string()));
        }
        if data.holdout.is_empty() {
            return Err(Error::EmptyInput("no holdout records".to_string()));
        }
        if self.is_finished() {
            return Err(Error::Schedule(format!(
                "training already finished after epoch {}",
                self.history.len()
            )));
        }
        let epoch = self.history.len() + 1;
        let record = self.run_epoch(data, epoch)?;
        self.history.push(record);
        let mut improved = false;
        if record.validation_score > self.best_score {
            self.best_score = record.validation_score;
            self.best_epoch = epoch;
            self.best_params = Some(self.model.snapshot());
            self.best_trainability = self.model.trainability();
            improved = true;
        }
        log::info!(
            "epoch {epoch}: mode {} lr {} loss {:.6} val {:.6}{}",
            record.trainability,
            record.learning_rate,
            record.train_loss,
            record.validation_score,
            if improved { " (best)" } else { "" }
        );
        if let Some(dir) = checkpoint_dir {
            save_checkpoint(&self.current_checkpoint(), &dir.join("last.ckpt"))?;
            if improved {
                save_checkpoint(&self.best_checkpoint()?, &dir.join("best.ckpt"))?;
            }
        }
        Ok(record)
    }

    /// Run until `max_epochs` or early stopping.
    pub fn run(&mut self, data: &TrainData<'_>, checkpoint_dir: Option<&Path>) -> Result<()> {
        while !self.is_finished() {
            self.step_epoch(data, checkpoint_dir)?;
        }
        if early_stop_check(&self.history, self.schedule.early_stop_patience) {
            log::info!(
                "early stopping after epoch {}: best score {:.6} at epoch {}",
                self.history.len(),
                self.best_score,
                self.best_epoch
            );
        }
        Ok(())
    }

    fn run_epoch(&mut self, data: &TrainData<'_>, epoch: usize) -> Result<EpochRecord> {
        let started = Instant::now();
        let mode = self.schedule.mode_for_epoch(epoch);
        let learning_rate = self.schedule.lr_for_epoch(epoch);
        if self.model.trainability() != mode {
            self.model.set_trainable(mode);
        }
        if self.optimizer.mode != mode {
            // The trainable parameter set changes at the phase boundary, so
            // Adam moments start over for the new set.
            log::info!("epoch {epoch}: optimizer state reset at phase boundary ({mode})");
            self.optimizer = Adam::new(mode);
        }

        let epoch_seed = derive_indexed_seed(self.schedule.seed, "epoch", epoch as u64);
        let mut sampler = seeded_rng(derive_seed(epoch_seed, "sample"));
        let order = sample_epoch(data.train, &self.plan, &mut sampler)?;

        let input_side = self.model.descriptor().input_side;
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for (chunk_index, chunk) in order.chunks(self.schedule.batch_size).enumerate() {
            let batch_index = chunk_index + 1;
            let records: Vec<&SampleRecord> = chunk.iter().map(|&i| &data.train[i]).collect();
            self.fill_image_cache(&records)?;
            let mut sources = Vec::with_capacity(records.len());
            for record in &records {
                sources.push(self.unit_image(record)?);
            }

            let base_position = chunk_index * self.schedule.batch_size;
            let augmentation = &self.augmentation;
            let normalization = self.normalization;
            let prepared: Vec<ImageBuffer> = sources
                .par_iter()
                .enumerate()
                .map(|(k, unit)| {
                    let mut rng = sample_rng(epoch_seed, (base_position + k) as u64);
                    let augmented = apply_augmentation(unit, augmentation, &mut rng)?;
                    let centered = subtract_mean(&augmented, &normalization);
                    resize(&centered, input_side, input_side)
                })
                .collect::<Result<Vec<_>>>()?;

            let batch = model::batch_from_images(&prepared)?;
            let labels: Vec<LesionClass> = records.iter().map(|r| r.label).collect();
            let (batch_loss, dlogits) = {
                let (logits, cache) = self.model.forward_logits(&batch)?;
                let (batch_loss, dlogits) = softmax_cross_entropy_grad(&logits, &labels);
                self.model.zero_grads();
                self.model.backward(&cache, &dlogits);
                (batch_loss, dlogits)
            };
            drop(dlogits);
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: batch_index,
                });
            }
            let mut slots = self.model.trainable_slots();
            self.optimizer.step(&mut slots, learning_rate);
            loss_sum += batch_loss * labels.len() as f64;
            seen += labels.len();
        }

        let validation_score = self.evaluate_holdout(data.holdout)?;
        Ok(EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            validation_score,
            learning_rate,
            trainability: mode,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn fill_image_cache(&mut self, records: &[&SampleRecord]) -> Result<()> {
        let mut missing: Vec<&SampleRecord> = Vec::new();
        let mut queued: HashSet<&Path> = HashSet::new();
        for record in records {
            if self.image_cache.len() + missing.len() >= IMAGE_CACHE_LIMIT {
                break;
            }
            if !self.image_cache.contains_key(&record.image_path)
                && queued.insert(record.image_path.as_path())
            {
                missing.push(record);
            }
        }
        let decoded: Vec<(PathBuf, ImageBuffer)> = missing
            .par_iter()
            .map(|record| {
                load_unit_image(&record.image_path).map(|b| (record.image_path.clone(), b))
            })
            .collect::<Result<Vec<_>>>()?;
        for (path, buffer) in decoded {
            self.image_cache.insert(path, Arc::new(buffer));
        }
        Ok(())
    }

    fn unit_image(&self, record: &SampleRecord) -> Result<Arc<ImageBuffer>> {
        match self.image_cache.get(&record.image_path) {
            Some(buffer) => Ok(buffer.clone()),
            None => Ok(Arc::new(load_unit_image(&record.image_path)?)),
        }
    }

    fn evaluate_holdout(&mut self, holdout: &[SampleRecord]) -> Result<f64> {
        let records: Vec<&SampleRecord> = holdout.iter().collect();
        self.fill_image_cache(&records)?;
        let input_side = self.model.descriptor().input_side;
        let mut entries = Vec::with_capacity(holdout.len());
        for chunk in holdout.chunks(self.schedule.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            for record in chunk {
                let unit = self.unit_image(record)?;
                let centered = subtract_mean(&unit, &self.normalization);
                images.push(resize(&centered, input_side, input_side)?);
            }
            let batch = model::batch_from_images(&images)?;
            let probs = self.model.forward(&batch)?;
            for (record, p) in chunk.iter().zip(probs) {
                entries.push((record.image_id.clone(), p));
            }
        }
        let predictions = PredictionSet::from_entries("holdout", entries)?;
        let confusion = evaluate::confusion(&predictions, holdout)?;
        evaluate::balanced_accuracy(&confusion)
    }

    /// Snapshot of the current state, resumable (optimizer state included).
    pub fn current_checkpoint(&self) -> Checkpoint {
        let (moment1, moment2) = self.optimizer.moment_arrays();
        Checkpoint {
            descriptor: self.model.descriptor().clone(),
            hidden_dim: self.model.hidden_dim(),
            trainability: self.model.trainability(),
            schedule: self.schedule,
            epochs_completed: self.history.len(),
            best_epoch: self.best_epoch,
            best_score: self.best_score,
            history: self.history.clone(),
            params: self.model.snapshot(),
            optimizer: Some(OptimizerState {
                mode: self.optimizer.mode,
                steps: self.optimizer.steps,
                moment1,
                moment2,
            }),
        }
    }

    /// Checkpoint of the best-validation epoch seen by this trainer instance.
    pub fn best_checkpoint(&self) -> Result<Checkpoint> {
        let params = self.best_params.clone().ok_or_else(|| {
            Error::EmptyInput(
                "no best checkpoint in memory (no epoch has run since construction)".to_string(),
            )
        })?;
        Ok(Checkpoint {
            descriptor: self.model.descriptor().clone(),
            hidden_dim: self.model.hidden_dim(),
            trainability: self.best_trainability,
            schedule: self.schedule,
            epochs_completed: self.best_epoch,
            best_epoch: self.best_epoch,
            best_score: self.best_score,
            history: self.history[..self.best_epoch].to_vec(),
            params,
            optimizer: None,
        })
    }
}

/// Execute the full schedule and return the best checkpoint plus the history.
#[allow(clippy::too_many_arguments)]
pub fn run_training(
    model: ClassifierModel,
    train: &[SampleRecord],
    holdout: &[SampleRecord],
    schedule: TrainSchedule,
    augmentation: &AugmentationSpec,
    plan: &OversamplePlan,
    normalization: &NormalizationParams,
    checkpoint_dir: Option<&Path>,
) -> Result<(Checkpoint, Vec<EpochRecord>)> {
    let mut trainer = Trainer::new(
        model,
        schedule,
        augmentation.clone(),
        plan.clone(),
        *normalization,
    )?;
    trainer.run(&TrainData { train, holdout }, checkpoint_dir)?;
    let best = trainer.best_checkpoint()?;
    Ok((best, trainer.history().to_vec()))
}

/// Deterministic inference over `(image_id, path)` pairs: preprocessing
/// only, no augmentation.
pub fn predict_images(
    model: &ClassifierModel,
    items: &[(String, PathBuf)],
    normalization: &NormalizationParams,
    batch_size: usize,
    source_name: &str,
) -> Result<PredictionSet> {
    if batch_size == 0 {
        return Err(Error::Schedule("batch_size must be at least 1".to_string()));
    }
    let input_side = model.descriptor().input_side;
    let mut entries = Vec::with_capacity(items.len());
    for chunk in items.chunks(batch_size) {
        let images: Vec<ImageBuffer> = chunk
            .par_iter()
            .map(|(_, path)| {
                let unit = load_unit_image(path)?;
                let centered = subtract_mean(&unit, normalization);
                resize(&centered, input_side, input_side)
            })
            .collect::<Result<Vec<_>>>()?;
        let batch = model::batch_from_images(&images)?;
        let probs = model.forward(&batch)?;
        for ((image_id, _), p) in chunk.iter().zip(probs) {
            entries.push((image_id.clone(), p));
        }
    }
    PredictionSet::from_entries(source_name, entries)
}

/// [`predict_images`] over labeled records (labels are ignored).
pub fn predict_records(
    model: &ClassifierModel,
    records: &[SampleRecord],
    normalization: &NormalizationParams,
    batch_size: usize,
    source_name: &str,
) -> Result<PredictionSet> {
    let items: Vec<(String, PathBuf)> = records
        .iter()
        .map(|r| (r.image_id.clone(), r.image_path.clone()))
        .collect();
    predict_images(model, &items, normalization, batch_size, source_name)
}

/// Derive the plan used by one epoch of training; exposed so callers can
/// reproduce the exact sample order of a given epoch.
pub fn epoch_sample_order(
    records: &[SampleRecord],
    plan: &OversamplePlan,
    schedule_seed: u64,
    epoch: usize,
) -> Result<Vec<usize>> {
    let epoch_seed = derive_indexed_seed(schedule_seed, "epoch", epoch as u64);
    let mut sampler = seeded_rng(derive_seed(epoch_seed, "sample"));
    sample_epoch(records, plan, &mut sampler)
}

pub use augment::sample_rng as augmentation_rng;
