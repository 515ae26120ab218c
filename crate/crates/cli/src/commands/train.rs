//! `derma train`: run the two-phase fine-tuning schedule against the
//! prepared split, writing checkpoints, the epoch log, and training curves.

use std::fs;

use anyhow::{ensure, Context, Result};
use derma_core::rng::derive_seed;
use derma_core::{
    build_classifier, build_oversample_plan, class_distribution, history_to_csv,
    BackboneDescriptor, TrainData, Trainer,
};

use crate::config::RunConfig;
use crate::plot;

pub fn run(config: &RunConfig, backbone_override: Option<&str>) -> Result<()> {
    let out = config.ensure_output_dir()?.to_path_buf();
    let backbone_name = backbone_override.unwrap_or(&config.model.backbone);
    let descriptor = BackboneDescriptor::lookup(backbone_name)?;

    let train_manifest = out.join("manifest_train.txt");
    let holdout_manifest = out.join("manifest_holdout.txt");
    for manifest in [&train_manifest, &holdout_manifest] {
        ensure!(
            manifest.is_file(),
            "missing split manifest {} (run `derma prepare` first)",
            manifest.display()
        );
    }

    let records = super::load_records(config)?;
    let train_records = super::records_for_manifest(&train_manifest, &records)?;
    let holdout_records = super::records_for_manifest(&holdout_manifest, &records)?;

    let plan = build_oversample_plan(
        &class_distribution(&train_records),
        config.oversample.epoch_size,
    )?;
    let model = build_classifier(
        &descriptor,
        config.hidden_dim(),
        derive_seed(config.train.seed, "init"),
    )?;
    log::info!(
        "training {} ({} parameters, {} trainable in phase 1)",
        descriptor.name,
        model.parameter_count(),
        model.trainable_parameter_count()
    );

    let mut trainer = Trainer::new(
        model,
        config.train,
        config.augment.clone(),
        plan,
        config.normalization(),
    )?;
    trainer.run(
        &TrainData {
            train: &train_records,
            holdout: &holdout_records,
        },
        Some(&out),
    )?;

    let history = trainer.history();
    let history_path = out.join("history.csv");
    fs::write(&history_path, history_to_csv(history))
        .with_context(|| format!("cannot write {}", history_path.display()))?;

    let loss_points: Vec<(f64, f64)> = history
        .iter()
        .map(|r| (r.epoch as f64, r.train_loss))
        .collect();
    let score_points: Vec<(f64, f64)> = history
        .iter()
        .map(|r| (r.epoch as f64, r.validation_score))
        .collect();
    plot::write_line_chart(
        &out.join("loss.svg"),
        &format!("{backbone_name}: training loss"),
        "epoch",
        "mean cross-entropy",
        &loss_points,
    )?;
    plot::write_line_chart(
        &out.join("val_score.svg"),
        &format!("{backbone_name}: validation score"),
        "epoch",
        "balanced accuracy",
        &score_points,
    )?;

    println!(
        "trained {} for {} epoch(s); best balanced accuracy {:.6} at epoch {}",
        backbone_name,
        history.len(),
        trainer.best_score(),
        trainer.best_epoch()
    );
    println!(
        "checkpoints: {} (best), {} (resumable)",
        out.join("best.ckpt").display(),
        out.join("last.ckpt").display()
    );
    println!(
        "history: {} | curves: {}, {}",
        history_path.display(),
        out.join("loss.svg").display(),
        out.join("val_score.svg").display()
    );
    Ok(())
}
