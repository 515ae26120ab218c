//! `derma predict`: deterministic inference over a manifest of image ids,
//! written as a challenge-format submission file.

use std::path::{Path, PathBuf};

use anyhow::{ensure, Context, Result};
use derma_core::{load_checkpoint, predict_images, read_manifest, write_submission};

use crate::config::RunConfig;

pub fn run(config: &RunConfig, checkpoint: &Path, manifest: &Path) -> Result<()> {
    let out = config.ensure_output_dir()?;
    let loaded = load_checkpoint(checkpoint)
        .with_context(|| format!("cannot load checkpoint {}", checkpoint.display()))?;
    let model = loaded.build_model()?;

    let ids = read_manifest(manifest)
        .with_context(|| format!("cannot read manifest {}", manifest.display()))?;
    ensure!(!ids.is_empty(), "manifest {} is empty", manifest.display());

    let items: Vec<(String, PathBuf)> = ids
        .into_iter()
        .map(|id| {
            let path = config
                .dataset
                .image_root
                .join(format!("{id}{}", config.dataset.image_extension));
            (id, path)
        })
        .collect();

    let source_name = super::file_stem(checkpoint);
    let predictions = predict_images(
        &model,
        &items,
        &config.normalization(),
        config.train.batch_size,
        &source_name,
    )?;

    let path = out.join("predictions.csv");
    write_submission(&predictions, &path)?;
    println!(
        "wrote {} prediction(s) from {} to {}",
        predictions.len(),
        loaded.descriptor.name,
        path.display()
    );
    Ok(())
}
