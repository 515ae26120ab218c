//! `derma ensemble`: fuse prediction files into one submission.

use std::path::PathBuf;

use anyhow::{ensure, Context, Result};
use derma_core::{fuse, read_submission, write_submission, PredictionSet};

use crate::config::RunConfig;

pub fn run(config: &RunConfig, files: &[PathBuf]) -> Result<()> {
    let out = config.ensure_output_dir()?;
    let files: Vec<PathBuf> = if files.is_empty() {
        config.ensemble.members.clone()
    } else {
        files.to_vec()
    };
    ensure!(
        !files.is_empty(),
        "no prediction files: pass them as arguments or set [ensemble] members"
    );

    let members: Vec<PredictionSet> = files
        .iter()
        .map(|path| {
            read_submission(path, &super::file_stem(path))
                .with_context(|| format!("cannot read predictions {}", path.display()))
        })
        .collect::<Result<_>>()?;

    let weights = (!config.ensemble.weights.is_empty()).then_some(&config.ensemble.weights[..]);
    let fused = fuse(&members, weights, config.ensemble.mode)?;

    let path = out.join("ensemble.csv");
    write_submission(&fused, &path)?;
    println!(
        "fused {} member(s) into {} ({} images, {:?} mean)",
        members.len(),
        path.display(),
        fused.len(),
        config.ensemble.mode
    );
    Ok(())
}
