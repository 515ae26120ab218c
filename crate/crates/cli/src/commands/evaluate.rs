//! `derma evaluate`: score a prediction file against a ground-truth table.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use derma_core::{confusion, load_ground_truth, read_submission, MetricsReport};

use crate::config::RunConfig;

pub fn run(config: &RunConfig, predictions: &Path, truth: &Path) -> Result<()> {
    let out = config.ensure_output_dir()?;
    let predictions = read_submission(predictions, &super::file_stem(predictions))
        .with_context(|| format!("cannot read predictions {}", predictions.display()))?;
    let records = load_ground_truth(
        truth,
        &config.dataset.image_root,
        &config.dataset.image_extension,
    )
    .with_context(|| format!("cannot read ground truth {}", truth.display()))?;

    let matrix = confusion(&predictions, &records)?;
    let report = MetricsReport::compute(matrix)?;

    fs::write(out.join("metrics.kv"), report.to_key_values())?;
    fs::write(out.join("report.txt"), report.to_string())?;

    println!("{report}");
    println!("balanced accuracy (headline): {:.6}", report.balanced_accuracy);
    println!(
        "reports: {} and {}",
        out.join("metrics.kv").display(),
        out.join("report.txt").display()
    );
    Ok(())
}
