pub mod ensemble;
pub mod evaluate;
pub mod predict;
pub mod prepare;
pub mod train;

use std::collections::HashMap;
use std::path::Path;

use anyhow::{Context, Result};
use derma_core::{merge_ground_truth, read_manifest, SampleRecord};

use crate::config::RunConfig;

/// Load the merged ground truth for a config.
pub fn load_records(config: &RunConfig) -> Result<Vec<SampleRecord>> {
    let records = merge_ground_truth(
        &config.dataset.ground_truth,
        &config.dataset.image_root,
        &config.dataset.image_extension,
    )?;
    anyhow::ensure!(!records.is_empty(), "ground truth contains no rows");
    Ok(records)
}

/// Resolve a split manifest back to ground-truth records.
pub fn records_for_manifest(
    manifest: &Path,
    records: &[SampleRecord],
) -> Result<Vec<SampleRecord>> {
    let by_id: HashMap<&str, &SampleRecord> = records
        .iter()
        .map(|r| (r.image_id.as_str(), r))
        .collect();
    read_manifest(manifest)
        .with_context(|| format!("cannot read split manifest {}", manifest.display()))?
        .into_iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|&r| r.clone())
                .with_context(|| format!("manifest id {id} is not in the ground truth"))
        })
        .collect()
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
