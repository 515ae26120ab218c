//! `derma prepare`: ingest ground truth, report the class distribution,
//! write deterministic split manifests, and verify every image file.

use std::fs;

use anyhow::{Context, Result};
use derma_core::{class_distribution, stratified_split, verify_images, write_manifest, LesionClass};

use crate::config::RunConfig;

pub fn run(config: &RunConfig) -> Result<()> {
    let out = config.ensure_output_dir()?;
    let records = super::load_records(config)?;

    let dist = class_distribution(&records);
    let mut table = String::from("class,count\n");
    for class in LesionClass::ALL {
        table.push_str(&format!("{class},{}\n", dist.count(class)));
    }
    table.push_str(&format!("total,{}\n", dist.total()));
    let dist_path = out.join("distribution.csv");
    fs::write(&dist_path, &table)
        .with_context(|| format!("cannot write {}", dist_path.display()))?;

    let (train, holdout) = stratified_split(
        &records,
        config.dataset.holdout_fraction,
        config.dataset.split_seed,
    )?;
    let train_ids: Vec<String> = train.iter().map(|r| r.image_id.clone()).collect();
    let holdout_ids: Vec<String> = holdout.iter().map(|r| r.image_id.clone()).collect();
    write_manifest(&train_ids, &out.join("manifest_train.txt"))?;
    write_manifest(&holdout_ids, &out.join("manifest_holdout.txt"))?;

    let report = verify_images(&records);
    fs::write(out.join("verify.txt"), report.to_string())?;

    println!("{table}");
    println!(
        "split: {} train / {} holdout (fraction {}, seed {})",
        train.len(),
        holdout.len(),
        config.dataset.holdout_fraction,
        config.dataset.split_seed
    );
    if report.is_empty() {
        println!("image verification: all {} images readable", records.len());
    } else {
        println!(
            "image verification: {} problem(s), see {}",
            report.problems.len(),
            out.join("verify.txt").display()
        );
    }
    println!("outputs written to {}", out.display());
    Ok(())
}
