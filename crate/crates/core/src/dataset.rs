//! Ground-truth ingestion, class statistics, stratified splitting, and image
//! verification.
//!
//! The ground-truth table is comma-separated UTF-8 with the fixed header
//! `image,MEL,NV,BCC,AKIEC,BKL,DF,VASC` and one one-hot row per image.
//! Ingestion preserves file order; all shuffling happens downstream with
//! explicit seeds.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng};

/// Number of disease categories.
pub const NUM_CLASSES: usize = 7;

/// Tolerance when snapping ground-truth cells to {0, 1}.
const LABEL_TOLERANCE: f64 = 1e-9;

/// The seven disease categories, in ground-truth column order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LesionClass {
    /// Melanoma
    Mel,
    /// Melanocytic nevus
    Nv,
    /// Basal cell carcinoma
    Bcc,
    /// Actinic keratosis / intraepithelial carcinoma
    Akiec,
    /// Benign keratosis
    Bkl,
    /// Dermatofibroma
    Df,
    /// Vascular lesion
    Vasc,
}

impl LesionClass {
    /// All classes in column order; the ordinal of a class is its index here.
    pub const ALL: [LesionClass; NUM_CLASSES] = [
        LesionClass::Mel,
        LesionClass::Nv,
        LesionClass::Bcc,
        LesionClass::Akiec,
        LesionClass::Bkl,
        LesionClass::Df,
        LesionClass::Vasc,
    ];

    /// Column position in the ground-truth and submission formats.
    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn from_ordinal(ordinal: usize) -> Option<LesionClass> {
        Self::ALL.get(ordinal).copied()
    }

    /// The column code used in file headers.
    pub fn code(self) -> &'static str {
        match self {
            LesionClass::Mel => "MEL",
            LesionClass::Nv => "NV",
            LesionClass::Bcc => "BCC",
            LesionClass::Akiec => "AKIEC",
            LesionClass::Bkl => "BKL",
            LesionClass::Df => "DF",
            LesionClass::Vasc => "VASC",
        }
    }
}

impl fmt::Display for LesionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

impl FromStr for LesionClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<LesionClass> {
        LesionClass::ALL
            .into_iter()
            .find(|c| c.code() == s)
            .ok_or_else(|| Error::Schema(format!("unknown class code {s:?}")))
    }
}

/// One labeled image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleRecord {
    pub image_id: String,
    pub image_path: PathBuf,
    pub label: LesionClass,
}

impl SampleRecord {
    /// The label as a one-hot vector in column order.
    pub fn one_hot(&self) -> [f64; NUM_CLASSES] {
        let mut v = [0.0; NUM_CLASSES];
        v[self.label.ordinal()] = 1.0;
        v
    }
}

/// Per-class record counts. The total is the sum of the counts by
/// construction.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassDistribution {
    counts: [usize; NUM_CLASSES],
}

impl ClassDistribution {
    pub fn from_counts(counts: [usize; NUM_CLASSES]) -> ClassDistribution {
        ClassDistribution { counts }
    }

    pub fn count(&self, class: LesionClass) -> usize {
        self.counts[class.ordinal()]
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (LesionClass, usize)> + '_ {
        LesionClass::ALL.into_iter().map(|c| (c, self.count(c)))
    }
}

/// Expected header columns of a ground-truth table.
pub fn ground_truth_header() -> String {
    let mut header = String::from("image");
    for class in LesionClass::ALL {
        header.push(',');
        header.push_str(class.code());
    }
    header
}

fn check_header(line: &str) -> Result<()> {
    let expected: Vec<&str> = std::iter::once("image")
        .chain(LesionClass::ALL.iter().map(|c| c.code()))
        .collect();
    let got: Vec<&str> = line.split(',').map(str::trim).collect();
    for (i, want) in expected.iter().enumerate() {
        match got.get(i) {
            Some(have) if have == want => {}
            Some(have) => {
                return Err(Error::Schema(format!(
                    "header column {} is {have:?}, expected {want:?}",
                    i + 1
                )))
            }
            None => return Err(Error::Schema(format!("missing header column {want:?}"))),
        }
    }
    if got.len() > expected.len() {
        return Err(Error::Schema(format!(
            "unexpected extra header column {:?}",
            got[expected.len()]
        )));
    }
    Ok(())
}

fn parse_label_cell(cell: &str, row: usize) -> Result<bool> {
    let value: f64 = cell.trim().parse().map_err(|_| Error::MalformedLabel {
        row,
        message: format!("cell {cell:?} is not numeric"),
    })?;
    if (value - 1.0).abs() <= LABEL_TOLERANCE {
        Ok(true)
    } else if value.abs() <= LABEL_TOLERANCE {
        Ok(false)
    } else {
        Err(Error::MalformedLabel {
            row,
            message: format!("cell value {value} is neither 0 nor 1"),
        })
    }
}

/// Parse one ground-truth table. `image_path` of each record is
/// `image_root/<image_id><extension>`; rows come back in file order.
pub fn load_ground_truth(
    path: &Path,
    image_root: &Path,
    extension: &str,
) -> Result<Vec<SampleRecord>> {
    let text = fs::read_to_string(path)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))?;
    check_header(header)?;

    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for (row, line) in lines.enumerate() {
        let row = row + 1; // 1-based data row
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != NUM_CLASSES + 1 {
            return Err(Error::Schema(format!(
                "data row {row} has {} fields, expected {}",
                fields.len(),
                NUM_CLASSES + 1
            )));
        }
        let image_id = fields[0].trim().to_string();
        if image_id.is_empty() {
            return Err(Error::MalformedLabel {
                row,
                message: "empty image id".to_string(),
            });
        }
        let mut label = None;
        let mut ones = 0usize;
        for (ordinal, cell) in fields[1..].iter().enumerate() {
            if parse_label_cell(cell, row)? {
                ones += 1;
                label = LesionClass::from_ordinal(ordinal);
            }
        }
        if ones != 1 {
            return Err(Error::MalformedLabel {
                row,
                message: format!("row has {ones} entries equal to 1, expected exactly 1"),
            });
        }
        if !seen.insert(image_id.clone()) {
            return Err(Error::DuplicateImageId(image_id));
        }
        let image_path = image_root.join(format!("{image_id}{extension}"));
        records.push(SampleRecord {
            image_id,
            image_path,
            label: label.expect("one-hot position checked above"),
        });
    }
    Ok(records)
}

/// Load and concatenate several ground-truth tables, enforcing image-id
/// uniqueness across all of them.
pub fn merge_ground_truth(
    paths: &[PathBuf],
    image_root: &Path,
    extension: &str,
) -> Result<Vec<SampleRecord>> {
    let mut records = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for path in paths {
        for record in load_ground_truth(path, image_root, extension)? {
            if !seen.insert(record.image_id.clone()) {
                return Err(Error::DuplicateImageId(record.image_id));
            }
            records.push(record);
        }
    }
    Ok(records)
}

/// Count records per class.
pub fn class_distribution(records: &[SampleRecord]) -> ClassDistribution {
    let mut counts = [0usize; NUM_CLASSES];
    for record in records {
        counts[record.label.ordinal()] += 1;
    }
    ClassDistribution { counts }
}

/// Deterministic stratified split. Per class, `round(count * holdout_fraction)`
/// records (at least 1, and at most `count - 1` so no class vanishes from
/// either side) go to the holdout. Both outputs preserve input order.
pub fn stratified_split(
    records: &[SampleRecord],
    holdout_fraction: f64,
    seed: u64,
) -> Result<(Vec<SampleRecord>, Vec<SampleRecord>)> {
    if !(holdout_fraction > 0.0 && holdout_fraction < 1.0) {
        return Err(Error::Dimension(format!(
            "holdout fraction {holdout_fraction} must lie in (0, 1)"
        )));
    }
    let mut by_class: [Vec<usize>; NUM_CLASSES] = Default::default();
    for (index, record) in records.iter().enumerate() {
        by_class[record.label.ordinal()].push(index);
    }
    for class in LesionClass::ALL {
        if by_class[class.ordinal()].len() < 2 {
            return Err(Error::InsufficientClass(class));
        }
    }

    let mut rng = seeded_rng(derive_seed(seed, "stratified_split"));
    let mut holdout_indices: Vec<usize> = Vec::new();
    for class in LesionClass::ALL {
        let mut indices = by_class[class.ordinal()].clone();
        let count = indices.len();
        let take = ((count as f64 * holdout_fraction).round() as usize).clamp(1, count - 1);
        indices.shuffle(&mut rng);
        holdout_indices.extend(indices.into_iter().take(take));
    }
    let holdout_set: HashSet<usize> = holdout_indices.iter().copied().collect();

    let mut train = Vec::with_capacity(records.len() - holdout_set.len());
    let mut holdout = Vec::with_capacity(holdout_set.len());
    for (index, record) in records.iter().enumerate() {
        if holdout_set.contains(&index) {
            holdout.push(record.clone());
        } else {
            train.push(record.clone());
        }
    }
    Ok((train, holdout))
}

/// Why an image failed verification.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum ImageProblem {
    Missing,
    Unreadable,
}

/// Result of probing every record's image file.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VerificationReport {
    /// `(image_id, problem)` pairs, sorted by image id.
    pub problems: Vec<(String, ImageProblem)>,
}

impl VerificationReport {
    pub fn is_empty(&self) -> bool {
        self.problems.is_empty()
    }
}

impl fmt::Display for VerificationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (image_id, problem) in &self.problems {
            match problem {
                ImageProblem::Missing => writeln!(f, "MISSING {image_id}")?,
                ImageProblem::Unreadable => writeln!(f, "UNREADABLE {image_id}")?,
            }
        }
        Ok(())
    }
}

/// Probe every record's image path. Problems are reported, never thrown; an
/// empty report means every image exists and decodes.
pub fn verify_images(records: &[SampleRecord]) -> VerificationReport {
    let mut problems: Vec<(String, ImageProblem)> = records
        .par_iter()
        .filter_map(|record| {
            if !record.image_path.exists() {
                return Some((record.image_id.clone(), ImageProblem::Missing));
            }
            match image::open(&record.image_path) {
                Ok(_) => None,
                Err(_) => Some((record.image_id.clone(), ImageProblem::Unreadable)),
            }
        })
        .collect();
    problems.sort();
    VerificationReport { problems }
}

/// Write one image id per line.
pub fn write_manifest(ids: &[String], path: &Path) -> Result<()> {
    let mut body = String::new();
    for id in ids {
        body.push_str(id);
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| Error::Persistence {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a manifest written by [`write_manifest`]; blank lines are skipped.
pub fn read_manifest(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path)?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|line| !line.is_empty())
        .map(str::to_string)
        .collect())
}
