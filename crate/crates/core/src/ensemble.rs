//! Fusion of per-model probability outputs into a single prediction set.

use std::collections::BTreeMap;

use crate::dataset::NUM_CLASSES;
use crate::error::{Error, Result};
use crate::model::ProbabilityVector;

/// Per-image probability vectors from one model, one run, or an ensemble.
/// Entries are keyed (and iterated) by image id.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSet {
    source_name: String,
    entries: BTreeMap<String, ProbabilityVector>,
}

impl PredictionSet {
    pub fn from_entries(
        source_name: &str,
        entries: impl IntoIterator<Item = (String, ProbabilityVector)>,
    ) -> Result<PredictionSet> {
        let mut map = BTreeMap::new();
        for (image_id, vector) in entries {
            if map.insert(image_id.clone(), vector).is_some() {
                return Err(Error::DuplicateImageId(image_id));
            }
        }
        Ok(PredictionSet {
            source_name: source_name.to_string(),
            entries: map,
        })
    }

    pub fn source_name(&self) -> &str {
        &self.source_name
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, image_id: &str) -> Option<&ProbabilityVector> {
        self.entries.get(image_id)
    }

    /// Entries in image-id order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &ProbabilityVector)> {
        self.entries.iter().map(|(id, v)| (id.as_str(), v))
    }

    pub fn image_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }
}

/// How member probabilities are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FusionMode {
    /// Weighted arithmetic mean of probabilities (the default).
    #[default]
    Arithmetic,
    /// Weighted geometric mean, renormalized.
    Geometric,
}

/// Fuse member predictions image by image. All members must cover the same
/// image ids; weights default to uniform and must be strictly positive.
pub fn fuse(
    members: &[PredictionSet],
    weights: Option<&[f64]>,
    mode: FusionMode,
) -> Result<PredictionSet> {
    let first = members
        .first()
        .ok_or_else(|| Error::EmptyInput("ensemble needs at least one member".to_string()))?;

    let weights: Vec<f64> = match weights {
        Some(w) => {
            if w.len() != members.len() {
                return Err(Error::Weight(format!(
                    "{} weights for {} members",
                    w.len(),
                    members.len()
                )));
            }
            for &value in w {
                if !(value > 0.0 && value.is_finite()) {
                    return Err(Error::Weight(format!(
                        "weight {value} must be positive and finite"
                    )));
                }
            }
            w.to_vec()
        }
        None => vec![1.0; members.len()],
    };
    let weight_sum: f64 = weights.iter().sum();

    for member in &members[1..] {
        let missing: Vec<String> = first
            .image_ids()
            .filter(|id| member.get(id).is_none())
            .map(str::to_string)
            .collect();
        let extra: Vec<String> = member
            .image_ids()
            .filter(|id| first.get(id).is_none())
            .map(str::to_string)
            .collect();
        if !missing.is_empty() || !extra.is_empty() {
            return Err(Error::Coverage { missing, extra });
        }
    }

    let mut entries = Vec::with_capacity(first.len());
    for (image_id, _) in first.iter() {
        let mut combined = [0.0f64; NUM_CLASSES];
        for (member, &weight) in members.iter().zip(&weights) {
            let values = member
                .get(image_id)
                .expect("coverage checked above")
                .values();
            for (acc, &p) in combined.iter_mut().zip(&values) {
                match mode {
                    FusionMode::Arithmetic => *acc += weight * p,
                    FusionMode::Geometric => *acc += weight * p.max(1e-12).ln(),
                }
            }
        }
        if mode == FusionMode::Geometric {
            for value in &mut combined {
                *value = (*value / weight_sum).exp();
            }
        }
        let sum: f64 = combined.iter().sum();
        for value in &mut combined {
            *value /= sum;
        }
        entries.push((image_id.to_string(), ProbabilityVector::new(combined)?));
    }

    let joined = members
        .iter()
        .map(PredictionSet::source_name)
        .collect::<Vec<_>>()
        .join(",");
    PredictionSet::from_entries(&format!("ensemble({joined})"), entries)
}
