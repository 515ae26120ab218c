//! Scoring predictions against ground truth and reading/writing
//! challenge-format submission files.
//!
//! The headline score is balanced multiclass accuracy (mean per-class
//! recall); plain accuracy, per-class sensitivity/specificity, and the full
//! confusion matrix are always reported alongside it.

use std::fmt;
use std::fs;
use std::path::Path;

use crate::dataset::{ground_truth_header, LesionClass, SampleRecord, NUM_CLASSES};
use crate::ensemble::PredictionSet;
use crate::error::{Error, Result};
use crate::model::ProbabilityVector;

/// 7x7 count grid; rows are the true class, columns the predicted argmax.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ConfusionMatrix {
    cells: [[usize; NUM_CLASSES]; NUM_CLASSES],
}

impl ConfusionMatrix {
    pub fn new() -> ConfusionMatrix {
        ConfusionMatrix::default()
    }

    pub fn increment(&mut self, truth: LesionClass, predicted: LesionClass) {
        self.cells[truth.ordinal()][predicted.ordinal()] += 1;
    }

    pub fn get(&self, truth: LesionClass, predicted: LesionClass) -> usize {
        self.cells[truth.ordinal()][predicted.ordinal()]
    }

    pub fn row_sum(&self, truth: LesionClass) -> usize {
        self.cells[truth.ordinal()].iter().sum()
    }

    pub fn column_sum(&self, predicted: LesionClass) -> usize {
        self.cells.iter().map(|row| row[predicted.ordinal()]).sum()
    }

    pub fn total(&self) -> usize {
        self.cells.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..NUM_CLASSES).map(|i| self.cells[i][i]).sum()
    }
}

impl fmt::Display for ConfusionMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:>7}", "t\\p")?;
        for class in LesionClass::ALL {
            write!(f, "{:>7}", class.code())?;
        }
        writeln!(f)?;
        for truth in LesionClass::ALL {
            write!(f, "{:>7}", truth.code())?;
            for predicted in LesionClass::ALL {
                write!(f, "{:>7}", self.get(truth, predicted))?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Tally argmax predictions against the truth. Ties break to the lowest class
/// ordinal and are logged.
pub fn confusion(predictions: &PredictionSet, truth: &[SampleRecord]) -> Result<ConfusionMatrix> {
    let missing: Vec<String> = truth
        .iter()
        .filter(|r| predictions.get(&r.image_id).is_none())
        .map(|r| r.image_id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage {
            missing,
            extra: Vec::new(),
        });
    }
    let mut matrix = ConfusionMatrix::new();
    for record in truth {
        let vector = predictions
            .get(&record.image_id)
            .expect("coverage checked above");
        let (predicted, tied) = vector.argmax();
        if tied {
            log::warn!(
                "argmax tie for image {}; resolved to lowest ordinal ({predicted})",
                record.image_id
            );
        }
        matrix.increment(record.label, predicted);
    }
    Ok(matrix)
}

/// Mean per-class recall over the classes that appear in the truth. Classes
/// with empty rows are excluded from the mean with a warning.
pub fn balanced_accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    if matrix.total() == 0 {
        return Err(Error::EmptyInput(
            "confusion matrix has no samples".to_string(),
        ));
    }
    let mut recall_sum = 0.0;
    let mut present = 0usize;
    for class in LesionClass::ALL {
        let row = matrix.row_sum(class);
        if row == 0 {
            log::warn!("class {class} absent from truth; excluded from balanced accuracy");
            continue;
        }
        recall_sum += matrix.get(class, class) as f64 / row as f64;
        present += 1;
    }
    Ok(recall_sum / present as f64)
}

/// Fraction of correct argmax predictions.
pub fn accuracy(matrix: &ConfusionMatrix) -> Result<f64> {
    let total = matrix.total();
    if total == 0 {
        return Err(Error::EmptyInput(
            "confusion matrix has no samples".to_string(),
        ));
    }
    Ok(matrix.trace() as f64 / total as f64)
}

/// One-vs-rest metrics for a class. A ratio with a zero denominator is
/// reported as absent, never as zero.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PerClassMetrics {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

/// Sensitivity (TP / (TP+FN)) and specificity (TN / (TN+FP)) per class.
pub fn per_class_metrics(matrix: &ConfusionMatrix) -> [PerClassMetrics; NUM_CLASSES] {
    let total = matrix.total();
    let mut out = [PerClassMetrics::default(); NUM_CLASSES];
    for class in LesionClass::ALL {
        let tp = matrix.get(class, class);
        let row = matrix.row_sum(class);
        let column = matrix.column_sum(class);
        let fn_count = row - tp;
        let fp = column - tp;
        let tn = total - tp - fn_count - fp;
        let metrics = &mut out[class.ordinal()];
        if tp + fn_count > 0 {
            metrics.sensitivity = Some(tp as f64 / (tp + fn_count) as f64);
        }
        if tn + fp > 0 {
            metrics.specificity = Some(tn as f64 / (tn + fp) as f64);
        }
    }
    out
}

/// Full evaluation bundle for one prediction set.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub balanced_accuracy: f64,
    pub per_class: [PerClassMetrics; NUM_CLASSES],
    pub confusion: ConfusionMatrix,
    pub n: usize,
}

impl MetricsReport {
    pub fn compute(matrix: ConfusionMatrix) -> Result<MetricsReport> {
        Ok(MetricsReport {
            accuracy: accuracy(&matrix)?,
            balanced_accuracy: balanced_accuracy(&matrix)?,
            per_class: per_class_metrics(&matrix),
            n: matrix.total(),
            confusion: matrix,
        })
    }

    /// Structured `key=value` form; absent ratios are omitted.
    pub fn to_key_values(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("n={}\n", self.n));
        out.push_str(&format!("accuracy={:.6}\n", self.accuracy));
        out.push_str(&format!("balanced_accuracy={:.6}\n", self.balanced_accuracy));
        for class in LesionClass::ALL {
            let metrics = self.per_class[class.ordinal()];
            if let Some(s) = metrics.sensitivity {
                out.push_str(&format!("sensitivity.{class}={s:.6}\n"));
            }
            if let Some(s) = metrics.specificity {
                out.push_str(&format!("specificity.{class}={s:.6}\n"));
            }
        }
        for truth in LesionClass::ALL {
            for predicted in LesionClass::ALL {
                out.push_str(&format!(
                    "confusion.{truth}.{predicted}={}\n",
                    self.confusion.get(truth, predicted)
                ));
            }
        }
        out
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "samples: {}", self.n)?;
        writeln!(f, "balanced accuracy: {:.6}", self.balanced_accuracy)?;
        writeln!(f, "accuracy: {:.6}", self.accuracy)?;
        writeln!(f)?;
        writeln!(f, "{:>7}{:>14}{:>14}", "class", "sensitivity", "specificity")?;
        let fmt_opt = |v: Option<f64>| match v {
            Some(v) => format!("{v:.6}"),
            None => "-".to_string(),
        };
        for class in LesionClass::ALL {
            let metrics = self.per_class[class.ordinal()];
            writeln!(
                f,
                "{:>7}{:>14}{:>14}",
                class.code(),
                fmt_opt(metrics.sensitivity),
                fmt_opt(metrics.specificity)
            )?;
        }
        writeln!(f)?;
        write!(f, "{}", self.confusion)
    }
}

/// Write a challenge submission: fixed header, rows sorted by image id,
/// probabilities with six decimal places. Byte-stable for identical inputs.
pub fn write_submission(predictions: &PredictionSet, path: &Path) -> Result<()> {
    let mut body = ground_truth_header();
    body.push('\n');
    for (image_id, vector) in predictions.iter() {
        body.push_str(image_id);
        for value in vector.values() {
            body.push_str(&format!(",{value:.6}"));
        }
        body.push('\n');
    }
    fs::write(path, body).map_err(|source| Error::Persistence {
        path: path.to_path_buf(),
        source,
    })
}

/// Read a submission file written by [`write_submission`] (or produced by any
/// compatible tool). Probabilities are taken as printed — six-decimal
/// rounding keeps them within 5e-7 of what was written — and each row's sum
/// is validated against [`ProbabilityVector::FILE_SUM_TOLERANCE`].
pub fn read_submission(path: &Path, source_name: &str) -> Result<PredictionSet> {
    let text = fs::read_to_string(path)?;
    let text = text.strip_prefix('\u{feff}').unwrap_or(&text);
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema(format!("{} is empty", path.display())))?;
    if header.trim_end() != ground_truth_header() {
        return Err(Error::Schema(format!(
            "submission header {header:?} does not match {:?}",
            ground_truth_header()
        )));
    }
    let mut entries = Vec::new();
    for (row, line) in lines.enumerate() {
        let row = row + 1;
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
        let mut values = [0.0f64; NUM_CLASSES];
        for (value, cell) in values.iter_mut().zip(&fields[1..]) {
            *value = cell.trim().parse().map_err(|_| {
                Error::Schema(format!("data row {row}: cell {cell:?} is not numeric"))
            })?;
            if !value.is_finite() || *value < 0.0 {
                return Err(Error::Schema(format!(
                    "data row {row}: probability {value} out of range"
                )));
            }
        }
        let vector = ProbabilityVector::from_submission_row(values)
            .map_err(|e| Error::Schema(format!("data row {row}: {e}")))?;
        entries.push((fields[0].trim().to_string(), vector));
    }
    PredictionSet::from_entries(source_name, entries)
}
