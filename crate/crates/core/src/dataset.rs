//! Binary prediction/label pairs and the multi-class → binary reductions.

use serde::{Deserialize, Serialize};

use crate::error::{CalibError, Result};

/// Paired predicted probabilities and binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinaryDataset {
    predictions: Vec<f64>,
    labels: Vec<u8>,
}

impl BinaryDataset {
    pub fn new(predictions: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(CalibError::format(format!(
                "{} predictions but {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        if predictions.is_empty() {
            return Err(CalibError::domain("dataset must contain at least one instance"));
        }
        if let Some(i) = predictions.iter().position(|p| !(0.0..=1.0).contains(p)) {
            return Err(CalibError::format(format!(
                "prediction {} at index {i} is outside [0,1]",
                predictions[i]
            )));
        }
        if let Some(i) = labels.iter().position(|&y| y > 1) {
            return Err(CalibError::format(format!("label {} at index {i} is not 0 or 1", labels[i])));
        }
        Ok(Self { predictions, labels })
    }

    /// Builds a dataset from float labels, rejecting anything but exactly 0.0 or 1.0.
    pub fn from_f64_labels(predictions: Vec<f64>, labels: &[f64]) -> Result<Self> {
        let labels = labels
            .iter()
            .enumerate()
            .map(|(i, &y)| match y {
                0.0 => Ok(0),
                1.0 => Ok(1),
                _ => Err(CalibError::format(format!("label {y} at index {i} is not 0 or 1"))),
            })
            .collect::<Result<Vec<u8>>>()?;
        Self::new(predictions, labels)
    }

    pub fn len(&self) -> usize {
        self.predictions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predictions.is_empty()
    }

    pub fn predictions(&self) -> &[f64] {
        &self.predictions
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.predictions.iter().zip(&self.labels).map(|(&p, &y)| (p, y as f64))
    }

    pub fn label_mean(&self) -> f64 {
        self.labels.iter().map(|&y| y as f64).sum::<f64>() / self.len() as f64
    }

    pub fn has_both_classes(&self) -> bool {
        self.labels.contains(&0) && self.labels.contains(&1)
    }

    /// Rows at `indices`, in that order. Panics on an out-of-range index.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let predictions = indices.iter().map(|&i| self.predictions[i]).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        Self::new(predictions, labels)
    }

    /// Copy sorted by prediction ascending (stable, so ties keep input order).
    pub fn sorted(&self) -> Self {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| self.predictions[a].total_cmp(&self.predictions[b]));
        Self {
            predictions: order.iter().map(|&i| self.predictions[i]).collect(),
            labels: order.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

/// How a multi-class prediction matrix is reduced to a binary task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Class `k` against all others.
    OneVsRest(usize),
    /// Top-class probability against top-class correctness.
    Confidence,
}

impl std::str::FromStr for Reduction {
    type Err = CalibError;

    fn from_str(s: &str) -> Result<Self> {
        if s == "confidence" {
            return Ok(Reduction::Confidence);
        }
        if let Some(k) = s.strip_prefix("ovr:") {
            return k
                .parse()
                .map(Reduction::OneVsRest)
                .map_err(|_| CalibError::domain(format!("bad class index in `{s}`")));
        }
        Err(CalibError::domain(format!("unknown reduction `{s}` (expected confidence|ovr:<k>)")))
    }
}

const ROW_SUM_TOLERANCE: f64 = 1e-6;

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

pub fn reduce_multiclass(probs: &[Vec<f64>], labels: &[usize], mode: Reduction) -> Result<BinaryDataset> {
    if probs.len() != labels.len() {
        return Err(CalibError::format(format!("{} rows but {} labels", probs.len(), labels.len())));
    }
    let mut preds = Vec::with_capacity(probs.len());
    let mut ys = Vec::with_capacity(probs.len());
    for (i, (row, &label)) in probs.iter().zip(labels).enumerate() {
        if row.is_empty() {
            return Err(CalibError::format(format!("row {i} has no classes")));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
            return Err(CalibError::format(format!("row {i} sums to {sum}, not 1")));
        }
        if label >= row.len() {
            return Err(CalibError::format(format!(
                "label {label} at row {i} is not a valid class index for {} classes",
                row.len()
            )));
        }
        match mode {
            Reduction::OneVsRest(k) => {
                if k >= row.len() {
                    return Err(CalibError::domain(format!("class {k} does not exist ({} classes)", row.len())));
                }
                preds.push(row[k]);
                ys.push(u8::from(label == k));
            }
            Reduction::Confidence => {
                let top = argmax(row);
                preds.push(row[top]);
                ys.push(u8::from(label == top));
            }
        }
    }
    BinaryDataset::new(preds, ys)
}
