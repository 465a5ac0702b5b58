//! Confusion-matrix metrics with macro averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<u64>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub loss: Option<f64>,
    /// Classes with no true samples. Their recall is reported as 0.
    pub absent_classes: Vec<usize>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl Metrics {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Result<Self> {
        let k = confusion.len();
        if k == 0 || confusion.iter().any(|r| r.len() != k) {
            return Err(Error::Validation(
                "confusion matrix must be square and non-empty".into(),
            ));
        }
        let support: Vec<u64> = confusion.iter().map(|r| r.iter().sum()).collect();
        let predicted: Vec<u64> = (0..k).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
        let total: u64 = support.iter().sum();
        let diag: Vec<u64> = (0..k).map(|i| confusion[i][i]).collect();

        let precision: Vec<f64> = (0..k).map(|i| ratio(diag[i], predicted[i])).collect();
        let recall: Vec<f64> = (0..k).map(|i| ratio(diag[i], support[i])).collect();
        let f1: Vec<f64> = precision
            .iter()
            .zip(&recall)
            .map(|(&p, &r)| if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 })
            .collect();
        let mean = |v: &[f64]| v.iter().sum::<f64>() / k as f64;
        Ok(Self {
            macro_precision: mean(&precision),
            macro_recall: mean(&recall),
            macro_f1: mean(&f1),
            accuracy: ratio(diag.iter().sum(), total),
            absent_classes: (0..k).filter(|&i| support[i] == 0).collect(),
            confusion,
            precision,
            recall,
            f1,
            loss: None,
        })
    }

    pub fn from_predictions(num_classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Validation(format!(
                "{} labels but {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut confusion = vec![vec![0u64; num_classes]; num_classes];
        for (&t, &p) in truth.iter().zip(predicted) {
            if t >= num_classes || p >= num_classes {
                return Err(Error::Validation(format!(
                    "class index out of range for K={num_classes}: ({t}, {p})"
                )));
            }
            confusion[t][p] += 1;
        }
        Self::from_confusion(confusion)
    }

    pub fn num_classes(&self) -> usize {
        self.confusion.len()
    }
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows(logits: &[f64], k: usize) -> Vec<usize> {
    logits
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect()
}
