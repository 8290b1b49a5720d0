//! Confusion matrices and unweighted accuracy (mean per-class recall).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_rows(counts: Vec<Vec<u64>>) -> Result<Self> {
        let n = counts.len();
        if counts.iter().any(|r| r.len() != n) {
            return Err(Error::Config("confusion matrix must be square".into()));
        }
        Ok(Self { counts })
    }

    pub fn from_predictions(classes: usize, truth: &[usize], predicted: &[usize]) -> Result<Self> {
        let mut m = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            m.record(t, p)?;
        }
        Ok(m)
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let n = self.classes();
        for label in [truth, predicted] {
            if label >= n {
                return Err(Error::LabelOutOfRange { label, classes: n });
            }
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Recall per class; `None` for classes without true samples.
    pub fn per_class_recall(&self) -> Vec<Option<f64>> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: u64 = row.iter().sum();
                (n > 0).then(|| row[i] as f64 / n as f64)
            })
            .collect()
    }

    /// Plain accuracy: trace over total.
    pub fn accuracy(&self) -> Result<f64> {
        let total = self.total();
        if total == 0 {
            return Err(Error::EmptyConfusion);
        }
        let diag: u64 = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        Ok(diag as f64 / total as f64)
    }
}

/// Mean recall over classes that have at least one true sample.
pub fn unweighted_accuracy(confusion: &ConfusionMatrix) -> Result<f64> {
    let recalls: Vec<f64> = confusion.per_class_recall().into_iter().flatten().collect();
    if recalls.is_empty() {
        return Err(Error::EmptyConfusion);
    }
    Ok(recalls.iter().sum::<f64>() / recalls.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub confusion: ConfusionMatrix,
    pub per_class_recall: Vec<Option<f64>>,
    pub ua: f64,
    pub samples: u64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Result<Self> {
        let ua = unweighted_accuracy(&confusion)?;
        Ok(Self {
            per_class_recall: confusion.per_class_recall(),
            samples: confusion.total(),
            confusion,
            ua,
        })
    }
}
