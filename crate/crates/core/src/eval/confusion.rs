use std::fmt::Write as _;

use crate::error::{Error, Result};

/// `counts[t][p]`: samples of true class `t` predicted as `p`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    k: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![0; k * k],
        }
    }

    /// Builds a matrix from row-major counts.
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<Self> {
        if counts.len() != k * k {
            return Err(Error::Contract(format!(
                "{} counts do not form a {k}x{k} matrix",
                counts.len()
            )));
        }
        Ok(ConfusionMatrix { k, counts })
    }

    pub fn num_classes(&self) -> usize {
        self.k
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.k + pred]
    }

    pub fn add(&mut self, truth: usize, pred: usize) -> Result<()> {
        if truth >= self.k || pred >= self.k {
            return Err(Error::Contract(format!(
                "class pair ({truth}, {pred}) is out of range for {} classes",
                self.k
            )));
        }
        self.counts[truth * self.k + pred] += 1;
        Ok(())
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.k).map(|i| self.get(i, i)).sum()
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        (0..self.k).map(|p| self.get(truth, p)).sum()
    }

    pub fn col_sum(&self, pred: usize) -> u64 {
        (0..self.k).map(|t| self.get(t, pred)).sum()
    }

    /// Header row of predicted class names, then one row per true class.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        if class_names.len() != self.k {
            return Err(Error::Contract(format!(
                "{} class names for a {}-class matrix",
                class_names.len(),
                self.k
            )));
        }
        let mut out = String::from("true\\pred");
        for name in class_names {
            let _ = write!(out, ",{name}");
        }
        out.push('\n');
        for (t, name) in class_names.iter().enumerate() {
            out.push_str(name);
            for p in 0..self.k {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        Ok(out)
    }
}

pub fn confusion_matrix(preds: &[usize], labels: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if preds.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    let mut cm = ConfusionMatrix::new(k);
    for (&p, &t) in preds.iter().zip(labels) {
        cm.add(t, p)?;
    }
    Ok(cm)
}
