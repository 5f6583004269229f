use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Micro-average ROC: every (sample, class) pair is one binary decision
/// scored by the predicted probability of that class.
#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, thresholds descending.
    pub points: Vec<(f64, f64)>,
    /// Threshold of each point after the first.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("fpr,tpr\n");
        for (f, t) in &self.points {
            let _ = writeln!(out, "{f:.6},{t:.6}");
        }
        out
    }
}

/// `(score, is_positive)` pairs after validation.
fn decisions<S: AsRef<[f64]>>(scores: &[S], labels: &[usize]) -> Result<Vec<(f64, bool)>> {
    if scores.is_empty() {
        return Err(Error::Contract("ROC needs at least one sample".into()));
    }
    if scores.len() != labels.len() {
        return Err(Error::Contract(format!(
            "{} score rows for {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let k = scores[0].as_ref().len();
    if k < 2 {
        return Err(Error::Contract(format!("ROC needs at least 2 classes, got {k}")));
    }
    let mut out = Vec::with_capacity(scores.len() * k);
    for (i, (row, &label)) in scores.iter().zip(labels).enumerate() {
        let row = row.as_ref();
        if row.len() != k {
            return Err(Error::Contract(format!("score row {i} has {} entries, expected {k}", row.len())));
        }
        if label >= k {
            return Err(Error::Contract(format!("label {label} is out of range for {k} classes")));
        }
        if let Some(v) = row.iter().find(|v| !v.is_finite()) {
            return Err(Error::Contract(format!("score row {i} contains {v}")));
        }
        out.extend(row.iter().enumerate().map(|(c, &s)| (s, c == label)));
    }
    Ok(out)
}

/// Threshold sweep over the distinct scores, AUC by the trapezoid rule.
pub fn roc_auc_micro<S: AsRef<[f64]>>(scores: &[S], labels: &[usize]) -> Result<RocCurve> {
    let mut d = decisions(scores, labels)?;
    d.sort_by(|a, b| b.0.total_cmp(&a.0));
    let pos = d.iter().filter(|x| x.1).count() as f64;
    let neg = d.len() as f64 - pos;
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut auc = 0.0;
    let mut i = 0;
    while i < d.len() {
        let threshold = d[i].0;
        while i < d.len() && d[i].0 == threshold {
            if d[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let p = (fp as f64 / neg, tp as f64 / pos);
        let (x0, y0) = points[points.len() - 1];
        auc += (p.0 - x0) * (p.1 + y0) / 2.0;
        points.push(p);
        thresholds.push(threshold);
    }
    Ok(RocCurve { points, thresholds, auc })
}

/// ROC of a `[N, K]` probability matrix.
pub fn roc_from_probs<T: Scalar>(probs: &Tensor<T>, labels: &[usize]) -> Result<RocCurve> {
    if probs.rank() != 2 {
        return Err(Error::Contract(format!("expected [N, K] scores, got {:?}", probs.shape())));
    }
    let rows: Vec<Vec<f64>> = probs
        .data()
        .chunks(probs.shape()[1])
        .map(|r| r.iter().map(|v| v.as_f64()).collect())
        .collect();
    roc_auc_micro(&rows, labels)
}

/// AUC as the probability that a positive decision outscores a negative
/// one, ties counting one half. Quadratic in the number of decisions.
pub fn pairwise_auc<S: AsRef<[f64]>>(scores: &[S], labels: &[usize]) -> Result<f64> {
    let d = decisions(scores, labels)?;
    let (mut wins, mut pairs) = (0.0, 0.0);
    for &(sp, _) in d.iter().filter(|x| x.1) {
        for &(sn, _) in d.iter().filter(|x| !x.1) {
            pairs += 1.0;
            if sp > sn {
                wins += 1.0;
            } else if sp == sn {
                wins += 0.5;
            }
        }
    }
    Ok(wins / pairs)
}
