//! Confusion matrices, macro-averaged classification metrics, micro-average
//! ROC curves, and their CSV/SVG renderings.

mod confusion;
mod metrics;
mod plot;
mod roc;

pub use confusion::{confusion_matrix, ConfusionMatrix};
pub use metrics::{classification_metrics, ClassMetrics, MetricValue, MetricsReport};
pub use plot::{loss_curves_svg, roc_svg, LinePlot, Series};
pub use roc::{pairwise_auc, roc_auc_micro, roc_from_probs, RocCurve};

use crate::error::{Error, Result};
use crate::tensor::{argmax, Tensor};

/// Metrics and micro ROC for a `[N, K]` probability matrix.
pub fn evaluate_probs(probs: &Tensor<f32>, labels: &[usize]) -> Result<(MetricsReport, RocCurve)> {
    if probs.rank() != 2 || probs.shape()[0] != labels.len() {
        return Err(Error::Contract(format!(
            "{} labels for probabilities of shape {:?}",
            labels.len(),
            probs.shape()
        )));
    }
    let k = probs.shape()[1];
    let preds: Vec<usize> = probs.data().chunks(k).map(argmax).collect();
    let cm = confusion_matrix(&preds, labels, k)?;
    Ok((classification_metrics(&cm)?, roc_from_probs(probs, labels)?))
}
