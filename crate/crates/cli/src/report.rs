//! Evaluation outputs shared by the `eval`, `ensemble` and `ablate`
//! commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fusionvote::eval::{
    classification_metrics, confusion_matrix, evaluate_probs, roc_auc_micro, roc_svg, MetricsReport, RocCurve,
};
use fusionvote::io::write_atomic;
use fusionvote::model::EnsemblePrediction;
use fusionvote::tensor::Tensor;
use fusionvote::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub metrics: MetricsReport,
    pub roc: RocCurve,
}

impl Evaluation {
    /// Scores a `[N, K]` probability matrix.
    pub fn from_probs(probs: &Tensor<f32>, labels: &[usize]) -> Result<Self> {
        let (metrics, roc) = evaluate_probs(probs, labels)?;
        Ok(Evaluation { metrics, roc })
    }

    /// Scores soft-vote results: predictions are the vote labels and ROC
    /// scores are the mean member probabilities.
    pub fn from_votes(votes: &[EnsemblePrediction<f32>], labels: &[usize], num_classes: usize) -> Result<Self> {
        let preds: Vec<usize> = votes.iter().map(|v| v.label).collect();
        let metrics = classification_metrics(&confusion_matrix(&preds, labels, num_classes)?)?;
        let scores: Vec<Vec<f64>> = votes
            .iter()
            .map(|v| {
                let n = v.per_member.len() as f64;
                v.combined.data().iter().map(|&x| x as f64 / n).collect()
            })
            .collect();
        let roc = roc_auc_micro(&scores, labels)?;
        Ok(Evaluation { metrics, roc })
    }

    pub fn accuracy(&self) -> f64 {
        self.metrics.accuracy.value
    }

    /// Writes `metrics.csv`, `confusion.csv`, `roc.csv` and `roc.svg` into
    /// `dir` and returns their paths.
    pub fn write(&self, dir: &Path, class_names: &[String], title: &str) -> Result<Vec<PathBuf>> {
        let files = [
            ("metrics.csv", self.metrics.to_csv(class_names)?),
            ("confusion.csv", self.metrics.confusion.to_csv(class_names)?),
            ("roc.csv", self.roc.to_csv()),
            ("roc.svg", roc_svg(&self.roc, title)),
        ];
        let mut written = Vec::with_capacity(files.len());
        for (name, text) in files {
            let path = dir.join(name);
            write_atomic(&path, text.as_bytes())?;
            written.push(path);
        }
        Ok(written)
    }
}

/// Header of the model comparison tables.
pub const COMPARISON_HEADER: &str = "model,accuracy,precision,recall,f1,mcc,auc";

/// One comparison row, six decimals throughout.
pub fn comparison_row(name: &str, e: &Evaluation) -> String {
    let m = &e.metrics;
    let mut row = String::new();
    let _ = write!(
        row,
        "{name},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6}",
        m.accuracy.value, m.precision.value, m.recall.value, m.f1.value, m.mcc.value, e.roc.auc
    );
    row
}
