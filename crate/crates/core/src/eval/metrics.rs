use std::fmt::Write as _;

use super::confusion::ConfusionMatrix;
use crate::error::{Error, Result};

/// A metric that may be undefined (a zero denominator). Undefined metrics
/// carry the value 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricValue {
    pub value: f64,
    pub undefined: bool,
}

impl MetricValue {
    pub fn defined(value: f64) -> Self {
        MetricValue {
            value,
            undefined: false,
        }
    }

    pub fn undefined() -> Self {
        MetricValue {
            value: 0.0,
            undefined: true,
        }
    }

    fn ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self::undefined()
        } else {
            Self::defined(num as f64 / den as f64)
        }
    }

    /// Mean of the values; undefined if any input is.
    fn mean(values: impl Iterator<Item = MetricValue>) -> Self {
        let (mut sum, mut n, mut undefined) = (0.0, 0usize, false);
        for v in values {
            sum += v.value;
            n += 1;
            undefined |= v.undefined;
        }
        MetricValue {
            value: if n == 0 { 0.0 } else { sum / n as f64 },
            undefined: undefined || n == 0,
        }
    }
}

/// One-vs-rest counts and rates for one class.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassMetrics {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
    pub tpr: MetricValue,
    pub fpr: MetricValue,
}

/// Accuracy, macro-averaged precision/recall/F1/TPR/FPR and the
/// multiclass MCC of one confusion matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub accuracy: MetricValue,
    pub precision: MetricValue,
    pub recall: MetricValue,
    pub f1: MetricValue,
    pub tpr: MetricValue,
    pub fpr: MetricValue,
    pub mcc: MetricValue,
    pub per_class: Vec<ClassMetrics>,
    pub confusion: ConfusionMatrix,
}

fn class_metrics(cm: &ConfusionMatrix, k: usize) -> ClassMetrics {
    let total = cm.total();
    let tp = cm.get(k, k);
    let fp = cm.col_sum(k) - tp;
    let fn_ = cm.row_sum(k) - tp;
    let tn = total - tp - fp - fn_;
    let precision = MetricValue::ratio(tp, tp + fp);
    let recall = MetricValue::ratio(tp, tp + fn_);
    let f1 = MetricValue::ratio(2 * tp, 2 * tp + fp + fn_);
    ClassMetrics {
        tp,
        fp,
        fn_,
        tn,
        precision,
        recall,
        f1,
        tpr: recall,
        fpr: MetricValue::ratio(fp, fp + tn),
    }
}

/// Generalized MCC over the whole matrix:
/// `(c·s − Σ p_k t_k) / sqrt((s² − Σ p_k²)(s² − Σ t_k²))` with `c` the
/// trace, `s` the total, `p_k` column sums and `t_k` row sums.
fn mcc(cm: &ConfusionMatrix) -> MetricValue {
    let k = cm.num_classes();
    let s = cm.total() as i128;
    let c = cm.trace() as i128;
    let (mut pt, mut pp, mut tt) = (0i128, 0i128, 0i128);
    for i in 0..k {
        let p = cm.col_sum(i) as i128;
        let t = cm.row_sum(i) as i128;
        pt += p * t;
        pp += p * p;
        tt += t * t;
    }
    let num = c * s - pt;
    let den = (s * s - pp) as f64 * (s * s - tt) as f64;
    if den == 0.0 {
        MetricValue::undefined()
    } else {
        MetricValue::defined(num as f64 / den.sqrt())
    }
}

pub fn classification_metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    if cm.total() == 0 {
        return Err(Error::Contract("metrics need at least one sample".into()));
    }
    let per_class: Vec<ClassMetrics> = (0..cm.num_classes()).map(|k| class_metrics(cm, k)).collect();
    let macro_of = |f: fn(&ClassMetrics) -> MetricValue| MetricValue::mean(per_class.iter().map(f));
    Ok(MetricsReport {
        accuracy: MetricValue::ratio(cm.trace(), cm.total()),
        precision: macro_of(|c| c.precision),
        recall: macro_of(|c| c.recall),
        f1: macro_of(|c| c.f1),
        tpr: macro_of(|c| c.tpr),
        fpr: macro_of(|c| c.fpr),
        mcc: mcc(cm),
        per_class,
        confusion: cm.clone(),
    })
}

impl MetricsReport {
    /// The seven summary metrics in report order.
    pub fn summary(&self) -> [(&'static str, MetricValue); 7] {
        [
            ("accuracy", self.accuracy),
            ("precision_macro", self.precision),
            ("recall_macro", self.recall),
            ("f1_macro", self.f1),
            ("tpr_macro", self.tpr),
            ("fpr_macro", self.fpr),
            ("mcc", self.mcc),
        ]
    }

    /// `metric,value,flag` rows: the summary metrics, then per-class
    /// precision/recall/F1/FPR as `<metric>[<class>]`. The flag column is
    /// `undefined` for zero-denominator metrics and empty otherwise.
    pub fn to_csv(&self, class_names: &[String]) -> Result<String> {
        if class_names.len() != self.per_class.len() {
            return Err(Error::Contract(format!(
                "{} class names for a {}-class report",
                class_names.len(),
                self.per_class.len()
            )));
        }
        let mut out = String::from("metric,value,flag\n");
        let mut row = |name: &str, v: MetricValue| {
            let flag = if v.undefined { "undefined" } else { "" };
            let _ = writeln!(out, "{name},{:.6},{flag}", v.value);
        };
        for (name, v) in self.summary() {
            row(name, v);
        }
        for (c, name) in self.per_class.iter().zip(class_names) {
            row(&format!("precision[{name}]"), c.precision);
            row(&format!("recall[{name}]"), c.recall);
            row(&format!("f1[{name}]"), c.f1);
            row(&format!("fpr[{name}]"), c.fpr);
        }
        Ok(out)
    }
}
