//! Extractor-count ablation: fusion models with one or two transformer and
//! CNN streams against soft votes of single-stream models, all trained with
//! the same seed and scored on the same test split.

use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;

use fusionvote::data::LabeledDataset;
use fusionvote::eval::loss_curves_svg;
use fusionvote::io::write_atomic;
use fusionvote::model::{soft_vote_batch, Flavor, ModelConfig};
use fusionvote::tensor::Tensor;
use fusionvote::train::{predict_images, EpochLoss};
use fusionvote::Result;

use crate::commands::{scored_items, train_model};
use crate::config::RunConfig;
use crate::report::Evaluation;
use crate::SplitArg;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Entry {
    /// One fusion model; its CNN streams use the first `cnns` flavors in
    /// plain, residual, dense, sep order.
    Fusion { vits: usize, cnns: usize },
    /// Soft vote of `n` one-transformer, one-CNN models with the first `n`
    /// flavors.
    Vote(usize),
}

impl Entry {
    pub fn label(&self) -> String {
        match self {
            Entry::Fusion { vits, cnns } => format!("{vits}v{cnns}c"),
            Entry::Vote(n) => format!("vote{n}"),
        }
    }

    /// Model configurations this entry trains, derived from `base`.
    pub fn models(&self, base: &ModelConfig) -> Vec<ModelConfig> {
        let make = |vits: usize, flavors: &[Flavor]| ModelConfig {
            vit_streams: vits,
            flavors: flavors.to_vec(),
            ..base.clone()
        };
        match *self {
            Entry::Fusion { vits, cnns } => vec![make(vits, &Flavor::ALL[..cnns])],
            Entry::Vote(n) => Flavor::ALL[..n].iter().map(|f| make(1, &[*f])).collect(),
        }
    }

    /// `(transformer streams, CNN streams, models)` summed over members.
    pub fn counts(&self) -> (usize, usize, usize) {
        match *self {
            Entry::Fusion { vits, cnns } => (vits, cnns, 1),
            Entry::Vote(n) => (n, n, n),
        }
    }
}

/// Parses a comma-separated list such as `1v1c,2v1c,vote4`.
pub fn parse_spec(spec: &str) -> Result<Vec<Entry>, String> {
    let max = Flavor::ALL.len();
    let mut entries = Vec::new();
    for raw in spec.split(',') {
        let item = raw.trim();
        let entry = if let Some(n) = item.strip_prefix("vote") {
            match n.parse::<usize>() {
                Ok(n) if (2..=max).contains(&n) => Entry::Vote(n),
                _ => return Err(format!("{item:?}: vote needs 2 to {max} members")),
            }
        } else {
            let parsed = item
                .strip_suffix('c')
                .and_then(|s| s.split_once('v'))
                .and_then(|(v, c)| Some((v.parse::<usize>().ok()?, c.parse::<usize>().ok()?)));
            match parsed {
                Some((vits, cnns)) if vits >= 1 && (1..=max).contains(&cnns) => Entry::Fusion { vits, cnns },
                _ => {
                    return Err(format!(
                        "{item:?}: expected <v>v<c>c with v >= 1 and 1 <= c <= {max}, or vote<n>"
                    ))
                }
            }
        };
        if entries.contains(&entry) {
            return Err(format!("{item:?} is listed twice"));
        }
        entries.push(entry);
    }
    Ok(entries)
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub entry: Entry,
    pub eval: Evaluation,
}

#[derive(Clone, Debug)]
pub struct Ablation {
    pub rows: Vec<AblationRow>,
    /// Loss history of every distinct trained model, by architecture tag.
    pub histories: Vec<(String, Vec<EpochLoss>)>,
}

/// Trains every distinct model the entries need, in parallel, and scores
/// each entry on the test split. Identical architectures are trained once.
pub fn run(cfg: &RunConfig, data: &LabeledDataset, entries: &[Entry]) -> Result<Ablation> {
    let base = cfg.model_config(data.num_classes(), None);
    let mut unique: Vec<ModelConfig> = Vec::new();
    for e in entries {
        for m in e.models(&base) {
            if !unique.contains(&m) {
                unique.push(m);
            }
        }
    }
    let (images, labels) = scored_items(data, SplitArg::Test, &cfg.preprocess())?;
    let trained = unique
        .par_iter()
        .map(|m| {
            let (model, report) = train_model(cfg, data, m.clone())?;
            Ok((predict_images(&model, &images)?, report.history))
        })
        .collect::<Result<Vec<(Tensor<f32>, Vec<EpochLoss>)>>>()?;
    let probs_of = |m: &ModelConfig| {
        let i = unique.iter().position(|u| u == m).expect("every entry model was trained");
        trained[i].0.clone()
    };

    let mut rows = Vec::with_capacity(entries.len());
    for &entry in entries {
        let probs: Vec<Tensor<f32>> = entry.models(&base).iter().map(probs_of).collect();
        let eval = match entry {
            Entry::Fusion { .. } => Evaluation::from_probs(&probs[0], &labels)?,
            Entry::Vote(_) => Evaluation::from_votes(&soft_vote_batch(&probs)?, &labels, data.num_classes())?,
        };
        rows.push(AblationRow { entry, eval });
    }
    let histories = unique
        .iter()
        .zip(trained)
        .map(|(m, (_, h))| (m.tag(), h))
        .collect();
    Ok(Ablation { rows, histories })
}

impl Ablation {
    pub const HEADER: &'static str = "config,vits,cnns,models,accuracy,mcc,auc";

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}\n", Self::HEADER);
        for r in &self.rows {
            let (v, c, n) = r.entry.counts();
            let m = &r.eval.metrics;
            let _ = writeln!(
                out,
                "{},{v},{c},{n},{:.6},{:.6},{:.6}",
                r.entry.label(),
                m.accuracy.value,
                m.mcc.value,
                r.eval.roc.auc
            );
        }
        out
    }

    pub fn row(&self, entry: Entry) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.entry == entry)
    }

    /// Writes `ablation.csv` and `losses.svg`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        write_atomic(dir.join("ablation.csv"), self.to_csv().as_bytes())?;
        write_atomic(
            dir.join("losses.svg"),
            loss_curves_svg(&self.histories, "ablation training loss").as_bytes(),
        )
    }
}
