use std::path::{Path, PathBuf};

use rayon::prelude::*;

use fusionvote::data::{generate_synthetic_dataset, load_dataset_dir, load_ppm, save_dataset_dir, Image, LabeledDataset, Preprocess, Split};
use fusionvote::eval::loss_curves_svg;
use fusionvote::explain::grad_cam;
use fusionvote::io::write_atomic;
use fusionvote::model::{soft_vote_batch, Ensemble, FusionModel, ModelConfig, ENSEMBLE_SIZE};
use fusionvote::train::{
    load_checkpoint, loss_history_csv, predict_images, save_checkpoint, train_fusion_model, Checkpoint, TrainReport,
};
use fusionvote::{Error, Result};

use crate::config::{RunConfig, KEYS};
use crate::report::{comparison_row, Evaluation, COMPARISON_HEADER};
use crate::{ablate, AblateArgs, CliError, Command, EnsembleArgs, EvalArgs, ExplainArgs, SplitArg, SynthArgs, TrainArgs};

pub(crate) fn dispatch(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Ablate(a) => run_ablation(a),
        Command::Explain(a) => explain(a),
        Command::Keys => {
            for (key, default, doc) in KEYS {
                println!("{key}={default}\t# {doc}");
            }
            Ok(())
        }
    }
}

fn synth(a: SynthArgs) -> Result<(), CliError> {
    let data = generate_synthetic_dataset(a.classes, a.per_class, a.size, a.seed)?;
    save_dataset_dir(&data, &a.out)?;
    println!(
        "wrote {} images in {} classes to {}",
        data.len(),
        data.num_classes(),
        a.out.display()
    );
    Ok(())
}

/// The dataset at `root`, split per the run configuration.
pub(crate) fn load_split(cfg: &RunConfig, root: &Path) -> Result<LabeledDataset> {
    let mut data = load_dataset_dir(root)?;
    data.stratified_split(cfg.test_fraction, cfg.split_seed)?;
    Ok(data)
}

/// Initializes a model from `model_cfg` with the run seed and trains it.
pub(crate) fn train_model(
    cfg: &RunConfig,
    data: &LabeledDataset,
    model_cfg: ModelConfig,
) -> Result<(FusionModel, TrainReport)> {
    let mut model = FusionModel::new(model_cfg, cfg.seed)?;
    let report = train_fusion_model(&mut model, data, &cfg.train_config())?;
    Ok((model, report))
}

/// Preprocessed images and labels of the selected items, in dataset order.
pub(crate) fn scored_items(data: &LabeledDataset, split: SplitArg, pre: &Preprocess) -> Result<(Vec<Image>, Vec<usize>)> {
    let chosen: Vec<_> = data
        .items
        .iter()
        .filter(|s| split == SplitArg::All || s.split == Split::Test)
        .collect();
    if chosen.is_empty() {
        return Err(Error::Config(
            "no items to evaluate; the test split is empty (set test_fraction or use --split all)".into(),
        ));
    }
    let images = chosen.iter().map(|s| pre.apply(&s.image)).collect::<Result<_>>()?;
    Ok((images, chosen.iter().map(|s| s.label).collect()))
}

fn check_classes(model: &FusionModel, data: &LabeledDataset, path: &Path) -> Result<()> {
    if model.num_classes() != data.num_classes() {
        return Err(Error::Config(format!(
            "{} was trained on {} classes, the dataset has {}",
            path.display(),
            model.num_classes(),
            data.num_classes()
        )));
    }
    Ok(())
}

/// Preprocessing of the run configuration at the model's input size.
fn preprocess_for(cfg: &RunConfig, model: &FusionModel) -> Preprocess {
    Preprocess {
        size: model.config.image_size,
        ..cfg.preprocess()
    }
}

/// Usage error if an output would overwrite an input or another output.
fn ensure_distinct(outputs: &[&Path], inputs: &[&Path]) -> Result<(), CliError> {
    let abs = |p: &Path| std::path::absolute(p).unwrap_or_else(|_| p.to_path_buf());
    for (i, out) in outputs.iter().enumerate() {
        let o = abs(out);
        if inputs.iter().any(|p| abs(p) == o) || outputs[..i].iter().any(|p| abs(p) == o) {
            return Err(CliError::Usage(format!(
                "output path {} clashes with another input or output",
                out.display()
            )));
        }
    }
    Ok(())
}

/// `model.ckpt` → `model.loss.csv`, `model.loss.svg`.
pub fn loss_paths(ckpt: &Path) -> (PathBuf, PathBuf) {
    (ckpt.with_extension("loss.csv"), ckpt.with_extension("loss.svg"))
}

fn train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = RunConfig::load_or_default(a.config.as_deref())?;
    if let Some(flavor) = &a.flavor {
        cfg.set("flavor", flavor)?;
    }
    let root = a.data.clone().unwrap_or_else(|| cfg.data.clone());
    let (csv_path, svg_path) = loss_paths(&a.out);
    let mut inputs = vec![root.as_path()];
    inputs.extend(a.config.as_deref());
    ensure_distinct(&[&a.out, &csv_path, &svg_path], &inputs)?;

    let data = load_split(&cfg, &root)?;
    let model_cfg = cfg.model_config(data.num_classes(), None);
    let tag = model_cfg.tag();
    let (model, report) = train_model(&cfg, &data, model_cfg)?;
    let last = report.history.last().copied();
    let trainer = report.trainer;
    save_checkpoint(
        &a.out,
        &Checkpoint {
            model,
            adam: trainer.adam,
            rng: trainer.rng,
            epoch: trainer.epoch,
        },
    )?;
    write_atomic(&csv_path, loss_history_csv(&report.history).as_bytes())?;
    let svg = loss_curves_svg(&[(tag.clone(), report.history)], &format!("{tag} loss"));
    write_atomic(&svg_path, svg.as_bytes())?;
    if let Some(e) = last {
        let test = e.test_loss.map(|t| format!(", test loss {t:.4}")).unwrap_or_default();
        println!(
            "{tag}: {} epochs, {} trainable parameters, train loss {:.4}{test}",
            e.epoch, report.trainable_params, e.train_loss
        );
    }
    println!("wrote {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let ckpt = load_checkpoint(&a.ckpt, None)?;
    let data = load_split(&cfg, &a.data)?;
    check_classes(&ckpt.model, &data, &a.ckpt)?;
    let (images, labels) = scored_items(&data, a.split, &preprocess_for(&cfg, &ckpt.model))?;
    let probs = predict_images(&ckpt.model, &images)?;
    let e = Evaluation::from_probs(&probs, &labels)?;
    let tag = ckpt.model.config.tag();
    e.write(&a.out, &data.class_names, &format!("{tag} micro-average ROC"))?;
    println!(
        "{tag}: accuracy {:.4}, mcc {:.4}, auc {:.4} on {} items",
        e.accuracy(),
        e.metrics.mcc.value,
        e.roc.auc,
        labels.len()
    );
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> Result<(), CliError> {
    if a.ckpts.len() != ENSEMBLE_SIZE {
        return Err(CliError::Usage(format!(
            "--ckpts needs exactly {ENSEMBLE_SIZE} checkpoints, got {}",
            a.ckpts.len()
        )));
    }
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let data = load_split(&cfg, &a.data)?;
    let mut ensemble = Ensemble::empty(ENSEMBLE_SIZE)?;
    for (slot, path) in a.ckpts.iter().enumerate() {
        let model = load_checkpoint(path, None)?.model;
        check_classes(&model, &data, path)?;
        ensemble.load(slot, model).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
    }
    let members = ensemble.members()?;
    let pre = preprocess_for(&cfg, members[0]);
    let (images, labels) = scored_items(&data, a.split, &pre)?;
    let probs = members
        .par_iter()
        .map(|m| predict_images(m, &images))
        .collect::<Result<Vec<_>>>()?;
    let votes = soft_vote_batch(&probs)?;
    let combined = Evaluation::from_votes(&votes, &labels, data.num_classes())?;
    combined.write(&a.out, &data.class_names, "soft-vote ensemble micro-average ROC")?;

    let mut table = format!("{COMPARISON_HEADER}\n");
    for (m, p) in members.iter().zip(&probs) {
        let e = Evaluation::from_probs(p, &labels)?;
        table.push_str(&comparison_row(&m.config.tag(), &e));
        table.push('\n');
    }
    table.push_str(&comparison_row("ensemble", &combined));
    table.push('\n');
    write_atomic(a.out.join("members.csv"), table.as_bytes())?;
    print!("{table}");
    Ok(())
}

fn run_ablation(a: AblateArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let entries = ablate::parse_spec(&a.members).map_err(CliError::Usage)?;
    let root = a.data.clone().unwrap_or_else(|| cfg.data.clone());
    let data = load_split(&cfg, &root)?;
    let result = ablate::run(&cfg, &data, &entries)?;
    result.write(&a.out)?;
    print!("{}", result.to_csv());
    Ok(())
}

fn explain(a: ExplainArgs) -> Result<(), CliError> {
    let cfg = RunConfig::load_or_default(a.config.as_deref())?;
    let model = load_checkpoint(&a.ckpt, None)?.model;
    let image = preprocess_for(&cfg, &model).apply(&load_ppm(&a.image)?)?;
    let map = grad_cam(&model, &image.to_chw()?, a.class, &a.layer)?;
    let (pgm, ppm) = (a.out.join("cam.pgm"), a.out.join("overlay.ppm"));
    write_atomic(&pgm, &map.to_pgm()?)?;
    fusionvote::data::save_ppm(&ppm, &map.overlay(&image)?)?;
    if map.all_zero {
        println!("note: the map is zero everywhere (no positive evidence for class {})", a.class);
    }
    println!("wrote {} and {}", pgm.display(), ppm.display());
    Ok(())
}
