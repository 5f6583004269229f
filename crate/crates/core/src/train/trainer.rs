use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use super::loss::{cross_entropy, one_hot};
use crate::data::{augment, stack_images, AugmentConfig, Image, LabeledDataset, Preprocess, Split};
use crate::error::{Error, Result};
use crate::model::FusionModel;
use crate::nn::{Forward, Mode};
use crate::tensor::Tensor;

/// Batch size used for inference passes.
const EVAL_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Keep patch embeddings, encoder blocks and CNN backbones fixed.
    pub freeze_extractors: bool,
    /// Random affine augmentation of training images; `None` disables it.
    pub augment: Option<AugmentConfig>,
    pub preprocess: Preprocess,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 16,
            epochs: 20,
            seed: 0,
            freeze_extractors: false,
            augment: Some(AugmentConfig::default()),
            preprocess: Preprocess::new(32),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2 for batch norm, got {}",
                self.batch_size
            )));
        }
        if let Some(a) = &self.augment {
            a.validate()?;
        }
        self.preprocess.gamma.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// `None` when the dataset has no test split.
    pub test_loss: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    pub history: Vec<EpochLoss>,
    pub trainable_params: usize,
    /// Final optimizer and rng state, for checkpointing.
    pub trainer: Trainer,
}

/// Optimizer, shuffling rng and epoch counter of one training run. Each
/// model gets its own trainer; nothing is shared between runs.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub config: TrainConfig,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    /// Completed epochs.
    pub epoch: usize,
}

impl Trainer {
    pub fn new(model: &FusionModel, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Trainer {
            adam: AdamState::new(&model.store),
            rng,
            epoch: 0,
            config,
        })
    }

    /// Resumes from saved optimizer and rng state.
    pub fn resume(config: TrainConfig, adam: AdamState<f32>, rng: ChaCha8Rng, epoch: usize) -> Result<Self> {
        config.validate()?;
        Ok(Trainer {
            config,
            adam,
            rng,
            epoch,
        })
    }

    /// Augmentation draws come from a per-epoch stream, so a resumed run
    /// reproduces them without storing a second rng.
    fn augment_rng(&self) -> Option<(AugmentConfig, ChaCha8Rng)> {
        self.config.augment.map(|a| {
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ self.config.seed.rotate_left(32));
            rng.set_stream(self.epoch as u64);
            (a, rng)
        })
    }

    /// Batches of one shuffled epoch. A trailing batch of a single item is
    /// merged into the previous one, since batch norm needs two samples.
    fn epoch_batches(&mut self, n: usize) -> Vec<Vec<usize>> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut self.rng);
        let mut batches: Vec<Vec<usize>> = order.chunks(self.config.batch_size).map(<[usize]>::to_vec).collect();
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            let last = batches.pop().unwrap_or_default();
            if let Some(prev) = batches.last_mut() {
                prev.extend(last);
            }
        }
        batches
    }

    /// One pass over `train`; returns the size-weighted mean batch loss.
    pub fn train_epoch(&mut self, model: &mut FusionModel, train: &[(Image, usize)]) -> Result<f64> {
        if train.len() < 2 {
            return Err(Error::Config(format!(
                "training needs at least 2 items, got {}",
                train.len()
            )));
        }
        let k = model.num_classes();
        let mut aug = self.augment_rng();
        let batches = self.epoch_batches(train.len());
        let mut total = 0.0;
        for batch in &batches {
            let images: Vec<Image> = match &mut aug {
                Some((cfg, rng)) => batch
                    .iter()
                    .map(|&i| augment(&train[i].0, cfg, rng))
                    .collect::<Result<_>>()?,
                None => batch.iter().map(|&i| train[i].0.clone()).collect(),
            };
            let labels: Vec<usize> = batch.iter().map(|&i| train[i].1).collect();
            let x = stack_images(&images)?;
            let targets = one_hot(&labels, k)?;

            let mut ctx = Forward::new(&model.store, Mode::Train);
            let input = ctx.input(x);
            let out = model.forward(&mut ctx, input)?;
            let ce = cross_entropy(&mut ctx.graph, out.probs, &targets)?;
            let penalty = model.net.penalty(&mut ctx)?;
            let loss = ctx.graph.add(ce, penalty)?;
            let value = ctx.graph.value(loss).data()[0] as f64;
            if !value.is_finite() {
                return Err(Error::Numeric(format!(
                    "loss became {value} in epoch {}",
                    self.epoch + 1
                )));
            }
            ctx.backward(loss)?;
            let grads = ctx.param_grads();
            let bn = ctx.into_bn_updates();
            self.adam.step(&mut model.store, &grads, self.config.lr)?;
            for u in &bn {
                u.apply(&mut model.store);
            }
            total += value * batch.len() as f64;
        }
        self.epoch += 1;
        Ok(total / train.len() as f64)
    }
}

/// Cross-entropy plus penalty in inference mode, averaged over items.
pub fn evaluate_loss(model: &FusionModel, items: &[(Image, usize)]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::Contract("cannot evaluate the loss of zero items".into()));
    }
    let mut total = 0.0;
    for chunk in items.chunks(EVAL_BATCH) {
        let x = stack_images(chunk.iter().map(|(im, _)| im))?;
        let labels: Vec<usize> = chunk.iter().map(|&(_, l)| l).collect();
        let targets = one_hot(&labels, model.num_classes())?;
        let mut ctx = Forward::new(&model.store, Mode::Eval);
        let input = ctx.input(x);
        let out = model.forward(&mut ctx, input)?;
        let ce = cross_entropy(&mut ctx.graph, out.probs, &targets)?;
        let penalty = model.net.penalty(&mut ctx)?;
        let loss = ctx.graph.add(ce, penalty)?;
        total += ctx.graph.value(loss).data()[0] as f64 * chunk.len() as f64;
    }
    Ok(total / items.len() as f64)
}

/// Inference-mode probabilities `[N, K]` for preprocessed images.
pub fn predict_images(model: &FusionModel, images: &[Image]) -> Result<Tensor<f32>> {
    if images.is_empty() {
        return Err(Error::Contract("cannot predict zero images".into()));
    }
    let k = model.num_classes();
    let mut data = Vec::with_capacity(images.len() * k);
    for chunk in images.chunks(EVAL_BATCH) {
        let probs = model.predict_probs(&stack_images(chunk)?)?;
        data.extend_from_slice(probs.data());
    }
    Tensor::new(vec![images.len(), k], data)
}

/// Preprocessed `(image, label)` pairs of one split.
pub fn prepare_split(data: &LabeledDataset, split: Split, pre: &Preprocess) -> Result<Vec<(Image, usize)>> {
    data.split(split)
        .into_iter()
        .map(|s| Ok((pre.apply(&s.image)?, s.label)))
        .collect()
}

/// Trains `model` on the training split of `data`, recording train and test
/// loss after every epoch. Deterministic given `cfg.seed`.
pub fn train_fusion_model(model: &mut FusionModel, data: &LabeledDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Config("dataset is empty".into()));
    }
    if data.num_classes() != model.num_classes() {
        return Err(Error::Config(format!(
            "dataset has {} classes, model expects {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    if cfg.preprocess.size != model.config.image_size {
        return Err(Error::Config(format!(
            "preprocessing resizes to {}, model expects {}",
            cfg.preprocess.size, model.config.image_size
        )));
    }
    let train = prepare_split(data, Split::Train, &cfg.preprocess)?;
    let test = prepare_split(data, Split::Test, &cfg.preprocess)?;
    if train.len() < cfg.batch_size {
        return Err(Error::Config(format!(
            "{} training items is fewer than one batch of {}",
            train.len(),
            cfg.batch_size
        )));
    }
    model.freeze_extractors(cfg.freeze_extractors);
    let mut trainer = Trainer::new(model, cfg.clone())?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let train_loss = trainer.train_epoch(model, &train)?;
        let test_loss = if test.is_empty() {
            None
        } else {
            Some(evaluate_loss(model, &test)?)
        };
        history.push(EpochLoss {
            epoch: trainer.epoch,
            train_loss,
            test_loss,
        });
    }
    Ok(TrainReport {
        history,
        trainable_params: model.trainable_count(),
        trainer,
    })
}

/// `epoch,train_loss,test_loss`, one row per epoch; a missing test loss is
/// left empty.
pub fn loss_history_csv(history: &[EpochLoss]) -> String {
    let mut out = String::from("epoch,train_loss,test_loss\n");
    for e in history {
        let test = e.test_loss.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, test));
    }
    out
}
