//! Run configuration: a flat `key=value` file, `#` starts a comment.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use fusionvote::data::{AugmentConfig, GammaParams, PipelineOrder, Preprocess};
use fusionvote::model::{Flavor, ModelConfig};
use fusionvote::train::TrainConfig;
use fusionvote::{Error, Result};

/// Every recognised key with its default and meaning.
pub const KEYS: &[(&str, &str, &str)] = &[
    ("data", "data", "dataset root, one subdirectory of PPM images per class"),
    ("out", "out", "output directory"),
    ("seed", "0", "seed for weight initialization and batch shuffling"),
    ("test_fraction", "0.2", "fraction of each class held out for testing"),
    ("split_seed", "0", "seed of the stratified train/test split"),
    ("lr", "0.001", "Adam learning rate"),
    ("batch_size", "16", "training mini-batch size (at least 2)"),
    ("epochs", "20", "training epochs per model"),
    ("freeze_extractors", "false", "keep patch embeddings, encoder blocks and CNN backbones fixed"),
    ("augment", "true", "apply random affine augmentation to training images"),
    ("rotation_deg", "40", "maximum rotation in degrees"),
    ("shift_frac", "0.2", "maximum shift as a fraction of the image side"),
    ("shear", "0.2", "maximum shear angle in radians"),
    ("zoom_frac", "0.2", "zoom range, factor drawn from [1 - z, 1 + z]"),
    ("hflip", "true", "random horizontal flips"),
    ("augment_seed", "0", "seed of the augmentation draws"),
    ("gamma_c", "1.0", "gamma transform gain c in s = c * r^gamma"),
    ("gamma", "1.1", "gamma transform exponent"),
    ("pipeline_order", "gamma_resize", "gamma_resize or resize_gamma"),
    ("image_size", "32", "model input side; images are resized to it"),
    ("patch_size", "4", "transformer patch side"),
    ("embed_dim", "32", "transformer token width"),
    ("depth", "2", "transformer encoder blocks"),
    ("heads", "4", "attention heads"),
    ("cnn_width", "16", "CNN stem channels"),
    ("stages", "2", "stride-2 CNN stages"),
    ("dense_growth", "8", "growth rate of the dense backbone"),
    ("dense_layers", "2", "layers per dense stage"),
    ("aspp_branch_channels", "8", "channels of each ASPP branch"),
    ("aspp_channels", "32", "ASPP output channels"),
    ("se_reduction", "4", "squeeze-and-excitation reduction ratio"),
    ("width_factor", "0.25", "scale applied to the 512/256/121 MLP head widths"),
    ("vit_streams", "1", "transformer streams per fusion model"),
    ("flavor", "plain", "CNN backbone(s): plain, residual, dense, sep; join with + for several streams"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub seed: u64,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub freeze_extractors: bool,
    pub augment_enabled: bool,
    pub augment: AugmentConfig,
    pub gamma: GammaParams,
    pub pipeline_order: PipelineOrder,
    /// `num_classes` is taken from the dataset.
    pub model: ModelConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: "data".into(),
            out: "out".into(),
            seed: 0,
            test_fraction: 0.2,
            split_seed: 0,
            lr: 0.001,
            batch_size: 16,
            epochs: 20,
            freeze_extractors: false,
            augment_enabled: true,
            augment: AugmentConfig::default(),
            gamma: GammaParams::default(),
            pipeline_order: PipelineOrder::default(),
            model: ModelConfig::default(),
        }
    }
}

fn parse<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data" => self.data = value.into(),
            "out" => self.out = value.into(),
            "seed" => self.seed = parse(key, value)?,
            "test_fraction" => self.test_fraction = parse(key, value)?,
            "split_seed" => self.split_seed = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "freeze_extractors" => self.freeze_extractors = parse(key, value)?,
            "augment" => self.augment_enabled = parse(key, value)?,
            "rotation_deg" => self.augment.rotation_deg = parse(key, value)?,
            "shift_frac" => self.augment.shift_frac = parse(key, value)?,
            "shear" => self.augment.shear = parse(key, value)?,
            "zoom_frac" => self.augment.zoom_frac = parse(key, value)?,
            "hflip" => self.augment.hflip = parse(key, value)?,
            "augment_seed" => self.augment.seed = parse(key, value)?,
            "gamma_c" => self.gamma.c = parse(key, value)?,
            "gamma" => self.gamma.gamma = parse(key, value)?,
            "pipeline_order" => self.pipeline_order = value.parse()?,
            "num_classes" => {
                return Err(Error::Config(
                    "num_classes is taken from the dataset and cannot be configured".into(),
                ))
            }
            _ => {
                if !self.model.set(key, value)? {
                    return Err(Error::Config(format!("unknown configuration key {key:?}")));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<&str> = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value, got {line:?}", n + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if seen.contains(&k) {
                return Err(Error::Config(format!("line {}: duplicate key {k:?}", n + 1)));
            }
            cfg.set(k, v)
                .map_err(|e| Error::Config(format!("line {}: {}", n + 1, strip_prefix(&e))))?;
            seen.push(k);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| Error::Config(format!("{}: {}", path.display(), strip_prefix(&e))))
    }

    /// The file at `path`, or the defaults when there is none.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(RunConfig::default()), Self::load)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!(
                "test_fraction must lie in [0, 1), got {}",
                self.test_fraction
            )));
        }
        self.train_config().validate()?;
        self.augment.validate()?;
        // Class count is unknown until the data is read; any valid value will do here.
        ModelConfig {
            num_classes: 2,
            ..self.model.clone()
        }
        .validate()
    }

    pub fn preprocess(&self) -> Preprocess {
        Preprocess {
            gamma: self.gamma,
            size: self.model.image_size,
            order: self.pipeline_order,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
            freeze_extractors: self.freeze_extractors,
            augment: self.augment_enabled.then_some(self.augment),
            preprocess: self.preprocess(),
        }
    }

    /// Model configuration for `num_classes` classes, with `flavors`
    /// replacing the configured backbones when given.
    pub fn model_config(&self, num_classes: usize, flavors: Option<Vec<Flavor>>) -> ModelConfig {
        let mut m = self.model.clone();
        m.num_classes = num_classes;
        if let Some(f) = flavors {
            m.flavors = f;
        }
        m
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "data" => self.data.display().to_string(),
            "out" => self.out.display().to_string(),
            "seed" => self.seed.to_string(),
            "test_fraction" => self.test_fraction.to_string(),
            "split_seed" => self.split_seed.to_string(),
            "lr" => self.lr.to_string(),
            "batch_size" => self.batch_size.to_string(),
            "epochs" => self.epochs.to_string(),
            "freeze_extractors" => self.freeze_extractors.to_string(),
            "augment" => self.augment_enabled.to_string(),
            "rotation_deg" => self.augment.rotation_deg.to_string(),
            "shift_frac" => self.augment.shift_frac.to_string(),
            "shear" => self.augment.shear.to_string(),
            "zoom_frac" => self.augment.zoom_frac.to_string(),
            "hflip" => self.augment.hflip.to_string(),
            "augment_seed" => self.augment.seed.to_string(),
            "gamma_c" => self.gamma.c.to_string(),
            "gamma" => self.gamma.gamma.to_string(),
            "pipeline_order" => self.pipeline_order.to_string(),
            _ => return self.model.get(key),
        })
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (key, _, _) in KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap_or_default());
        }
        out
    }
}

/// Error text without the variant's leading label, for re-wrapping.
fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}
