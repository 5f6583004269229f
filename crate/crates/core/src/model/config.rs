use std::fmt::Write as _;

use super::backbone::{Flavor, MIN_INPUT};
use crate::error::{Error, Result};
use crate::nn::SeBlock;

/// Full-scale MLP head widths; toy runs multiply them by `width_factor`.
pub const MLP_WIDTHS: [usize; 3] = [512, 256, 121];

/// Architecture hyperparameters of one fusion model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub image_size: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub patch_size: usize,
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub cnn_width: usize,
    pub stages: usize,
    pub dense_growth: usize,
    pub dense_layers: usize,
    pub aspp_branch_channels: usize,
    pub aspp_channels: usize,
    pub se_reduction: usize,
    pub width_factor: f64,
    pub vit_streams: usize,
    /// One CNN stream per entry.
    pub flavors: Vec<Flavor>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            image_size: 32,
            channels: 3,
            num_classes: 8,
            patch_size: 4,
            embed_dim: 32,
            depth: 2,
            heads: 4,
            cnn_width: 16,
            stages: 2,
            dense_growth: 8,
            dense_layers: 2,
            aspp_branch_channels: 8,
            aspp_channels: 32,
            se_reduction: SeBlock::DEFAULT_REDUCTION,
            width_factor: 0.25,
            vit_streams: 1,
            flavors: vec![Flavor::Plain],
        }
    }
}

impl ModelConfig {
    pub const KEYS: [&'static str; 16] = [
        "image_size",
        "num_classes",
        "patch_size",
        "embed_dim",
        "depth",
        "heads",
        "cnn_width",
        "stages",
        "dense_growth",
        "dense_layers",
        "aspp_branch_channels",
        "aspp_channels",
        "se_reduction",
        "width_factor",
        "vit_streams",
        "flavor",
    ];

    /// Standard two-stream model with the given backbone.
    pub fn with_flavor(mut self, flavor: Flavor) -> Self {
        self.flavors = vec![flavor];
        self
    }

    /// `[512, 256, 121]` scaled by the width factor, each at least 1.
    pub fn mlp_widths(&self) -> [usize; 3] {
        MLP_WIDTHS.map(|w| ((w as f64 * self.width_factor).round() as usize).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return fail(format!("num_classes must be at least 2, got {}", self.num_classes));
        }
        if self.vit_streams == 0 || self.flavors.is_empty() {
            return fail("a fusion model needs at least one transformer and one CNN stream".into());
        }
        if !(self.width_factor > 0.0 && self.width_factor.is_finite()) {
            return fail(format!("width_factor must be positive, got {}", self.width_factor));
        }
        let positive = [
            ("channels", self.channels),
            ("patch_size", self.patch_size),
            ("embed_dim", self.embed_dim),
            ("heads", self.heads),
            ("cnn_width", self.cnn_width),
            ("stages", self.stages),
            ("aspp_branch_channels", self.aspp_branch_channels),
            ("aspp_channels", self.aspp_channels),
            ("se_reduction", self.se_reduction),
        ];
        for (name, v) in positive {
            if v == 0 {
                return fail(format!("{name} must be positive"));
            }
        }
        if !self.embed_dim.is_multiple_of(self.heads) {
            return fail(format!(
                "embed_dim {} is not divisible by heads {}",
                self.embed_dim, self.heads
            ));
        }
        if !self.aspp_channels.is_multiple_of(self.se_reduction) {
            return fail(format!(
                "aspp_channels {} is not divisible by se_reduction {}",
                self.aspp_channels, self.se_reduction
            ));
        }
        let factor = 1usize << self.stages.min(30);
        if self.image_size < MIN_INPUT || !self.image_size.is_multiple_of(factor) {
            return Err(Error::Dimension(format!(
                "image_size {} must be at least {MIN_INPUT} and divisible by 2^stages = {factor}",
                self.image_size
            )));
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return Err(Error::Dimension(format!(
                "image_size {} is not divisible by patch_size {}",
                self.image_size, self.patch_size
            )));
        }
        Ok(())
    }

    /// Sets one field from its text form. Returns `Ok(false)` for keys that
    /// do not belong to the model.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn num<V: std::str::FromStr>(key: &str, value: &str) -> Result<V> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "image_size" => self.image_size = num(key, value)?,
            "num_classes" => self.num_classes = num(key, value)?,
            "patch_size" => self.patch_size = num(key, value)?,
            "embed_dim" => self.embed_dim = num(key, value)?,
            "depth" => self.depth = num(key, value)?,
            "heads" => self.heads = num(key, value)?,
            "cnn_width" => self.cnn_width = num(key, value)?,
            "stages" => self.stages = num(key, value)?,
            "dense_growth" => self.dense_growth = num(key, value)?,
            "dense_layers" => self.dense_layers = num(key, value)?,
            "aspp_branch_channels" => self.aspp_branch_channels = num(key, value)?,
            "aspp_channels" => self.aspp_channels = num(key, value)?,
            "se_reduction" => self.se_reduction = num(key, value)?,
            "width_factor" => self.width_factor = num(key, value)?,
            "vit_streams" => self.vit_streams = num(key, value)?,
            "flavor" => {
                self.flavors = value
                    .split('+')
                    .map(|f| f.trim().parse())
                    .collect::<Result<Vec<_>>>()?
            }
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn get(&self, key: &str) -> Option<String> {
        Some(match key {
            "image_size" => self.image_size.to_string(),
            "num_classes" => self.num_classes.to_string(),
            "patch_size" => self.patch_size.to_string(),
            "embed_dim" => self.embed_dim.to_string(),
            "depth" => self.depth.to_string(),
            "heads" => self.heads.to_string(),
            "cnn_width" => self.cnn_width.to_string(),
            "stages" => self.stages.to_string(),
            "dense_growth" => self.dense_growth.to_string(),
            "dense_layers" => self.dense_layers.to_string(),
            "aspp_branch_channels" => self.aspp_branch_channels.to_string(),
            "aspp_channels" => self.aspp_channels.to_string(),
            "se_reduction" => self.se_reduction.to_string(),
            "width_factor" => self.width_factor.to_string(),
            "vit_streams" => self.vit_streams.to_string(),
            "flavor" => self
                .flavors
                .iter()
                .map(|f| f.name())
                .collect::<Vec<_>>()
                .join("+"),
            _ => return None,
        })
    }

    /// `key=value` lines, one per key, in [`Self::KEYS`] order.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for key in Self::KEYS {
            let _ = writeln!(out, "{key}={}", self.get(key).unwrap_or_default());
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("expected key=value, got {line:?}")))?;
            if !cfg.set(k.trim(), v.trim())? {
                return Err(Error::Config(format!("unknown model key {:?}", k.trim())));
            }
        }
        Ok(cfg)
    }

    /// Short architecture tag such as `1v1c-plain` or `2v2c-plain+residual`.
    pub fn tag(&self) -> String {
        format!(
            "{}v{}c-{}",
            self.vit_streams,
            self.flavors.len(),
            self.get("flavor").unwrap_or_default()
        )
    }

    /// Random-stream selector so models with different architectures but
    /// the same seed start from unrelated weights.
    pub(crate) fn rng_stream(&self) -> u64 {
        let mut s = self.vit_streams as u64;
        for f in &self.flavors {
            s = s * 5 + f.index() as u64 + 1;
        }
        s
    }
}
