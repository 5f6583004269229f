use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::backbone::Flavor;
use super::config::ModelConfig;
use super::stream::{CnnStream, TransformerStream};
use crate::error::{Error, Result};
use crate::nn::{Dense, Forward, Mode, ParamBuilder, ParamStore};
use crate::tensor::{Activation, Scalar, Tensor, Var};

/// Layer structure of a fusion model. Holds parameter ids only.
#[derive(Clone, Debug)]
pub struct FusionNet {
    pub vits: Vec<TransformerStream>,
    pub cnns: Vec<CnnStream>,
    pub head: Dense,
}

/// Graph nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct FusionOutput {
    pub logits: Var,
    pub probs: Var,
    /// Spatial CNN-stream maps by name: `backbone`, `aspp`, `se` for the
    /// first CNN stream and `cnn<i>.<name>` for the others.
    pub taps: Vec<(String, Var)>,
}

impl FusionOutput {
    pub fn tap(&self, name: &str) -> Option<Var> {
        self.taps.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

impl FusionNet {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let vits = (0..cfg.vit_streams)
            .map(|i| TransformerStream::new(&mut pb.sub(&format!("vit{i}")), cfg))
            .collect::<Result<Vec<_>>>()?;
        let cnns = cfg
            .flavors
            .iter()
            .enumerate()
            .map(|(i, &f)| CnnStream::new(&mut pb.sub(&format!("cnn{i}")), cfg, f))
            .collect::<Result<Vec<_>>>()?;
        let fused: usize = vits.iter().map(|s| s.mlp.out_features()).sum::<usize>()
            + cnns.iter().map(|s| s.mlp.out_features()).sum::<usize>();
        let head = Dense::new(&mut pb.sub("head"), fused, cfg.num_classes, Activation::Identity, None)?;
        Ok(FusionNet { vits, cnns, head })
    }

    /// `images` is `[B, C, H, W]`; logits and probabilities are `[B, K]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, images: Var) -> Result<FusionOutput> {
        let mut features = Vec::with_capacity(self.vits.len() + self.cnns.len());
        for s in &self.vits {
            features.push(s.forward(ctx, images)?);
        }
        let mut taps = Vec::with_capacity(3 * self.cnns.len());
        for (i, s) in self.cnns.iter().enumerate() {
            let (f, t) = s.forward(ctx, images)?;
            features.push(f);
            let prefix = if i == 0 { String::new() } else { format!("cnn{i}.") };
            taps.push((format!("{prefix}backbone"), t.backbone));
            taps.push((format!("{prefix}aspp"), t.aspp));
            taps.push((format!("{prefix}se"), t.se));
        }
        let fused = ctx.graph.concat(&features, 1)?;
        let logits = self.head.forward(ctx, fused)?;
        let probs = ctx.graph.softmax(logits)?;
        Ok(FusionOutput { logits, probs, taps })
    }

    /// Sum of the regularization terms of every stream's first MLP layer.
    /// Requires a forward pass on the same context.
    pub fn penalty<T: Scalar>(&self, ctx: &mut Forward<'_, T>) -> Result<Var> {
        let mlps = self.vits.iter().map(|s| &s.mlp).chain(self.cnns.iter().map(|s| &s.mlp));
        let mut total = ctx.input(Tensor::zeros(vec![1]));
        for mlp in mlps {
            if let Some(p) = mlp.penalty(ctx)? {
                total = ctx.graph.add(total, p)?;
            }
        }
        Ok(total)
    }
}

/// A fusion model together with its parameters.
#[derive(Clone, Debug)]
pub struct FusionModel<T: Scalar = f32> {
    pub config: ModelConfig,
    pub net: FusionNet,
    pub store: ParamStore<T>,
}

impl<T: Scalar> FusionModel<T> {
    /// Builds a randomly initialized model. Different architectures draw
    /// from different random streams of the same seed.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(config.rng_stream());
        let mut store = ParamStore::new();
        let net = FusionNet::new(&mut ParamBuilder::new(&mut store, &mut rng), &config)?;
        Ok(FusionModel { config, net, store })
    }

    /// Backbone flavor of the first CNN stream.
    pub fn flavor(&self) -> Flavor {
        self.config.flavors[0]
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    pub fn forward(&self, ctx: &mut Forward<'_, T>, images: Var) -> Result<FusionOutput> {
        self.net.forward(ctx, images)
    }

    /// Inference-mode class probabilities for a `[B, C, H, W]` batch.
    pub fn predict_probs(&self, images: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ctx = Forward::new(&self.store, Mode::Eval);
        let x = ctx.input(images.clone());
        let out = self.forward(&mut ctx, x)?;
        Ok(ctx.graph.value(out.probs).clone().with_requires_grad(false))
    }

    /// Class probabilities for one `[C, H, W]` image.
    pub fn fusion_forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let shape = image.shape();
        if shape.len() != 3 {
            return Err(Error::Dimension(format!("expected a [C, H, W] image, got {shape:?}")));
        }
        let batch = image.clone().reshape([1, shape[0], shape[1], shape[2]])?;
        let probs = self.predict_probs(&batch)?;
        probs.reshape([self.config.num_classes])
    }

    /// Freezes or unfreezes the feature extractors (patch embeddings,
    /// encoder blocks and CNN backbones). Returns the number of tensors
    /// affected.
    pub fn freeze_extractors(&mut self, frozen: bool) -> usize {
        let mut n = 0;
        for i in 0..self.net.vits.len() {
            n += self.store.set_frozen(&format!("vit{i}.embed."), frozen);
            n += self.store.set_frozen(&format!("vit{i}.block"), frozen);
        }
        for i in 0..self.net.cnns.len() {
            n += self.store.set_frozen(&format!("cnn{i}.backbone."), frozen);
        }
        n
    }

    pub fn trainable_count(&self) -> usize {
        self.store.trainable_count()
    }

    /// Same model with parameters converted to another precision.
    pub fn cast<U: Scalar>(&self) -> FusionModel<U> {
        FusionModel {
            config: self.config.clone(),
            net: self.net.clone(),
            store: self.store.cast(),
        }
    }
}
