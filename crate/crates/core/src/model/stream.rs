use crate::error::Result;
use crate::nn::{
    global_average_pool, Aspp, BatchNorm, Dense, Forward, ParamBuilder, PatchEmbed, RegularizerSpec,
    SeBlock, TransformerBlock,
};
use crate::tensor::{Activation, Scalar, Var};

use super::backbone::Backbone;
use super::config::ModelConfig;

/// Three relu layers; only the first carries the regularizers.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: [Dense; 3],
}

impl Mlp {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, input: usize, widths: [usize; 3]) -> Result<Self> {
        Ok(Mlp {
            layers: [
                Dense::new(
                    &mut pb.sub("fc0"),
                    input,
                    widths[0],
                    Activation::Relu,
                    Some(RegularizerSpec::default()),
                )?,
                Dense::new(&mut pb.sub("fc1"), widths[0], widths[1], Activation::Relu, None)?,
                Dense::new(&mut pb.sub("fc2"), widths[1], widths[2], Activation::Relu, None)?,
            ],
        })
    }

    pub fn out_features(&self) -> usize {
        self.layers[2].out_features
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let mut h = x;
        for layer in &self.layers {
            h = layer.forward(ctx, h)?;
        }
        Ok(h)
    }

    pub fn penalty<T: Scalar>(&self, ctx: &mut Forward<'_, T>) -> Result<Option<Var>> {
        self.layers[0].penalty(ctx)
    }
}

/// Patch embedding, encoder blocks, token mean, batch norm, MLP.
#[derive(Clone, Debug)]
pub struct TransformerStream {
    pub embed: PatchEmbed,
    pub blocks: Vec<TransformerBlock>,
    pub bn: BatchNorm,
    pub mlp: Mlp,
}

impl TransformerStream {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let embed = PatchEmbed::new(
            &mut pb.sub("embed"),
            cfg.image_size,
            cfg.channels,
            cfg.patch_size,
            cfg.embed_dim,
        )?;
        let blocks = (0..cfg.depth)
            .map(|i| TransformerBlock::new(&mut pb.sub(&format!("block{i}")), cfg.embed_dim, cfg.heads))
            .collect::<Result<Vec<_>>>()?;
        Ok(TransformerStream {
            embed,
            blocks,
            bn: BatchNorm::new(&mut pb.sub("bn"), cfg.embed_dim)?,
            mlp: Mlp::new(&mut pb.sub("mlp"), cfg.embed_dim, cfg.mlp_widths())?,
        })
    }

    /// `[B, C, H, W] -> [B, mlp_out]`
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, images: Var) -> Result<Var> {
        let mut tokens = self.embed.forward(ctx, images)?;
        for block in &self.blocks {
            tokens = block.forward(ctx, tokens)?;
        }
        let batch = ctx.graph.shape(tokens)[0];
        let pooled = ctx.graph.mean_axes(tokens, &[1])?;
        let pooled = ctx.graph.reshape(pooled, vec![batch, self.embed.dim])?;
        let normed = self.bn.forward(ctx, pooled)?;
        self.mlp.forward(ctx, normed)
    }
}

/// Intermediate spatial maps of a CNN stream, kept for attribution.
#[derive(Clone, Copy, Debug)]
pub struct CnnTaps {
    pub backbone: Var,
    pub aspp: Var,
    pub se: Var,
}

/// Backbone → ASPP → SE → GAP → BN → MLP.
#[derive(Clone, Debug)]
pub struct CnnStream {
    pub backbone: Backbone,
    pub aspp: Aspp,
    pub se: SeBlock,
    pub bn: BatchNorm,
    pub mlp: Mlp,
}

impl CnnStream {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        cfg: &ModelConfig,
        flavor: super::Flavor,
    ) -> Result<Self> {
        let backbone = Backbone::new(
            &mut pb.sub("backbone"),
            flavor,
            cfg.channels,
            cfg.cnn_width,
            cfg.stages,
            cfg.dense_growth,
            cfg.dense_layers,
        )?;
        let aspp = Aspp::new(
            &mut pb.sub("aspp"),
            backbone.out_channels,
            cfg.aspp_branch_channels,
            cfg.aspp_channels,
        )?;
        Ok(CnnStream {
            backbone,
            aspp,
            se: SeBlock::new(&mut pb.sub("se"), cfg.aspp_channels, cfg.se_reduction)?,
            bn: BatchNorm::new(&mut pb.sub("bn"), cfg.aspp_channels)?,
            mlp: Mlp::new(&mut pb.sub("mlp"), cfg.aspp_channels, cfg.mlp_widths())?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, images: Var) -> Result<(Var, CnnTaps)> {
        let features = self.backbone.forward(ctx, images)?;
        let aspp = self.aspp.forward(ctx, features)?;
        let se = self.se.forward(ctx, aspp)?.output;
        let pooled = global_average_pool(ctx, se)?;
        let normed = self.bn.forward(ctx, pooled)?;
        let out = self.mlp.forward(ctx, normed)?;
        Ok((
            out,
            CnnTaps {
                backbone: features,
                aspp,
                se,
            },
        ))
    }
}
