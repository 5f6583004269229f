use super::context::Forward;
use super::dense::Dense;
use super::norm::LayerNorm;
use super::param::{ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Scalar, Var};

/// Splits an image into square patches and projects each one to a token.
#[derive(Clone, Debug)]
pub struct PatchEmbed {
    pub patch_size: usize,
    pub channels: usize,
    pub image_size: usize,
    pub dim: usize,
    pub projection: ParamId,
    pub positional: ParamId,
}

impl PatchEmbed {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        image_size: usize,
        channels: usize,
        patch_size: usize,
        dim: usize,
    ) -> Result<Self> {
        check_divisible(image_size, image_size, patch_size)?;
        let tokens = (image_size / patch_size).pow(2);
        let feat = patch_size * patch_size * channels;
        Ok(PatchEmbed {
            patch_size,
            channels,
            image_size,
            dim,
            projection: pb.glorot("proj", &[feat, dim], feat, dim)?,
            positional: pb.uniform("pos", &[tokens, dim], 0.02 * 3f64.sqrt())?,
        })
    }

    pub fn num_tokens(&self) -> usize {
        (self.image_size / self.patch_size).pow(2)
    }

    /// `[B, C, H, W]` (or `[C, H, W]`) to `[B, T, D]` (or `[T, D]`).
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, img: Var) -> Result<Var> {
        let shape = ctx.graph.shape(img).to_vec();
        let unbatched = shape.len() == 3;
        let (h, w) = match shape.as_slice() {
            &[c, h, w] | &[_, c, h, w] if c == self.channels => (h, w),
            _ => {
                return Err(Error::Shape {
                    op: "patch_embed",
                    lhs: shape,
                    rhs: vec![self.channels, self.image_size, self.image_size],
                })
            }
        };
        check_divisible(h, w, self.patch_size)?;
        if h != self.image_size || w != self.image_size {
            return Err(Error::Dimension(format!(
                "patch embedding was built for {0}x{0} images, got {h}x{w}",
                self.image_size
            )));
        }
        let x = if unbatched {
            ctx.graph.reshape(img, vec![1, shape[0], h, w])?
        } else {
            img
        };
        let patches = ctx.graph.patchify(x, self.patch_size)?;
        let proj = ctx.param(self.projection);
        let tokens = ctx.graph.matmul(patches, proj)?;
        let pos = ctx.param(self.positional);
        let out = ctx.graph.add(tokens, pos)?;
        if unbatched {
            ctx.graph.reshape(out, vec![self.num_tokens(), self.dim])
        } else {
            Ok(out)
        }
    }
}

fn check_divisible(h: usize, w: usize, patch: usize) -> Result<()> {
    if patch == 0 {
        return Err(Error::Config("patch size must be positive".into()));
    }
    for (name, n) in [("height", h), ("width", w)] {
        if n % patch != 0 {
            let lower = n / patch * patch;
            let upper = lower + patch;
            let suggestion = if lower > 0 {
                format!("{lower} or {upper}")
            } else {
                upper.to_string()
            };
            return Err(Error::Dimension(format!(
                "image {name} {n} is not divisible by patch size {patch}; try {suggestion}"
            )));
        }
    }
    Ok(())
}

/// Multi-head scaled dot-product self-attention without biases.
#[derive(Clone, Debug)]
pub struct Attention {
    pub heads: usize,
    pub dim: usize,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub output: Var,
    /// Row-stochastic weights, `[B·heads, T, T]`.
    pub weights: Var,
}

impl Attention {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "attention width {dim} is not divisible by {heads} heads"
            )));
        }
        Ok(Attention {
            heads,
            dim,
            wq: pb.glorot("wq", &[dim, dim], dim, dim)?,
            wk: pb.glorot("wk", &[dim, dim], dim, dim)?,
            wv: pb.glorot("wv", &[dim, dim], dim, dim)?,
            wo: pb.glorot("wo", &[dim, dim], dim, dim)?,
        })
    }

    /// Tokens are `[B, T, D]` or `[T, D]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, tokens: Var) -> Result<AttentionOutput> {
        let shape = ctx.graph.shape(tokens).to_vec();
        let (batch, t, d) = match *shape.as_slice() {
            [t, d] => (1, t, d),
            [b, t, d] => (b, t, d),
            _ => return Err(Error::Dimension(format!("attention expects [B, T, D], got {shape:?}"))),
        };
        if d != self.dim {
            return Err(Error::Shape {
                op: "attention",
                lhs: shape,
                rhs: vec![self.dim],
            });
        }
        let (h, dh) = (self.heads, self.dim / self.heads);
        let wq = ctx.param(self.wq);
        let wk = ctx.param(self.wk);
        let wv = ctx.param(self.wv);
        let wo = ctx.param(self.wo);
        let g = &mut ctx.graph;
        let x = g.reshape(tokens, vec![batch, t, d])?;

        // [B, T, D] -> [B·H, T, dh]
        let split = |g: &mut crate::tensor::Graph<T>, v: Var, perm: &[usize], last: [usize; 2]| -> Result<Var> {
            let v = g.reshape(v, vec![batch, t, h, dh])?;
            let v = g.permute(v, perm)?;
            g.reshape(v, vec![batch * h, last[0], last[1]])
        };
        let q = g.matmul(x, wq)?;
        let q = split(g, q, &[0, 2, 1, 3], [t, dh])?;
        let k = g.matmul(x, wk)?;
        let kt = split(g, k, &[0, 2, 3, 1], [dh, t])?;
        let v = g.matmul(x, wv)?;
        let v = split(g, v, &[0, 2, 1, 3], [t, dh])?;

        let scores = g.matmul(q, kt)?;
        let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = g.softmax(scores)?;
        let mixed = g.matmul(weights, v)?;
        let mixed = g.reshape(mixed, vec![batch, h, t, dh])?;
        let mixed = g.permute(mixed, &[0, 2, 1, 3])?;
        let mixed = g.reshape(mixed, vec![batch, t, d])?;
        let out = g.matmul(mixed, wo)?;
        let output = g.reshape(out, shape)?;
        Ok(AttentionOutput { output, weights })
    }
}

/// Pre-norm encoder block: `x + attn(LN(x))`, then `+ MLP(LN(·))` with a
/// 4× relu hidden layer.
#[derive(Clone, Debug)]
pub struct TransformerBlock {
    pub ln1: LayerNorm,
    pub attn: Attention,
    pub ln2: LayerNorm,
    pub fc1: Dense,
    pub fc2: Dense,
}

impl TransformerBlock {
    pub const MLP_RATIO: usize = 4;

    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, dim: usize, heads: usize) -> Result<Self> {
        let hidden = dim * Self::MLP_RATIO;
        Ok(TransformerBlock {
            ln1: LayerNorm::new(&mut pb.sub("ln1"), dim)?,
            attn: Attention::new(&mut pb.sub("attn"), dim, heads)?,
            ln2: LayerNorm::new(&mut pb.sub("ln2"), dim)?,
            fc1: Dense::new(&mut pb.sub("fc1"), dim, hidden, Activation::Relu, None)?,
            fc2: Dense::new(&mut pb.sub("fc2"), hidden, dim, Activation::Identity, None)?,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let n = self.ln1.forward(ctx, x)?;
        let a = self.attn.forward(ctx, n)?.output;
        let x = ctx.graph.add(x, a)?;
        let n = self.ln2.forward(ctx, x)?;
        let m = self.fc1.forward(ctx, n)?;
        let m = self.fc2.forward(ctx, m)?;
        ctx.graph.add(x, m)
    }
}
