//! Squeeze-and-excitation channel attention.
//!
//! Each channel `F_c` of a feature map is summarized by its spatial mean
//! `c_c`, the summaries pass through a two-layer bottleneck
//! `e = sigmoid(W_2 · relu(W_1 · c))`, and every channel is rescaled by its
//! gate: `R_c = e_c · F_c`.

use super::context::Forward;
use super::norm::global_average_pool;
use super::param::{ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Var};

#[derive(Clone, Debug)]
pub struct SeBlock {
    pub w1: ParamId,
    pub w2: ParamId,
    pub channels: usize,
    pub reduction: usize,
}

/// Recalibrated map plus the per-channel gates that produced it.
#[derive(Clone, Copy, Debug)]
pub struct SeOutput {
    pub output: Var,
    pub gates: Var,
}

impl SeBlock {
    pub const DEFAULT_REDUCTION: usize = 4;

    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, channels: usize, reduction: usize) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "SE block: {channels} channels are not divisible by reduction ratio {reduction}"
            )));
        }
        let hidden = channels / reduction;
        Ok(SeBlock {
            w1: pb.glorot("w1", &[channels, hidden], channels, hidden)?,
            w2: pb.glorot("w2", &[hidden, channels], hidden, channels)?,
            channels,
            reduction,
        })
    }

    pub fn hidden(&self) -> usize {
        self.channels / self.reduction
    }

    /// `f` is `[B, C, H, W]` or `[C, H, W]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, f: Var) -> Result<SeOutput> {
        let shape = ctx.graph.shape(f).to_vec();
        let c_axis = shape.len().wrapping_sub(3);
        if !(shape.len() == 3 || shape.len() == 4) || shape[c_axis] != self.channels {
            return Err(Error::Shape {
                op: "se_block",
                lhs: shape,
                rhs: vec![self.channels],
            });
        }
        let squeezed = global_average_pool(ctx, f)?;
        let batch = if shape.len() == 4 { shape[0] } else { 1 };
        let c = ctx.graph.reshape(squeezed, vec![batch, self.channels])?;
        let w1 = ctx.param(self.w1);
        let w2 = ctx.param(self.w2);
        let hidden = ctx.graph.matmul(c, w1)?;
        let hidden = ctx.graph.relu(hidden);
        let logits = ctx.graph.matmul(hidden, w2)?;
        let gates = ctx.graph.sigmoid(logits);
        let mut gshape = shape.clone();
        let r = gshape.len();
        gshape[r - 1] = 1;
        gshape[r - 2] = 1;
        let g = ctx.graph.reshape(gates, gshape)?;
        let output = ctx.graph.mul(f, g)?;
        Ok(SeOutput { output, gates })
    }
}
