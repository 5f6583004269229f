use super::context::{BatchNormUpdate, Forward};
use super::param::{ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor, Var};

/// Batch normalization over axis 1 of `[B, C]` or `[B, C, H, W]` inputs.
#[derive(Clone, Debug)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
}

impl BatchNorm {
    pub const MOMENTUM: f64 = 0.99;
    pub const EPSILON: f64 = 0.001;

    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, channels: usize) -> Result<Self> {
        Self::with_params(pb, channels, Self::MOMENTUM, Self::EPSILON)
    }

    pub fn with_params<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        channels: usize,
        momentum: f64,
        epsilon: f64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&momentum) || epsilon <= 0.0 {
            return Err(Error::Config(format!(
                "batch norm needs momentum in [0,1) and epsilon > 0, got {momentum}, {epsilon}"
            )));
        }
        Ok(BatchNorm {
            gamma: pb.ones("gamma", &[channels])?,
            beta: pb.zeros("beta", &[channels])?,
            running_mean: pb.buffer("running_mean", Tensor::zeros(vec![channels]))?,
            running_var: pb.buffer("running_var", Tensor::ones(vec![channels]))?,
            channels,
            momentum,
            epsilon,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        if shape.len() < 2 || shape[1] != self.channels {
            return Err(Error::Shape {
                op: "batch_norm",
                lhs: shape,
                rhs: vec![self.channels],
            });
        }
        // Per-channel tensors broadcast as [1, C, 1, ..].
        let mut bshape = vec![1; shape.len()];
        bshape[1] = self.channels;
        let axes: Vec<usize> = (0..shape.len()).filter(|&a| a != 1).collect();

        let (centered, denom) = if ctx.training() {
            if shape[0] < 2 {
                return Err(Error::Contract(format!(
                    "batch norm in training mode needs a batch of at least 2, got {}",
                    shape[0]
                )));
            }
            let mean = ctx.graph.mean_axes(x, &axes)?;
            let centered = ctx.graph.sub(x, mean)?;
            let sq = ctx.graph.square(centered);
            let var = ctx.graph.mean_axes(sq, &axes)?;
            ctx.record_bn_update(BatchNormUpdate {
                running_mean: self.running_mean,
                running_var: self.running_var,
                batch_mean: ctx.graph.value(mean).data().to_vec(),
                batch_var: ctx.graph.value(var).data().to_vec(),
                momentum: self.momentum,
            });
            let var_eps = ctx.graph.add_scalar(var, self.epsilon);
            (centered, ctx.graph.sqrt(var_eps))
        } else {
            let eps = T::lit(self.epsilon);
            let store = ctx.store();
            let mean = store.get(self.running_mean).clone().reshape(bshape.clone())?;
            let std = store
                .get(self.running_var)
                .map(|v| (v + eps).sqrt())
                .reshape(bshape.clone())?;
            let mean = ctx.input(mean);
            let std = ctx.input(std);
            (ctx.graph.sub(x, mean)?, std)
        };
        let xhat = ctx.graph.div(centered, denom)?;
        let gamma = ctx.param(self.gamma);
        let gamma = ctx.graph.reshape(gamma, bshape.clone())?;
        let beta = ctx.param(self.beta);
        let beta = ctx.graph.reshape(beta, bshape)?;
        let scaled = ctx.graph.mul(xhat, gamma)?;
        ctx.graph.add(scaled, beta)
    }
}

/// Layer normalization over the last axis.
#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub dim: usize,
    pub epsilon: f64,
}

impl LayerNorm {
    pub fn new<T: Scalar>(pb: &mut ParamBuilder<'_, T>, dim: usize) -> Result<Self> {
        Ok(LayerNorm {
            gamma: pb.ones("gamma", &[dim])?,
            beta: pb.zeros("beta", &[dim])?,
            dim,
            epsilon: 1e-5,
        })
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        let last = shape.len() - 1;
        if shape[last] != self.dim {
            return Err(Error::Shape {
                op: "layer_norm",
                lhs: shape,
                rhs: vec![self.dim],
            });
        }
        let mean = ctx.graph.mean_axes(x, &[last])?;
        let centered = ctx.graph.sub(x, mean)?;
        let sq = ctx.graph.square(centered);
        let var = ctx.graph.mean_axes(sq, &[last])?;
        let var = ctx.graph.add_scalar(var, self.epsilon);
        let std = ctx.graph.sqrt(var);
        let xhat = ctx.graph.div(centered, std)?;
        let gamma = ctx.param(self.gamma);
        let beta = ctx.param(self.beta);
        let y = ctx.graph.mul(xhat, gamma)?;
        ctx.graph.add(y, beta)
    }
}

/// Mean over the spatial axes: `[B, C, H, W] -> [B, C]` or `[C, H, W] -> [C]`.
pub fn global_average_pool<T: Scalar>(ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
    let shape = ctx.graph.shape(x).to_vec();
    let r = shape.len();
    if r != 3 && r != 4 {
        return Err(Error::Dimension(format!(
            "global average pool expects [C, H, W] or [B, C, H, W], got {shape:?}"
        )));
    }
    let pooled = ctx.graph.mean_axes(x, &[r - 2, r - 1])?;
    ctx.graph.reshape(pooled, shape[..r - 2].to_vec())
}
