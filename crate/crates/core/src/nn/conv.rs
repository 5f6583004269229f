use super::context::Forward;
use super::param::{ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Conv2dSpec, Scalar, Var};

/// Square-kernel 2-D convolution with bias and an optional activation.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub spec: Conv2dSpec,
    pub activation: Activation,
}

impl Conv2d {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        spec: Conv2dSpec,
        activation: Activation,
    ) -> Result<Self> {
        if kernel == 0 || !in_channels.is_multiple_of(spec.groups) || !out_channels.is_multiple_of(spec.groups) {
            return Err(Error::Config(format!(
                "conv {}: {in_channels}->{out_channels} channels, kernel {kernel}, groups {}",
                pb.prefix(),
                spec.groups
            )));
        }
        let per_group = in_channels / spec.groups;
        let fan_in = per_group * kernel * kernel;
        Ok(Conv2d {
            weight: pb.he("w", &[out_channels, per_group, kernel, kernel], fan_in)?,
            bias: pb.zeros("b", &[out_channels])?,
            in_channels,
            out_channels,
            kernel,
            spec,
            activation,
        })
    }

    /// Stride-1 convolution that keeps the spatial size (odd kernels only).
    pub fn same<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        dilation: usize,
        activation: Activation,
    ) -> Result<Self> {
        let padding = dilation * (kernel - 1) / 2;
        Self::new(
            pb,
            in_channels,
            out_channels,
            kernel,
            Conv2dSpec::new(1, dilation, padding),
            activation,
        )
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let w = ctx.param(self.weight);
        let y = ctx.graph.conv2d(x, w, self.spec)?;
        let rank = ctx.graph.shape(y).len();
        let b = ctx.param(self.bias);
        let mut bshape = vec![self.out_channels, 1, 1];
        if rank == 4 {
            bshape.insert(0, 1);
        }
        let b = ctx.graph.reshape(b, bshape)?;
        let y = ctx.graph.add(y, b)?;
        Ok(ctx.graph.activation(y, self.activation))
    }
}
