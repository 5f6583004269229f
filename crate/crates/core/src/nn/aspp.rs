//! Atrous spatial pyramid pooling: parallel dilated 3×3 convolutions,
//! concatenated along channels and merged by a 1×1 projection.

use super::context::Forward;
use super::conv::Conv2d;
use super::param::ParamBuilder;
use crate::error::{Error, Result};
use crate::tensor::{Activation, Scalar, Var};

pub const ASPP_DILATIONS: [usize; 4] = [2, 3, 5, 7];

#[derive(Clone, Debug)]
pub struct Aspp {
    pub branches: Vec<Conv2d>,
    pub projection: Conv2d,
    pub in_channels: usize,
    pub branch_channels: usize,
    pub out_channels: usize,
}

impl Aspp {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        in_channels: usize,
        branch_channels: usize,
        out_channels: usize,
    ) -> Result<Self> {
        let branches = ASPP_DILATIONS
            .iter()
            .map(|&d| {
                // padding = dilation keeps H×W for a 3×3 kernel.
                Conv2d::same(
                    &mut pb.sub(&format!("branch{d}")),
                    in_channels,
                    branch_channels,
                    3,
                    d,
                    Activation::Relu,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let projection = Conv2d::same(
            &mut pb.sub("project"),
            branch_channels * ASPP_DILATIONS.len(),
            out_channels,
            1,
            1,
            Activation::Relu,
        )?;
        Ok(Aspp {
            branches,
            projection,
            in_channels,
            branch_channels,
            out_channels,
        })
    }

    pub fn branch_forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Vec<Var>> {
        self.branches.iter().map(|b| b.forward(ctx, x)).collect()
    }

    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let in_shape = ctx.graph.shape(x).to_vec();
        let outs = self.branch_forward(ctx, x)?;
        let r = in_shape.len();
        for (&d, &o) in ASPP_DILATIONS.iter().zip(&outs) {
            let s = ctx.graph.shape(o);
            if s[s.len() - 2..] != in_shape[r - 2..] {
                return Err(Error::Contract(format!(
                    "ASPP branch with dilation {d} changed spatial shape {:?} -> {:?}",
                    &in_shape[r - 2..],
                    &s[s.len() - 2..]
                )));
            }
        }
        let merged = ctx.graph.concat(&outs, r - 3)?;
        self.projection.forward(ctx, merged)
    }
}
