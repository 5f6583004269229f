use super::context::Forward;
use super::param::{ParamBuilder, ParamId};
use crate::error::{Error, Result};
use crate::tensor::{Activation, Scalar, Var};

/// Penalty coefficients for a regularized dense layer.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerSpec {
    pub l2_kernel: f64,
    pub l2_activity: f64,
    pub l1_bias: f64,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            l2_kernel: 0.016,
            l2_activity: 0.006,
            l1_bias: 0.006,
        }
    }
}

impl RegularizerSpec {
    pub fn none() -> Self {
        RegularizerSpec {
            l2_kernel: 0.0,
            l2_activity: 0.0,
            l1_bias: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("l2_kernel", self.l2_kernel),
            ("l2_activity", self.l2_activity),
            ("l1_bias", self.l1_bias),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Fully connected layer, `activation(x · W + b)`.
#[derive(Clone, Debug)]
pub struct Dense {
    pub w: ParamId,
    pub b: ParamId,
    pub in_features: usize,
    pub out_features: usize,
    pub activation: Activation,
    pub regularizer: Option<RegularizerSpec>,
}

impl Dense {
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        in_features: usize,
        out_features: usize,
        activation: Activation,
        regularizer: Option<RegularizerSpec>,
    ) -> Result<Self> {
        if in_features == 0 || out_features == 0 {
            return Err(Error::Config(format!(
                "dense layer {} needs positive widths, got {in_features}->{out_features}",
                pb.prefix()
            )));
        }
        if let Some(r) = &regularizer {
            r.validate()?;
        }
        Ok(Dense {
            w: pb.glorot("w", &[in_features, out_features], in_features, out_features)?,
            b: pb.zeros("b", &[out_features])?,
            in_features,
            out_features,
            activation,
            regularizer,
        })
    }

    /// Accepts `[.., in]` and returns `[.., out]`.
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        if shape.len() < 2 || shape[shape.len() - 1] != self.in_features {
            return Err(Error::Dimension(format!(
                "dense layer expects [.., {}] input, got {shape:?}",
                self.in_features
            )));
        }
        let w = ctx.param(self.w);
        let b = ctx.param(self.b);
        let xw = ctx.graph.matmul(x, w)?;
        let z = ctx.graph.add(xw, b)?;
        let y = ctx.graph.activation(z, self.activation);
        if self.regularizer.is_some() {
            ctx.record_activity(self.w, y);
        }
        Ok(y)
    }

    /// Scalar penalty term for this layer, or `None` when unregularized:
    /// `l2_kernel·Σw² + l2_activity·mean_batch(Σa²) + l1_bias·Σ|b|`.
    pub fn penalty<T: Scalar>(&self, ctx: &mut Forward<'_, T>) -> Result<Option<Var>> {
        let Some(reg) = self.regularizer else {
            return Ok(None);
        };
        let w = ctx.param(self.w);
        let b = ctx.param(self.b);
        let w2 = ctx.graph.square(w);
        let w2 = ctx.graph.sum(w2);
        let mut total = ctx.graph.scale(w2, reg.l2_kernel);
        let b1 = ctx.graph.abs(b);
        let b1 = ctx.graph.sum(b1);
        let b1 = ctx.graph.scale(b1, reg.l1_bias);
        total = ctx.graph.add(total, b1)?;
        if reg.l2_activity > 0.0 {
            let records: Vec<Var> = ctx
                .activities()
                .iter()
                .filter(|r| r.layer == self.w)
                .map(|r| r.activity)
                .collect();
            if records.is_empty() {
                return Err(Error::State(
                    "activity penalty requested before any forward pass recorded activations"
                        .into(),
                ));
            }
            for a in records {
                let rows = ctx.graph.value(a).numel() / self.out_features;
                let a2 = ctx.graph.square(a);
                let a2 = ctx.graph.sum(a2);
                let a2 = ctx.graph.scale(a2, reg.l2_activity / rows as f64);
                total = ctx.graph.add(total, a2)?;
            }
        }
        Ok(Some(total))
    }
}
