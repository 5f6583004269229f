use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, Forward, ParamBuilder};
use crate::tensor::{Activation, Conv2dSpec, Scalar, Tensor, Var};

/// Smallest input side a backbone accepts.
pub const MIN_INPUT: usize = 16;

/// Toy analogues of the four pretrained extractors: plain conv stacks,
/// pre-activation residual units, densely connected stages and depthwise
/// separable stages.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Flavor {
    Plain,
    Residual,
    Dense,
    Separable,
}

impl Flavor {
    pub const ALL: [Flavor; 4] = [Flavor::Plain, Flavor::Residual, Flavor::Dense, Flavor::Separable];

    pub fn name(self) -> &'static str {
        match self {
            Flavor::Plain => "plain",
            Flavor::Residual => "residual",
            Flavor::Dense => "dense",
            Flavor::Separable => "sep",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Flavor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Flavor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Flavor::Plain),
            "residual" => Ok(Flavor::Residual),
            "dense" | "dense_connected" => Ok(Flavor::Dense),
            "sep" | "depthwise_separable" => Ok(Flavor::Separable),
            _ => Err(Error::Config(format!(
                "unknown backbone flavor {s:?} (expected plain, residual, dense or sep)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
enum Stage {
    /// Strided conv followed by a stride-1 conv.
    Plain([Conv2d; 2]),
    /// `y = subsample(x) + conv2(conv1(relu(x)))`
    Residual { conv1: Conv2d, conv2: Conv2d },
    /// 2×2 stride-2 transition, then layers whose outputs are concatenated
    /// onto the running feature map.
    Dense { transition: Conv2d, layers: Vec<Conv2d> },
    /// Two depthwise + pointwise pairs, the first strided and widening.
    Separable([Conv2d; 4]),
}

/// Convolutional feature extractor: a 3×3 stem followed by stride-2 stages.
#[derive(Clone, Debug)]
pub struct Backbone {
    pub flavor: Flavor,
    pub in_channels: usize,
    pub out_channels: usize,
    stem: Conv2d,
    stages: Vec<Stage>,
}

impl Backbone {
    /// `width` is the stem width; `growth`/`dense_layers` only affect the
    /// dense flavor.
    pub fn new<T: Scalar>(
        pb: &mut ParamBuilder<'_, T>,
        flavor: Flavor,
        in_channels: usize,
        width: usize,
        stages: usize,
        growth: usize,
        dense_layers: usize,
    ) -> Result<Self> {
        if stages == 0 || width == 0 {
            return Err(Error::Config(format!(
                "backbone needs at least one stage and a positive width (got {stages} stages, width {width})"
            )));
        }
        let conv3 = |stride| Conv2dSpec::new(stride, 1, 1);
        let stem = Conv2d::new(&mut pb.sub("stem"), in_channels, width, 3, conv3(1), Activation::Relu)?;
        let mut channels = width;
        let mut built = Vec::with_capacity(stages);
        for s in 0..stages {
            let mut pb = pb.sub(&format!("stage{s}"));
            let stage = match flavor {
                Flavor::Plain => Stage::Plain([
                    Conv2d::new(&mut pb.sub("conv0"), channels, channels, 3, conv3(2), Activation::Relu)?,
                    Conv2d::new(&mut pb.sub("conv1"), channels, channels, 3, conv3(1), Activation::Relu)?,
                ]),
                Flavor::Residual => Stage::Residual {
                    conv1: Conv2d::new(&mut pb.sub("conv0"), channels, channels, 3, conv3(2), Activation::Relu)?,
                    conv2: Conv2d::new(&mut pb.sub("conv1"), channels, channels, 3, conv3(1), Activation::Identity)?,
                },
                Flavor::Dense => {
                    let transition = Conv2d::new(
                        &mut pb.sub("transition"),
                        channels,
                        channels,
                        2,
                        Conv2dSpec::new(2, 1, 0),
                        Activation::Relu,
                    )?;
                    let mut layers = Vec::with_capacity(dense_layers);
                    for l in 0..dense_layers {
                        layers.push(Conv2d::new(
                            &mut pb.sub(&format!("layer{l}")),
                            channels,
                            growth,
                            3,
                            conv3(1),
                            Activation::Relu,
                        )?);
                        channels += growth;
                    }
                    Stage::Dense { transition, layers }
                }
                Flavor::Separable => {
                    let wide = channels * 2;
                    let stage = Stage::Separable([
                        Conv2d::new(
                            &mut pb.sub("dw0"),
                            channels,
                            channels,
                            3,
                            conv3(2).with_groups(channels),
                            Activation::Identity,
                        )?,
                        Conv2d::new(&mut pb.sub("pw0"), channels, wide, 1, Conv2dSpec::default(), Activation::Relu)?,
                        Conv2d::new(
                            &mut pb.sub("dw1"),
                            wide,
                            wide,
                            3,
                            conv3(1).with_groups(wide),
                            Activation::Identity,
                        )?,
                        Conv2d::new(&mut pb.sub("pw1"), wide, wide, 1, Conv2dSpec::default(), Activation::Relu)?,
                    ]);
                    channels = wide;
                    stage
                }
            };
            built.push(stage);
        }
        Ok(Backbone {
            flavor,
            in_channels,
            out_channels: channels,
            stem,
            stages: built,
        })
    }

    pub fn num_stages(&self) -> usize {
        self.stages.len()
    }

    /// Spatial side of the output for a square input of side `input`.
    pub fn output_size(&self, input: usize) -> Result<usize> {
        let factor = 1usize << self.stages.len();
        if input < MIN_INPUT || !input.is_multiple_of(factor) {
            return Err(Error::Dimension(format!(
                "{} backbone with {} stride-2 stages needs an input side of at least {MIN_INPUT} that is divisible by {factor}, got {input}",
                self.flavor,
                self.stages.len()
            )));
        }
        Ok(input / factor)
    }

    /// `[B, C, H, W] -> [B, C', H / 2^stages, W / 2^stages]`
    pub fn forward<T: Scalar>(&self, ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
        let shape = ctx.graph.shape(x).to_vec();
        if shape.len() != 4 || shape[1] != self.in_channels {
            return Err(Error::Dimension(format!(
                "backbone expects [B, {}, H, W], got {shape:?}",
                self.in_channels
            )));
        }
        self.output_size(shape[2])?;
        self.output_size(shape[3])?;
        let mut h = self.stem.forward(ctx, x)?;
        for stage in &self.stages {
            h = match stage {
                Stage::Plain([a, b]) => {
                    let y = a.forward(ctx, h)?;
                    b.forward(ctx, y)?
                }
                Stage::Residual { conv1, conv2 } => {
                    let pre = ctx.graph.relu(h);
                    let y = conv1.forward(ctx, pre)?;
                    let y = conv2.forward(ctx, y)?;
                    let skip = subsample(ctx, h)?;
                    ctx.graph.add(skip, y)?
                }
                Stage::Dense { transition, layers } => {
                    let mut y = transition.forward(ctx, h)?;
                    for layer in layers {
                        let new = layer.forward(ctx, y)?;
                        y = ctx.graph.concat(&[y, new], 1)?;
                    }
                    y
                }
                Stage::Separable(convs) => {
                    let mut y = h;
                    for c in convs {
                        y = c.forward(ctx, y)?;
                    }
                    y
                }
            };
        }
        if self.flavor == Flavor::Residual {
            h = ctx.graph.relu(h);
        }
        Ok(h)
    }
}

/// Identity shortcut at stride 2: keeps every other row and column.
fn subsample<T: Scalar>(ctx: &mut Forward<'_, T>, x: Var) -> Result<Var> {
    let channels = ctx.graph.shape(x)[1];
    let kernel = ctx.input(Tensor::ones(vec![channels, 1, 1, 1]));
    ctx.graph
        .conv2d(x, kernel, Conv2dSpec::new(2, 1, 0).with_groups(channels))
}
