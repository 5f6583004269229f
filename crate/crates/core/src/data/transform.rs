use std::fmt;
use std::str::FromStr;

use super::image::{Image, Pixels};
use crate::error::{Error, Result};

/// Power-law intensity map `s = c · r^γ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GammaParams {
    pub c: f64,
    pub gamma: f64,
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams { c: 1.0, gamma: 1.1 }
    }
}

impl GammaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.c.is_finite() && self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma transform needs c > 0 and gamma > 0, got c={} gamma={}",
                self.c, self.gamma
            )));
        }
        Ok(())
    }
}

/// `s = clamp(c · r^γ, 0, 1)` on every channel of a normalized image.
pub fn gamma_transform(image: &Image, params: &GammaParams) -> Result<Image> {
    params.validate()?;
    let data = image
        .normalized_data()
        .ok_or_else(|| Error::Contract("gamma transform expects a normalized image".into()))?;
    let out = data
        .iter()
        .map(|&r| (params.c * (r as f64).powf(params.gamma)).clamp(0.0, 1.0) as f32)
        .collect();
    Ok(Image {
        height: image.height,
        width: image.width,
        channels: image.channels,
        pixels: Pixels::Normalized(out),
    })
}

/// Divides raw 8-bit pixels by 255.
pub fn normalize(image: &Image) -> Result<Image> {
    let data = image
        .raw_data()
        .ok_or_else(|| Error::Contract("image is already normalized".into()))?;
    Ok(Image {
        height: image.height,
        width: image.width,
        channels: image.channels,
        pixels: Pixels::Normalized(data.iter().map(|&v| v as f32 / 255.0).collect()),
    })
}

/// `out[i, j] = in[floor(i·H/out_h), floor(j·W/out_w)]`
pub fn resize_nearest(image: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::Dimension(format!(
            "resize target must be at least 1×1, got {out_h}×{out_w}"
        )));
    }
    let c = image.channels;
    let rows: Vec<usize> = (0..out_h).map(|i| i * image.height / out_h).collect();
    let cols: Vec<usize> = (0..out_w).map(|j| j * image.width / out_w).collect();
    fn gather<V: Copy>(src: &[V], rows: &[usize], cols: &[usize], width: usize, c: usize) -> Vec<V> {
        let mut out = Vec::with_capacity(rows.len() * cols.len() * c);
        for &r in rows {
            for &col in cols {
                let base = (r * width + col) * c;
                out.extend_from_slice(&src[base..base + c]);
            }
        }
        out
    }
    let pixels = match &image.pixels {
        Pixels::Raw(d) => Pixels::Raw(gather(d, &rows, &cols, image.width, c)),
        Pixels::Normalized(d) => Pixels::Normalized(gather(d, &rows, &cols, image.width, c)),
    };
    Ok(Image {
        height: out_h,
        width: out_w,
        channels: c,
        pixels,
    })
}

/// Where the resize happens relative to the gamma transform. Normalization
/// always comes first.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum PipelineOrder {
    #[default]
    GammaThenResize,
    ResizeThenGamma,
}

impl fmt::Display for PipelineOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PipelineOrder::GammaThenResize => "gamma_resize",
            PipelineOrder::ResizeThenGamma => "resize_gamma",
        })
    }
}

impl FromStr for PipelineOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gamma_resize" => Ok(PipelineOrder::GammaThenResize),
            "resize_gamma" => Ok(PipelineOrder::ResizeThenGamma),
            _ => Err(Error::Config(format!(
                "unknown pipeline order {s:?} (expected gamma_resize or resize_gamma)"
            ))),
        }
    }
}

/// Deterministic preprocessing applied to every image, train or test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    pub gamma: GammaParams,
    pub size: usize,
    pub order: PipelineOrder,
}

impl Preprocess {
    pub fn new(size: usize) -> Self {
        Preprocess {
            gamma: GammaParams::default(),
            size,
            order: PipelineOrder::default(),
        }
    }

    /// normalize → gamma → resize (or normalize → resize → gamma). Images
    /// that are already normalized skip the first step.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let unit = if image.is_normalized() {
            image.clone()
        } else {
            normalize(image)?
        };
        match self.order {
            PipelineOrder::GammaThenResize => {
                resize_nearest(&gamma_transform(&unit, &self.gamma)?, self.size, self.size)
            }
            PipelineOrder::ResizeThenGamma => {
                gamma_transform(&resize_nearest(&unit, self.size, self.size)?, &self.gamma)
            }
        }
    }
}
