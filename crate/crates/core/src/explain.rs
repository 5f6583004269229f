//! Grad-CAM attention maps over the spatial layers of a fusion model's CNN
//! stream.

use crate::data::{encode_pgm, Image};
use crate::error::{Error, Result};
use crate::model::FusionModel;
use crate::nn::{Forward, Mode};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_LAYER: &str = "se";

/// A class-activation map normalized by its maximum.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionMap {
    pub height: usize,
    pub width: usize,
    /// Row-major values in `[0, 1]`.
    pub values: Vec<f32>,
    pub target_layer: String,
    pub target_class: usize,
    /// Set when the rectified map was zero everywhere.
    pub all_zero: bool,
    /// Nearest-neighbour upsampling to the input size, as `(h, w, values)`.
    pub upsampled: Option<(usize, usize, Vec<f32>)>,
}

impl AttentionMap {
    /// `out[i, j] = map[floor(i·h/H), floor(j·w/W)]`
    pub fn upsample(&self, height: usize, width: usize) -> Vec<f32> {
        let mut out = Vec::with_capacity(height * width);
        for i in 0..height {
            let r = i * self.height / height;
            for j in 0..width {
                out.push(self.values[r * self.width + j * self.width / width]);
            }
        }
        out
    }

    /// The upsampled map if present, otherwise the map itself.
    fn display(&self) -> (usize, usize, &[f32]) {
        match &self.upsampled {
            Some((h, w, v)) => (*h, *w, v),
            None => (self.height, self.width, &self.values),
        }
    }

    /// Grayscale P5 file, 0 → black and 1 → white.
    pub fn to_pgm(&self) -> Result<Vec<u8>> {
        let (h, w, v) = self.display();
        encode_pgm(h, w, &v.iter().map(|&x| to_byte(x)).collect::<Vec<_>>())
    }

    /// The input and, to its right, the input blended half and half with a
    /// red heat image. The map must have the input's size, either itself or
    /// through its upsampled copy.
    pub fn overlay(&self, input: &Image) -> Result<Image> {
        let (h, w, heat) = self.display();
        if input.channels != 3 || (h, w) != (input.height, input.width) {
            return Err(Error::Dimension(format!(
                "cannot overlay a {h}×{w} map on a {}×{}×{} image",
                input.height, input.width, input.channels
            )));
        }
        let src = input.to_u8();
        let mut out = Vec::with_capacity(src.len() * 2);
        for r in 0..h {
            let row = &src[r * w * 3..(r + 1) * w * 3];
            out.extend_from_slice(row);
            for (c, px) in row.chunks(3).enumerate() {
                let red = to_byte(heat[r * w + c]);
                let blend = |a: u8, b: u8| (a as u16 + b as u16).div_ceil(2) as u8;
                out.extend_from_slice(&[blend(px[0], red), blend(px[1], 0), blend(px[2], 0)]);
            }
        }
        Image::raw(h, 2 * w, 3, out)
    }
}

fn to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// The Grad-CAM reduction for one image: `activations` and `gradients` are
/// `[C, h, w]`. Channel weights are the spatial means of the gradients; the
/// map is `relu(Σ_c weight_c · activation_c)` divided by its maximum.
pub fn cam_from_activations<T: Scalar>(
    activations: &Tensor<T>,
    gradients: &Tensor<T>,
    target_layer: &str,
    target_class: usize,
) -> Result<AttentionMap> {
    if activations.rank() != 3 || activations.shape() != gradients.shape() {
        return Err(Error::Shape {
            op: "grad_cam",
            lhs: activations.shape().to_vec(),
            rhs: gradients.shape().to_vec(),
        });
    }
    let (c, h, w) = (activations.shape()[0], activations.shape()[1], activations.shape()[2]);
    let plane = h * w;
    let mut cam = vec![0.0f64; plane];
    for ch in 0..c {
        let g = &gradients.data()[ch * plane..(ch + 1) * plane];
        let weight = g.iter().map(|v| v.as_f64()).sum::<f64>() / plane as f64;
        let a = &activations.data()[ch * plane..(ch + 1) * plane];
        for (m, v) in cam.iter_mut().zip(a) {
            *m += weight * v.as_f64();
        }
    }
    let max = cam.iter().fold(0.0f64, |m, &v| m.max(v));
    let all_zero = max <= 0.0 || !max.is_finite();
    let values = cam
        .iter()
        .map(|&v| if all_zero { 0.0 } else { (v.max(0.0) / max) as f32 })
        .collect();
    Ok(AttentionMap {
        height: h,
        width: w,
        values,
        target_layer: target_layer.to_string(),
        target_class,
        all_zero,
        upsampled: None,
    })
}

/// Grad-CAM of `target_class` at the named CNN-stream layer for one
/// `[C, H, W]` image, upsampled to the input size. Runs in inference mode.
pub fn grad_cam<T: Scalar>(
    model: &FusionModel<T>,
    image: &Tensor<T>,
    target_class: usize,
    layer: &str,
) -> Result<AttentionMap> {
    let shape = image.shape().to_vec();
    if shape.len() != 3 {
        return Err(Error::Dimension(format!("expected a [C, H, W] image, got {shape:?}")));
    }
    let k = model.num_classes();
    if target_class >= k {
        return Err(Error::Contract(format!(
            "target class {target_class} is out of range for {k} classes"
        )));
    }
    let mut ctx = Forward::new(&model.store, Mode::Eval).track_all_params();
    let x = ctx.input(image.clone().reshape([1, shape[0], shape[1], shape[2]])?);
    let out = model.forward(&mut ctx, x)?;
    let Some(tap) = out.tap(layer) else {
        let valid: Vec<&str> = out.taps.iter().map(|(n, _)| n.as_str()).collect();
        return Err(Error::Config(format!(
            "{layer:?} is not a spatial CNN-stream layer; valid layers: {}",
            valid.join(", ")
        )));
    };
    let select = ctx.input(Tensor::from_fn(vec![1, k], |i| {
        if i == target_class {
            T::one()
        } else {
            T::zero()
        }
    }));
    let picked = ctx.graph.mul(out.logits, select)?;
    let score = ctx.graph.sum(picked);
    ctx.backward(score)?;

    let acts = ctx.graph.value(tap);
    let tap_shape = acts.shape()[1..].to_vec();
    let acts = acts.clone().reshape(tap_shape.clone())?;
    let grads = match ctx.graph.grad(tap) {
        Some(g) => Tensor::new(tap_shape, g.to_vec())?,
        None => Tensor::zeros(tap_shape),
    };
    let mut map = cam_from_activations(&acts, &grads, layer, target_class)?;
    map.upsampled = Some((shape[1], shape[2], map.upsample(shape[1], shape[2])));
    Ok(map)
}
