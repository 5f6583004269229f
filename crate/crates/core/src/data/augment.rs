//! Random affine augmentation: rotation, shift, shear, zoom and horizontal
//! flip, composed into one 2×3 inverse map and applied once.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::image::{Image, Pixels};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentConfig {
    /// Maximum absolute rotation in degrees.
    pub rotation_deg: f64,
    /// Maximum shift as a fraction of the image side.
    pub shift_frac: f64,
    /// Maximum absolute shear angle in radians.
    pub shear: f64,
    /// Zoom factor is drawn from `[1 - zoom_frac, 1 + zoom_frac]`.
    pub zoom_frac: f64,
    pub hflip: bool,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_deg: 40.0,
            shift_frac: 0.2,
            shear: 0.2,
            zoom_frac: 0.2,
            hflip: true,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    /// Every range zero and no flip.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_deg: 0.0,
            shift_frac: 0.0,
            shear: 0.0,
            zoom_frac: 0.0,
            hflip: false,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must lie in [0, 1), got {v}")))
            }
        };
        unit("shift_frac", self.shift_frac)?;
        unit("zoom_frac", self.zoom_frac)?;
        unit("shear", self.shear)?;
        if !(0.0..360.0).contains(&self.rotation_deg) {
            return Err(Error::Config(format!(
                "rotation_deg must lie in [0, 360), got {}",
                self.rotation_deg
            )));
        }
        Ok(())
    }
}

/// One concrete draw of the augmentation parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineParams {
    pub rotation_rad: f64,
    /// Shift in pixels along x (columns) and y (rows).
    pub shift: (f64, f64),
    pub shear_rad: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl AffineParams {
    pub const IDENTITY: AffineParams = AffineParams {
        rotation_rad: 0.0,
        shift: (0.0, 0.0),
        shear_rad: 0.0,
        zoom: 1.0,
        flip: false,
    };

    /// Draws rotation, x shift, y shift, shear, zoom and flip, in that order.
    pub fn sample(cfg: &AugmentConfig, height: usize, width: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut sym = |limit: f64| rng.gen_range(-limit..=limit);
        let rotation_rad = sym(cfg.rotation_deg).to_radians();
        let tx = sym(cfg.shift_frac) * width as f64;
        let ty = sym(cfg.shift_frac) * height as f64;
        let shear_rad = sym(cfg.shear);
        let zoom = 1.0 + sym(cfg.zoom_frac);
        let flip = cfg.hflip && rng.gen_bool(0.5);
        AffineParams {
            rotation_rad,
            shift: (tx, ty),
            shear_rad,
            zoom,
            flip,
        }
    }

    /// Forward linear part: rotation · shear · zoom · flip, about the image
    /// centre.
    fn forward_linear(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        let rot = [[c, -s], [s, c]];
        let shear = [[1.0, -self.shear_rad.sin()], [0.0, self.shear_rad.cos()]];
        let f = if self.flip { -1.0 } else { 1.0 };
        let scale = [[self.zoom * f, 0.0], [0.0, self.zoom]];
        mul2(mul2(rot, shear), scale)
    }

    /// 2×3 matrix taking output pixel-centre coordinates (relative to the
    /// centre) to input coordinates.
    pub fn inverse_matrix(&self) -> [[f64; 3]; 2] {
        let [[a, b], [c, d]] = self.forward_linear();
        let det = a * d - b * c;
        let inv = [[d / det, -b / det], [-c / det, a / det]];
        let (tx, ty) = self.shift;
        [
            [inv[0][0], inv[0][1], -(inv[0][0] * tx + inv[0][1] * ty)],
            [inv[1][0], inv[1][1], -(inv[1][0] * tx + inv[1][1] * ty)],
        ]
    }

    /// Nearest-neighbour inverse warp with zero fill.
    pub fn apply(&self, image: &Image) -> Result<Image> {
        let data = image
            .normalized_data()
            .ok_or_else(|| Error::Contract("augmentation expects a normalized image".into()))?;
        let (h, w, ch) = (image.height, image.width, image.channels);
        let m = self.inverse_matrix();
        let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
        let mut out = vec![0.0f32; data.len()];
        for row in 0..h {
            let v = row as f64 + 0.5 - cy;
            for col in 0..w {
                let u = col as f64 + 0.5 - cx;
                let sx = (m[0][0] * u + m[0][1] * v + m[0][2] + cx).floor();
                let sy = (m[1][0] * u + m[1][1] * v + m[1][2] + cy).floor();
                if sx < 0.0 || sy < 0.0 || sx >= w as f64 || sy >= h as f64 {
                    continue;
                }
                let src = image.index(sy as usize, sx as usize, 0);
                let dst = image.index(row, col, 0);
                out[dst..dst + ch].copy_from_slice(&data[src..src + ch]);
            }
        }
        Ok(Image {
            height: h,
            width: w,
            channels: ch,
            pixels: Pixels::Normalized(out),
        })
    }
}

fn mul2(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [a[0][0] * b[0][0] + a[0][1] * b[1][0], a[0][0] * b[0][1] + a[0][1] * b[1][1]],
        [a[1][0] * b[0][0] + a[1][1] * b[1][0], a[1][0] * b[0][1] + a[1][1] * b[1][1]],
    ]
}

/// Draws one affine map from `rng` and applies it.
pub fn augment(image: &Image, cfg: &AugmentConfig, rng: &mut ChaCha8Rng) -> Result<Image> {
    if !image.is_normalized() {
        return Err(Error::Contract("augmentation expects a normalized image".into()));
    }
    AffineParams::sample(cfg, image.height, image.width, rng).apply(image)
}
