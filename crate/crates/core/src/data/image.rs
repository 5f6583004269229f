use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interleaved (HWC) pixel storage.
#[derive(Clone, Debug, PartialEq)]
pub enum Pixels {
    /// 8-bit channels as read from disk.
    Raw(Vec<u8>),
    /// Unit-interval floats.
    Normalized(Vec<f32>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Pixels,
}

impl Image {
    pub fn raw(height: usize, width: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(height, width, channels, data.len())?;
        Ok(Image {
            height,
            width,
            channels,
            pixels: Pixels::Raw(data),
        })
    }

    /// Normalized image; every value must lie in `[0, 1]`.
    pub fn normalized(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        check_dims(height, width, channels, data.len())?;
        if let Some(bad) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Contract(format!(
                "normalized pixel {bad} lies outside [0, 1]"
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            pixels: Pixels::Normalized(data),
        })
    }

    pub fn is_normalized(&self) -> bool {
        matches!(self.pixels, Pixels::Normalized(_))
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn index(&self, row: usize, col: usize, channel: usize) -> usize {
        (row * self.width + col) * self.channels + channel
    }

    pub fn raw_data(&self) -> Option<&[u8]> {
        match &self.pixels {
            Pixels::Raw(d) => Some(d),
            Pixels::Normalized(_) => None,
        }
    }

    pub fn normalized_data(&self) -> Option<&[f32]> {
        match &self.pixels {
            Pixels::Normalized(d) => Some(d),
            Pixels::Raw(_) => None,
        }
    }

    /// 8-bit view: raw pixels as stored, normalized pixels scaled by 255
    /// and rounded.
    pub fn to_u8(&self) -> Vec<u8> {
        match &self.pixels {
            Pixels::Raw(d) => d.clone(),
            Pixels::Normalized(d) => d.iter().map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8).collect(),
        }
    }

    /// Planar `[C, H, W]` tensor of a normalized image.
    pub fn to_chw(&self) -> Result<Tensor<f32>> {
        let data = self.normalized_data().ok_or_else(|| {
            Error::Contract("model input must be a normalized image".into())
        })?;
        let (h, w, c) = (self.height, self.width, self.channels);
        Ok(Tensor::from_fn(vec![c, h, w], |i| {
            let (ch, rest) = (i / (h * w), i % (h * w));
            data[rest * c + ch]
        }))
    }
}

fn check_dims(height: usize, width: usize, channels: usize, len: usize) -> Result<()> {
    if height == 0 || width == 0 || channels == 0 {
        return Err(Error::Dimension(format!(
            "image dimensions must be positive, got {height}×{width}×{channels}"
        )));
    }
    if height * width * channels != len {
        return Err(Error::Dimension(format!(
            "{height}×{width}×{channels} image needs {} values, got {len}",
            height * width * channels
        )));
    }
    Ok(())
}
