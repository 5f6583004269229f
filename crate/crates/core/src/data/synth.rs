//! Procedural texture classes: oriented stripes in a class palette with
//! scattered discs. Class `k` is defined by a stripe angle and frequency, a
//! disc density and three colours, all drawn from the seed.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{LabeledDataset, Sample, Split};
use super::image::Image;
use crate::error::{Error, Result};

const HIST_BINS: usize = 8;

#[derive(Clone, Copy, Debug)]
struct ClassParams {
    angle: f64,
    /// Stripe cycles across the image side.
    frequency: f64,
    /// Mean number of discs per image.
    blobs: f64,
    light: [f64; 3],
    dark: [f64; 3],
    blob: [f64; 3],
}

/// Mean L1 distance between per-image colour histograms, across and within
/// classes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationReport {
    pub inter_class: f64,
    pub intra_class: f64,
}

impl SeparationReport {
    pub fn separated(&self) -> bool {
        self.inter_class > self.intra_class
    }
}

fn hsv(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h = h.rem_euclid(1.0) * 6.0;
    let c = v * s;
    let x = c * (1.0 - (h % 2.0 - 1.0).abs());
    let (r, g, b) = match h as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

fn class_params(seed: u64, class: usize, num_classes: usize) -> ClassParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::MAX - class as u64);
    let k = num_classes as f64;
    let spread = |step: usize, rng: &mut ChaCha8Rng| ((class * step) % num_classes) as f64 / k + rng.gen_range(0.0..0.5 / k);
    let angle = PI * spread(1, &mut rng);
    let frequency = 1.5 + 4.5 * spread(5, &mut rng);
    let blobs = 6.0 * spread(3, &mut rng);
    let hue = class as f64 / k + rng.gen_range(0.0..0.25 / k);
    ClassParams {
        angle,
        frequency,
        blobs,
        light: hsv(hue, rng.gen_range(0.4..0.7), rng.gen_range(0.75..0.95)),
        dark: hsv(hue + 0.5, rng.gen_range(0.4..0.8), rng.gen_range(0.15..0.4)),
        blob: hsv(hue + 0.25, 0.8, rng.gen_range(0.5..0.9)),
    }
}

fn render(p: &ClassParams, size: usize, rng: &mut ChaCha8Rng) -> Image {
    let angle = p.angle + rng.gen_range(-8f64..8.0).to_radians();
    let freq = p.frequency * rng.gen_range(0.9..1.1);
    let phase = rng.gen_range(0.0..2.0 * PI);
    let jitter = |c: [f64; 3], rng: &mut ChaCha8Rng| c.map(|v| v + rng.gen_range(-0.08..0.08));
    let light = jitter(p.light, rng);
    let dark = jitter(p.dark, rng);
    let blob = jitter(p.blob, rng);
    let n_blobs = (p.blobs + rng.gen_range(-1.0..1.0)).round().max(0.0) as usize;
    let s = size as f64;
    let discs: Vec<(f64, f64, f64)> = (0..n_blobs)
        .map(|_| {
            (
                rng.gen_range(0.0..s),
                rng.gen_range(0.0..s),
                rng.gen_range(s / 12.0..s / 6.0),
            )
        })
        .collect();
    let (sin, cos) = angle.sin_cos();
    let mut data = Vec::with_capacity(size * size * 3);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 + 0.5, y as f64 + 0.5);
            let t = 0.5 + 0.5 * (2.0 * PI * freq * (fx * cos + fy * sin) / s + phase).sin();
            let inside = discs
                .iter()
                .any(|&(cx, cy, r)| (fx - cx).powi(2) + (fy - cy).powi(2) <= r * r);
            for c in 0..3 {
                let base = if inside {
                    blob[c]
                } else {
                    light[c] * t + dark[c] * (1.0 - t)
                };
                let v = base + rng.gen_range(-0.05..0.05);
                data.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
    }
    Image::raw(size, size, 3, data).expect("synthetic image dimensions")
}

fn digits(n: usize) -> usize {
    n.max(1).to_string().len()
}

/// `num_classes × per_class` raw RGB images of side `size`, all in the
/// training split. Image `i` of class `k` is rendered from its own random
/// stream, so the result does not depend on generation order.
pub fn generate_synthetic_dataset(
    num_classes: usize,
    per_class: usize,
    size: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    if num_classes < 2 || per_class == 0 || size < 4 {
        return Err(Error::Config(format!(
            "synthetic dataset needs at least 2 classes, 1 image per class and a side of 4, got {num_classes} classes, {per_class} per class, side {size}"
        )));
    }
    if num_classes > u32::MAX as usize || per_class > u32::MAX as usize {
        return Err(Error::Config("synthetic dataset is too large".into()));
    }
    let class_width = digits(num_classes - 1).max(2);
    let item_width = digits(per_class - 1).max(3);
    let class_names: Vec<String> = (0..num_classes)
        .map(|k| format!("class_{k:0class_width$}"))
        .collect();
    let mut items = Vec::with_capacity(num_classes * per_class);
    for k in 0..num_classes {
        let params = class_params(seed, k, num_classes);
        for i in 0..per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((k as u64) << 32) | i as u64);
            items.push(Sample {
                image: render(&params, size, &mut rng),
                label: k,
                name: format!("img_{i:0item_width$}"),
                split: Split::Train,
            });
        }
    }
    let mut dataset = LabeledDataset::new(items, class_names)?;
    dataset.separation = Some(histogram_separation(&dataset));
    Ok(dataset)
}

fn histogram(image: &Image) -> Vec<f64> {
    let data = image.to_u8();
    let mut h = vec![0.0; HIST_BINS * image.channels];
    for px in data.chunks(image.channels) {
        for (c, &v) in px.iter().enumerate() {
            h[c * HIST_BINS + v as usize * HIST_BINS / 256] += 1.0;
        }
    }
    let n = (image.height * image.width) as f64;
    h.iter_mut().for_each(|v| *v /= n);
    h
}

/// Mean pairwise L1 distance between normalized colour histograms, split by
/// whether the pair shares a label.
pub fn histogram_separation(dataset: &LabeledDataset) -> SeparationReport {
    let hists: Vec<Vec<f64>> = dataset.items.iter().map(|s| histogram(&s.image)).collect();
    let (mut inter, mut n_inter, mut intra, mut n_intra) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..hists.len() {
        for j in i + 1..hists.len() {
            let d: f64 = hists[i].iter().zip(&hists[j]).map(|(a, b)| (a - b).abs()).sum();
            if dataset.items[i].label == dataset.items[j].label {
                intra += d;
                n_intra += 1;
            } else {
                inter += d;
                n_inter += 1;
            }
        }
    }
    SeparationReport {
        inter_class: if n_inter > 0 { inter / n_inter as f64 } else { 0.0 },
        intra_class: if n_intra > 0 { intra / n_intra as f64 } else { 0.0 },
    }
}
