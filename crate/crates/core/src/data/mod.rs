//! Image I/O, preprocessing, augmentation and the synthetic texture dataset.

mod augment;
mod dataset;
mod image;
mod ppm;
mod synth;
mod transform;

pub use augment::{augment, AffineParams, AugmentConfig};
pub use dataset::{load_dataset_dir, save_dataset_dir, stack_images, LabeledDataset, Sample, Split};
pub use image::{Image, Pixels};
pub use ppm::{decode_ppm, encode_pgm, encode_ppm, load_ppm, save_ppm};
pub use synth::{generate_synthetic_dataset, histogram_separation, SeparationReport};
pub use transform::{gamma_transform, normalize, resize_nearest, GammaParams, PipelineOrder, Preprocess};
