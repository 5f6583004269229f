use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::image::Image;
use super::ppm::{load_ppm, save_ppm};
use super::synth::SeparationReport;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Test,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    /// File stem, unique within its class.
    pub name: String,
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub items: Vec<Sample>,
    pub class_names: Vec<String>,
    /// Histogram separation measured when the dataset was synthesized.
    pub separation: Option<SeparationReport>,
}

impl LabeledDataset {
    pub fn new(items: Vec<Sample>, class_names: Vec<String>) -> Result<Self> {
        if let Some(s) = items.iter().find(|s| s.label >= class_names.len()) {
            return Err(Error::Contract(format!(
                "sample {:?} has label {} but there are only {} classes",
                s.name,
                s.label,
                class_names.len()
            )));
        }
        Ok(LabeledDataset {
            items,
            class_names,
            separation: None,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.items {
            counts[s.label] += 1;
        }
        counts
    }

    pub fn split(&self, split: Split) -> Vec<&Sample> {
        self.items.iter().filter(|s| s.split == split).collect()
    }

    /// Per class, a seeded shuffle decides which `round(n · test_fraction)`
    /// items become test items; the rest are training items.
    pub fn stratified_split(&mut self, test_fraction: f64, seed: u64) -> Result<()> {
        if !(0.0..1.0).contains(&test_fraction) {
            return Err(Error::Config(format!(
                "test fraction must lie in [0, 1), got {test_fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for class in 0..self.num_classes() {
            let mut idx: Vec<usize> = (0..self.items.len())
                .filter(|&i| self.items[i].label == class)
                .collect();
            idx.shuffle(&mut rng);
            let n_test = (idx.len() as f64 * test_fraction).round() as usize;
            for (k, &i) in idx.iter().enumerate() {
                self.items[i].split = if k < n_test { Split::Test } else { Split::Train };
            }
        }
        Ok(())
    }
}

/// Stacks `[C, H, W]` tensors of normalized images into `[B, C, H, W]`.
pub fn stack_images<'a>(images: impl IntoIterator<Item = &'a Image>) -> Result<Tensor<f32>> {
    let mut data = Vec::new();
    let mut shape: Option<Vec<usize>> = None;
    let mut n = 0;
    for im in images {
        let t = im.to_chw()?;
        match &shape {
            None => shape = Some(t.shape().to_vec()),
            Some(s) if s != t.shape() => {
                return Err(Error::Dimension(format!(
                    "cannot batch images of shapes {s:?} and {:?}",
                    t.shape()
                )))
            }
            Some(_) => {}
        }
        data.extend_from_slice(t.data());
        n += 1;
    }
    let mut shape = shape.ok_or_else(|| Error::Contract("cannot batch zero images".into()))?;
    shape.insert(0, n);
    Tensor::new(shape, data)
}

/// Reads `root/<class>/<image>.ppm`. Classes are the subdirectories in
/// lexicographic order; images within a class are read in name order.
/// Every item starts in the training split.
pub fn load_dataset_dir(root: impl AsRef<Path>) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let sorted_entries = |dir: &Path| -> Result<Vec<std::path::PathBuf>> {
        let mut v = fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
            .collect::<Result<Vec<_>>>()?;
        v.sort();
        Ok(v)
    };
    let class_dirs: Vec<_> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::Config(format!(
            "{} contains no class directories",
            root.display()
        )));
    }
    let mut class_names = Vec::new();
    let mut items = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        class_names.push(file_name(dir));
        for path in sorted_entries(dir)? {
            if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm")) {
                let image = load_ppm(&path).map_err(|e| match e {
                    Error::Parse { offset, msg } => Error::Parse {
                        offset,
                        msg: format!("{}: {msg}", path.display()),
                    },
                    other => other,
                })?;
                let name = path
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default();
                items.push(Sample {
                    image,
                    label,
                    name,
                    split: Split::Train,
                });
            }
        }
    }
    LabeledDataset::new(items, class_names)
}

/// Writes every item as `root/<class>/<name>.ppm`.
pub fn save_dataset_dir(dataset: &LabeledDataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for s in &dataset.items {
        let path = root
            .join(&dataset.class_names[s.label])
            .join(format!("{}.ppm", s.name));
        save_ppm(path, &s.image)?;
    }
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}
