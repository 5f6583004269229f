//! Binary checkpoint files.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! "FVCK"  u32 version
//! u32 len, config text
//! u32 epoch, u64 adam step, rng: [u8; 32] seed, u128 word position, u64 stream
//! u32 tensor count, then per tensor:
//!   u32 name len, name, u8 kind, u32 rank, u32 dims[rank], f32 data[..]
//! ```
//!
//! Model tensors come first in store order, followed by the Adam moments
//! as `adam.m/<name>` and `adam.v/<name>`.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::adam::AdamState;
use crate::error::{CheckpointError, Error, Result};
use crate::io;
use crate::model::{FusionModel, ModelConfig};
use crate::nn::ParamKind;

pub const MAGIC: &[u8; 4] = b"FVCK";
pub const FORMAT_VERSION: u32 = 1;

/// A model together with the training state needed to resume it.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: FusionModel,
    pub adam: AdamState<f32>,
    pub rng: ChaCha8Rng,
    pub epoch: usize,
}

fn kind_code(kind: ParamKind) -> u8 {
    match kind {
        ParamKind::Trainable => 0,
        ParamKind::Frozen => 1,
        ParamKind::Buffer => 2,
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: usize) -> Result<()> {
        let v = u32::try_from(v).map_err(|_| Error::Contract(format!("{v} does not fit a checkpoint field")))?;
        self.0.extend_from_slice(&v.to_le_bytes());
        Ok(())
    }

    fn bytes(&mut self, b: &[u8]) -> Result<()> {
        self.u32(b.len())?;
        self.0.extend_from_slice(b);
        Ok(())
    }

    fn tensor(&mut self, name: &str, kind: u8, shape: &[usize], data: &[f32]) -> Result<()> {
        self.bytes(name.as_bytes())?;
        self.0.push(kind);
        self.u32(shape.len())?;
        for &d in shape {
            self.u32(d)?;
        }
        for v in data {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
        Ok(())
    }
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let store = &ckpt.model.store;
    if ckpt.adam.m.len() != store.len() || ckpt.adam.v.len() != store.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} tensors, model has {}",
            ckpt.adam.m.len(),
            store.len()
        )));
    }
    let mut w = Writer(Vec::new());
    w.0.extend_from_slice(MAGIC);
    w.0.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.bytes(ckpt.model.config.to_text().as_bytes())?;
    w.u32(ckpt.epoch)?;
    w.0.extend_from_slice(&ckpt.adam.t.to_le_bytes());
    w.0.extend_from_slice(&ckpt.rng.get_seed());
    w.0.extend_from_slice(&ckpt.rng.get_word_pos().to_le_bytes());
    w.0.extend_from_slice(&ckpt.rng.get_stream().to_le_bytes());
    w.u32(3 * store.len())?;
    for e in store.entries() {
        w.tensor(&e.name, kind_code(e.kind), e.tensor.shape(), e.tensor.data())?;
    }
    for (prefix, moments) in [("adam.m/", &ckpt.adam.m), ("adam.v/", &ckpt.adam.v)] {
        for (e, m) in store.entries().iter().zip(moments) {
            if m.len() != e.tensor.numel() {
                return Err(Error::Contract(format!("optimizer moment for {} has the wrong size", e.name)));
            }
            w.tensor(&format!("{prefix}{}", e.name), 0, &[m.len()], m)?;
        }
    }
    Ok(w.0)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(CheckpointError::Truncated {
                offset: self.bytes.len(),
            });
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N], CheckpointError> {
        let mut a = [0; N];
        a.copy_from_slice(self.take(N)?);
        Ok(a)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    fn len(&mut self) -> Result<usize, CheckpointError> {
        Ok(self.u32()? as usize)
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let at = self.pos;
        let n = self.len()?;
        let b = self.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CheckpointError::Malformed {
            offset: at,
            msg: "text is not UTF-8".into(),
        })
    }

    fn malformed(&self, at: usize, msg: impl Into<String>) -> CheckpointError {
        CheckpointError::Malformed {
            offset: at,
            msg: msg.into(),
        }
    }
}

struct Record {
    offset: usize,
    name: String,
    kind: u8,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn read_record(r: &mut Reader<'_>) -> Result<Record, CheckpointError> {
    let offset = r.pos;
    let name = r.string()?;
    let kind = r.array::<1>()?[0];
    if kind > 2 {
        return Err(r.malformed(offset, format!("{name}: unknown parameter kind {kind}")));
    }
    let rank = r.len()?;
    let mut shape = Vec::with_capacity(rank.min(8));
    for _ in 0..rank {
        shape.push(r.len()?);
    }
    let numel = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .filter(|&n| n > 0 && rank > 0)
        .ok_or_else(|| r.malformed(offset, format!("{name}: invalid shape {shape:?}")))?;
    let bytes = r.take(numel.checked_mul(4).ok_or(CheckpointError::Truncated { offset: r.bytes.len() })?)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    Ok(Record {
        offset,
        name,
        kind,
        shape,
        data,
    })
}

fn config_mismatch(expected: &ModelConfig, found: &ModelConfig) -> Option<String> {
    ModelConfig::KEYS.iter().find_map(|key| {
        let (e, f) = (expected.get(key), found.get(key));
        (e != f).then(|| {
            format!(
                "{key}: expected {}, checkpoint has {}",
                e.unwrap_or_default(),
                f.unwrap_or_default()
            )
        })
    })
}

/// Parses a checkpoint. With `expected`, the stored model configuration
/// must match it key for key.
pub fn decode_checkpoint(bytes: &[u8], expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    let mut r = Reader { bytes, pos: 0 };
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(CheckpointError::BadMagic.into());
    }
    r.pos = MAGIC.len();
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::UnsupportedVersion(version).into());
    }
    let config_at = r.pos;
    let text = r.string()?;
    let config = ModelConfig::from_text(&text)
        .map_err(|e| r.malformed(config_at, format!("stored configuration: {e}")))?;
    if let Some(msg) = expected.and_then(|e| config_mismatch(e, &config)) {
        return Err(CheckpointError::ConfigMismatch(msg).into());
    }
    let epoch = r.len()?;
    let t = u64::from_le_bytes(r.array()?);
    let seed: [u8; 32] = r.array()?;
    let word_pos = u128::from_le_bytes(r.array()?);
    let stream = u64::from_le_bytes(r.array()?);
    let mut rng = ChaCha8Rng::from_seed(seed);
    rng.set_stream(stream);
    rng.set_word_pos(word_pos);

    let mut model = FusionModel::<f32>::new(config, 0)
        .map_err(|e| r.malformed(config_at, format!("stored configuration: {e}")))?;
    let n = model.store.len();
    let count = r.len()?;
    if count != 3 * n {
        return Err(CheckpointError::TensorCountMismatch {
            expected: 3 * n,
            found: count,
        }
        .into());
    }
    let mut adam = AdamState::new(&model.store);
    adam.t = t;
    for i in 0..count {
        let rec = read_record(&mut r)?;
        let (slot, expected_name) = (i % n, &model.store.entries()[i % n].name);
        let want = match i / n {
            0 => expected_name.clone(),
            1 => format!("adam.m/{expected_name}"),
            _ => format!("adam.v/{expected_name}"),
        };
        if rec.name != want {
            return Err(r.malformed(rec.offset, format!("expected tensor {want}, found {}", rec.name)).into());
        }
        let id = model.store.ids().nth(slot).ok_or_else(|| r.malformed(rec.offset, "tensor index out of range"))?;
        let numel = model.store.get(id).numel();
        if i < n {
            let shape = model.store.get(id).shape().to_vec();
            if rec.shape != shape {
                return Err(CheckpointError::ConfigMismatch(format!(
                    "{}: model shape {shape:?}, checkpoint shape {:?}",
                    rec.name, rec.shape
                ))
                .into());
            }
            let kind = match rec.kind {
                0 => ParamKind::Trainable,
                1 => ParamKind::Frozen,
                _ => ParamKind::Buffer,
            };
            if (kind == ParamKind::Buffer) != (model.store.kind(id) == ParamKind::Buffer) {
                return Err(r.malformed(rec.offset, format!("{}: parameter kind does not match the model", rec.name)).into());
            }
            model.store.set_kind(id, kind);
            model.store.get_mut(id).data_mut().copy_from_slice(&rec.data);
        } else {
            if rec.data.len() != numel {
                return Err(r.malformed(rec.offset, format!("{}: expected {numel} values", rec.name)).into());
            }
            let moments = if i / n == 1 { &mut adam.m } else { &mut adam.v };
            moments[slot] = rec.data;
        }
    }
    if r.pos != bytes.len() {
        return Err(r.malformed(r.pos, "trailing bytes after the last tensor").into());
    }
    Ok(Checkpoint {
        model,
        adam,
        rng,
        epoch,
    })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ckpt: &Checkpoint) -> Result<()> {
    io::write_atomic(path, &encode_checkpoint(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>, expected: Option<&ModelConfig>) -> Result<Checkpoint> {
    decode_checkpoint(&io::read(path)?, expected)
}
