use super::fusion::FusionModel;
use crate::error::{Error, Result};
use crate::tensor::{argmax, Scalar, Tensor};

pub const ENSEMBLE_SIZE: usize = 4;

/// Tolerance on each member distribution's sum.
const SUM_TOLERANCE: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct Vote<T: Scalar = f32> {
    pub label: usize,
    /// Elementwise sum of the member distributions (not renormalized).
    pub combined: Tensor<T>,
}

/// Soft vote over exactly four member distributions.
pub fn soft_vote<T: Scalar>(probs: &[Tensor<T>]) -> Result<Vote<T>> {
    soft_vote_n(probs, ENSEMBLE_SIZE)
}

/// Soft vote over `count` member distributions: sum them and take the
/// argmax, lowest index first on ties.
pub fn soft_vote_n<T: Scalar>(probs: &[Tensor<T>], count: usize) -> Result<Vote<T>> {
    if probs.len() != count || count == 0 {
        return Err(Error::Contract(format!(
            "soft vote expects {count} member distributions, got {}",
            probs.len()
        )));
    }
    let k = probs[0].numel();
    let mut combined = vec![T::zero(); k];
    for (i, p) in probs.iter().enumerate() {
        if p.numel() != k {
            return Err(Error::Contract(format!(
                "member {i} has {} classes, member 0 has {k}",
                p.numel()
            )));
        }
        let sum: f64 = p.data().iter().map(|x| x.as_f64()).sum();
        if !sum.is_finite() || (sum - 1.0).abs() > SUM_TOLERANCE || p.data().iter().any(|&x| x < T::zero()) {
            return Err(Error::Contract(format!(
                "member {i} is not a probability distribution (sum {sum})"
            )));
        }
        for (c, &x) in combined.iter_mut().zip(p.data()) {
            *c += x;
        }
    }
    Ok(Vote {
        label: argmax(&combined),
        combined: Tensor::new(vec![k], combined)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnsemblePrediction<T: Scalar = f32> {
    pub label: usize,
    pub combined: Tensor<T>,
    pub per_member: Vec<Tensor<T>>,
}

/// Fusion models with pairwise distinct backbones, combined by soft voting.
/// Slots may be empty until a member is loaded.
#[derive(Clone, Debug)]
pub struct Ensemble<T: Scalar = f32> {
    slots: Vec<Option<FusionModel<T>>>,
}

impl<T: Scalar> Ensemble<T> {
    /// The standard four-member ensemble.
    pub fn new(members: Vec<FusionModel<T>>) -> Result<Self> {
        if members.len() != ENSEMBLE_SIZE {
            return Err(Error::Contract(format!(
                "an ensemble has exactly {ENSEMBLE_SIZE} members, got {}",
                members.len()
            )));
        }
        Self::with_members(members)
    }

    /// Ensemble of any positive number of members.
    pub fn with_members(members: Vec<FusionModel<T>>) -> Result<Self> {
        let mut e = Self::empty(members.len())?;
        for (i, m) in members.into_iter().enumerate() {
            e.load(i, m)?;
        }
        Ok(e)
    }

    pub fn empty(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::Contract("an ensemble needs at least one member".into()));
        }
        Ok(Ensemble {
            slots: (0..size).map(|_| None).collect(),
        })
    }

    pub fn size(&self) -> usize {
        self.slots.len()
    }

    /// Places `model` in `slot`, checking it is compatible with the members
    /// already loaded.
    pub fn load(&mut self, slot: usize, model: FusionModel<T>) -> Result<()> {
        if slot >= self.slots.len() {
            return Err(Error::Contract(format!(
                "slot {slot} out of range for an ensemble of {}",
                self.slots.len()
            )));
        }
        for (i, other) in self.slots.iter().enumerate() {
            let Some(other) = other.as_ref().filter(|_| i != slot) else {
                continue;
            };
            if other.num_classes() != model.num_classes() || other.config.image_size != model.config.image_size {
                return Err(Error::Config(format!(
                    "member {slot} ({} classes, {}px) does not match member {i} ({} classes, {}px)",
                    model.num_classes(),
                    model.config.image_size,
                    other.num_classes(),
                    other.config.image_size
                )));
            }
            if other.config.flavors == model.config.flavors {
                return Err(Error::Config(format!(
                    "members {i} and {slot} share the {} backbone; ensemble members must differ",
                    model.config.get("flavor").unwrap_or_default()
                )));
            }
        }
        self.slots[slot] = Some(model);
        Ok(())
    }

    pub fn member(&self, slot: usize) -> Option<&FusionModel<T>> {
        self.slots.get(slot).and_then(Option::as_ref)
    }

    pub fn member_mut(&mut self, slot: usize) -> Option<&mut FusionModel<T>> {
        self.slots.get_mut(slot).and_then(Option::as_mut)
    }

    /// All members, or a state error naming the first empty slot.
    pub fn members(&self) -> Result<Vec<&FusionModel<T>>> {
        self.slots
            .iter()
            .enumerate()
            .map(|(i, s)| {
                s.as_ref()
                    .ok_or_else(|| Error::State(format!("ensemble member {i} has not been loaded")))
            })
            .collect()
    }

    /// Runs every member on one `[C, H, W]` image and soft-votes.
    pub fn predict(&self, image: &Tensor<T>) -> Result<EnsemblePrediction<T>> {
        let members = self.members()?;
        let per_member = members
            .iter()
            .map(|m| m.fusion_forward(image))
            .collect::<Result<Vec<_>>>()?;
        let vote = soft_vote_n(&per_member, self.slots.len())?;
        Ok(EnsemblePrediction {
            label: vote.label,
            combined: vote.combined,
            per_member,
        })
    }

    /// Predictions for each image of a `[B, C, H, W]` batch.
    pub fn predict_batch(&self, images: &Tensor<T>) -> Result<Vec<EnsemblePrediction<T>>> {
        let members = self.members()?;
        let probs = members
            .iter()
            .map(|m| m.predict_probs(images))
            .collect::<Result<Vec<_>>>()?;
        soft_vote_batch(&probs)
    }
}

/// Soft-votes row `i` of every member's `[B, K]` probability matrix.
pub fn soft_vote_batch<T: Scalar>(probs: &[Tensor<T>]) -> Result<Vec<EnsemblePrediction<T>>> {
    let Some(first) = probs.first() else {
        return Err(Error::Contract("soft vote needs at least one member".into()));
    };
    if first.rank() != 2 || probs.iter().any(|p| p.shape() != first.shape()) {
        return Err(Error::Contract(format!(
            "member probability matrices must share one [B, K] shape, got {:?}",
            probs.iter().map(|p| p.shape().to_vec()).collect::<Vec<_>>()
        )));
    }
    let (b, k) = (first.shape()[0], first.shape()[1]);
    (0..b)
        .map(|i| {
            let per_member = probs
                .iter()
                .map(|p| Tensor::new(vec![k], p.data()[i * k..(i + 1) * k].to_vec()))
                .collect::<Result<Vec<_>>>()?;
            let vote = soft_vote_n(&per_member, probs.len())?;
            Ok(EnsemblePrediction {
                label: vote.label,
                combined: vote.combined,
                per_member,
            })
        })
        .collect()
}
