//! The dual-stream fusion classifier and the soft-voting ensemble.
//!
//! A [`FusionModel`] runs one or more transformer streams and one or more CNN
//! streams over the same image, concatenates their MLP outputs and applies a
//! single softmax head. Four fusion models that differ only in their CNN
//! backbone form an [`Ensemble`].

mod backbone;
mod config;
mod fusion;
mod stream;
mod vote;

pub use backbone::{Backbone, Flavor};
pub use config::ModelConfig;
pub use fusion::{FusionModel, FusionNet, FusionOutput};
pub use stream::{CnnStream, CnnTaps, Mlp, TransformerStream};
pub use vote::{soft_vote, soft_vote_batch, soft_vote_n, Ensemble, EnsemblePrediction, Vote, ENSEMBLE_SIZE};
