//! Layers assembled from graph operations. Layers only hold [`ParamId`]s;
//! the tensors themselves live in a [`ParamStore`], so the same layer
//! structure can run in `f32` for training and `f64` for gradient checks.

mod aspp;
mod context;
mod conv;
mod dense;
mod norm;
mod param;
mod se;
mod transformer;

pub use aspp::{Aspp, ASPP_DILATIONS};
pub use context::{ActivityRecord, BatchNormUpdate, Forward, Mode};
pub use conv::Conv2d;
pub use dense::{Dense, RegularizerSpec};
pub use norm::{global_average_pool, BatchNorm, LayerNorm};
pub use param::{ParamBuilder, ParamEntry, ParamId, ParamKind, ParamStore};
pub use se::{SeBlock, SeOutput};
pub use transformer::{Attention, AttentionOutput, PatchEmbed, TransformerBlock};
