//! Exemplar-based image translation: dense cross-domain correspondence,
//! warping, style-modulated synthesis, adversarial training, and the data
//! plumbing around them.

pub mod backbone;
pub mod checkpoint;
pub mod correspondence;
pub mod ctx;
pub mod data;
pub mod discriminator;
pub mod error;
pub mod layers;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod translation;
pub mod trainer;

pub use ctx::Forward;
pub use data::TaskKind;
pub use error::NetError;
pub use model::{ExemplarModel, ModelMeta};
