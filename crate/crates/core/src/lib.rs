//! Shared foundation for the warpgen exemplar-based translation toolkit:
//! a double-precision tape autodiff engine, parameter storage with Adam,
//! seeded reproducible randomness, and the experiment configuration schema.

pub mod config;
pub mod error;
pub mod image;
pub mod numeric;
pub mod params;
pub mod rng;
pub mod tensor;

pub use config::{LossConfig, ModelConfig, TrainConfig};
pub use error::CoreError;
pub use image::{FeatureMap, ImageTensor};
pub use params::{Adam, ParamId, ParamStore};
pub use rng::{RandomState, SeedRng};
pub use tensor::{Gradients, Tape, Var};
