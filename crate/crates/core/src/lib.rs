//! Fundus image gradability: a convolutional autoencoder whose bottleneck
//! feeds a classifier head, trained jointly on reconstruction and
//! classification, with attribution, adversarial and robustness tooling.

pub mod cli;
pub mod error;
pub mod interpret;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod robustness;
pub mod synth;
pub mod training;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{FgrNetParams, ModelConfig, Preset};
pub use tensor::{Real, Tape, Tensor, Var};
