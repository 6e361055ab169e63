//! Self-supervised hybrid dual-decoder network for removing visible
//! watermarks and Gaussian noise from images, together with the training
//! corpus synthesiser, the optimisation loop and evaluation tooling.

pub mod blocks;
pub mod error;
pub mod imgcore;
pub mod losses;
pub mod sshnet;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
