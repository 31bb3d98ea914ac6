//! Gastrointestinal-frame classifier built from first principles: a dense f64
//! tensor core with reverse-mode autodiff, discrete and stationary wavelet
//! transforms, an omni-dimensional gated attention block that mixes a bank of
//! candidate kernels into one dynamic convolution per sample, and the
//! encoder -> attention -> wavelet fusion -> decoder -> classifier pipeline
//! those pieces assemble into, plus the training loop, metric battery, and CLI
//! around it.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod init;
pub mod metrics;
pub mod model;
pub mod oga;
pub mod optim;
pub mod ops;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod wavelet;

pub use error::{Error, Result};
pub use tape::Tape;
pub use tensor::{GradStore, Parameter, Tensor};
