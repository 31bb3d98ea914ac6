//! Differentiable tensor operations.
//!
//! Every op takes the tape first, computes its output eagerly, and records a
//! backward closure when the tape is live and an input tracks gradients.

mod basic;
mod conv;
pub mod geometry;
mod matmul;
mod nn;

pub use basic::{
    add, concat_channels, dot, mse, relu, reshape, scale, sigmoid, slice_channels, softmax,
    sum_all,
};
pub use conv::{conv2d, conv2d_per_sample, transposed_conv2d};
pub use matmul::dgemm;
pub use nn::{
    avg_pool2d, batchnorm2d, cross_entropy, global_avg_pool, linear, maxpool2d, BatchNormMode,
    BatchNormOut,
};
