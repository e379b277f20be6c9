//! Comb convolution: checkerboard-masked convolution whose masked-out sites
//! carry a uniform channel mapping of the input.
//!
//! The crate provides the operator kernels (forward and backward), FLOP
//! accounting, lowering to a sparse matrix, receptive-field analysis and a
//! small CIFAR-10 training harness.

pub mod analysis;
pub mod config;
pub mod error;
pub mod mask;
pub mod network;
pub mod ops;
pub mod tensor;
pub mod training;

pub use config::RunConfig;
pub use error::{Error, Result};
pub use mask::MaskConfig;
pub use tensor::{BinaryOp, Kernel4, Tensor4};
