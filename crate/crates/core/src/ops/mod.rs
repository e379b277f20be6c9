//! Forward and backward kernels.

mod basic;
mod batchnorm;
mod conv;

pub use basic::{
    avgpool_global, avgpool_global_backward, maxpool2x2, maxpool2x2_backward, relu,
    relu_backward, relu_backward_masked, relu_masked, softmax_cross_entropy, Linear,
};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, batchnorm_forward_masked, BnCache, BnState,
};
pub use conv::{
    comb_conv_backward, comb_conv_forward, comb_conv_forward_dense, conv2d_standard,
    uniform_map, BnStrategy, CombConvLayer, ConvMode, UniformNorm,
};
