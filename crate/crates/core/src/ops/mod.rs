//! Differentiable primitives. Each forward function has a matching
//! `*_backward` that the [`crate::autograd::Tape`] calls during reverse mode.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod norm;
pub mod pad;
pub mod pool;

pub use activation::{
    clamp_symmetric, clamp_symmetric_backward, leaky_relu, leaky_relu_backward, relu,
    relu_backward, sigmoid, sigmoid_backward, LEAKY_SLOPE,
};
pub use conv::{
    conv2d, conv2d_backward, depthwise3x3, depthwise3x3_backward, same_padding, ConvGrads, ConvSpec,
};
pub use dense::{concat_channels, concat_channels_backward, linear, linear_backward};
pub use norm::{
    batchnorm2d, batchnorm2d_backward, BnCache, NormMode, RunningStats, BN_EPS, BN_MOMENTUM,
};
pub use pad::{pad, pad_backward, Pad2d, PaddingMode};
pub use pool::{global_avg_pool, global_avg_pool_backward, maxpool3x3_s1, maxpool3x3_s1_backward};
