//! Neural operators, each with a forward pass and a hand-derived backward pass.

pub mod activation;
pub mod conv;
pub mod norm;
pub mod pool;
pub mod separable;
pub mod upsample;

pub use activation::{relu, relu_backward, sigmoid, sigmoid_backward};
pub use conv::{
    conv3d, conv3d_backward, init_conv_weight, init_transposed_weight, transposed_conv3d,
    transposed_conv3d_backward, ConvSpec,
};
pub use norm::{batchnorm, batchnorm_backward, batchnorm_forward, Mode, RunningStats, BN_EPS, BN_MOMENTUM};
pub use pool::{aux_pool_pair, maxpool3d_backward, maxpool3d_with_switches, maxunpool3d, maxunpool3d_backward, Switches};
pub use separable::{separable_conv3d, ConvParams, Intermediate};
pub use upsample::{trilinear_upsample, trilinear_upsample_backward};
