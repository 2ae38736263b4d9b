//! Minimal CPU tensor engine with explicit forward and backward passes.
//!
//! Activations are NCHW tensors. Layers are stateless functions over a
//! [`ParamStore`]; a [`Chain`] records every intermediate activation so the
//! backward pass can replay it and expose gradients at any point (used for
//! Grad-CAM).

mod chain;
mod ops;
mod optim;
mod params;
mod scalar;
mod tensor;

pub use chain::{Chain, Op, Trace};
pub use ops::{
    bce_with_logits, concat_batch, concat_channels, conv2d_backward, conv2d_forward,
    conv_out_size, gap_backward, gap_forward, im2col, linear_backward, linear_forward,
    max_over_batch_backward, max_over_batch_forward, maxpool2_backward, maxpool2_forward,
    relu_backward, relu_forward, sigmoid, softmax_cross_entropy, softmax_rows, split_batch,
    split_channels,
};
pub use optim::{Adam, Optimizer, OptimizerKind, RmsProp};
pub use params::{Grads, Param, ParamStore};
pub use scalar::Scalar;
pub use tensor::Tensor;
