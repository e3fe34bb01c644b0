//! Minimal dense-array reverse-mode autodiff with exactly the layer set the
//! classifier needs: valid 2-D convolution, dense affine maps, ReLU, and a
//! softmax + cross-entropy head. Gradients come out with respect to both the
//! parameters and the network input; the latter is what drives perturbation
//! crafting.

mod net;
mod ops;
mod tensor;

pub use net::{backward, forward, Layer, Network, Reduction, Trace};
pub use ops::{
    conv2d_forward, cross_entropy, dense_forward, one_hot_index, relu, sgd_step, softmax, LOG_EPS,
};
pub use tensor::{GradResult, ParamSet, Tensor};
