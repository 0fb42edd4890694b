//! Tensors, parameters, differentiable primitives and the gradient harness.

pub mod gradcheck;
pub mod layers;
pub mod ops;
mod param;
mod real;
mod tensor;

pub use gradcheck::{check_gradients, Differentiable, FnOp, GradCheckReport};
pub use layers::{BatchNorm1d, Linear, Mode};
pub use ops::{
    avg_pool_over_axis, causal_dilated_conv1d, linear, softmax_tempered, softmax_tempered_backward,
};
pub use param::{Module, Param};
pub(crate) use param::scoped;
pub use real::{gemm, Real, Trans};
pub use tensor::{flip_time, Tensor};
