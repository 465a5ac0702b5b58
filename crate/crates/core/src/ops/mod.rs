//! Differentiable primitives recorded on a [`Tape`](crate::autodiff::Tape).

mod activation;
mod conv;
mod elementwise;
mod linear;
mod loss;
mod norm;
mod pool;

pub use activation::{gelu, gelu_scalar, sigmoid, sigmoid_scalar};
pub use conv::{conv2d, conv_out_size, dwconv2d};
pub use elementwise::{add, concat_last, mul, reshape, scale_rows, split_last, sum, weighted_sum};
pub use linear::linear;
pub use loss::{softmax_cross_entropy, validate_targets};
pub use norm::layernorm;
pub use pool::global_avg_pool;

use crate::dtype::Scalar;
use crate::tensor::Tensor;

/// Rows per parallel work item; keeps small tensors on one thread.
pub(crate) const PAR_MIN_ROWS: usize = 64;

pub(crate) fn same_shape<T: Scalar>(grad: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::from_vec(grad.shape().to_vec(), data).expect("shape preserved")
}
