//! Dense row-major tensors and reverse-mode automatic differentiation.
//!
//! [`Tensor`] holds plain data. [`Var`] wraps a tensor recorded on a
//! [`Tape`]; operations on vars build the graph that [`Tape::backward`]
//! differentiates.

mod element;
mod error;
pub mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use element::{DType, Element};
pub use error::{Result, TensorError};
pub use ops::conv::{conv2d, conv3d, warp_kernels, Padding};
pub use ops::elementwise::Elementwise;
pub use ops::linalg::matmul;
pub use ops::norm::softmax;
pub use ops::pool::{avg_pool2d, upsample_bilinear2d};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{broadcast_shape, broadcast_zip, reduce_to_shape, Tensor};
