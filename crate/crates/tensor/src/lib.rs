//! Minimal tensor type and tape-based reverse-mode differentiation for
//! NHWC convolutional networks.
//!
//! Convolutions are lowered to `im2col` + GEMM (`matrixmultiply`), which keeps
//! single-core training of small codecs practical. Every operation is generic
//! over [`Real`] so the same model code runs in `f32` for training and `f64`
//! for finite-difference checks.

mod conv;
pub mod gradcheck;
mod graph;
mod real;
mod tensor;

pub use conv::ConvGeometry;
pub use graph::{avg_pool, pixel_shuffle, pixel_unshuffle, Gradients, Graph, Padding, Var};
pub use real::{gemm, MatRef, Real};
pub use tensor::Tensor;

/// Logistic function, numerically stable for large `|v|`.
pub fn sigmoid<T: Real>(v: T) -> T {
    graph::sigmoid(v)
}

/// `ln(1 + e^v)`, numerically stable.
pub fn softplus<T: Real>(v: T) -> T {
    graph::softplus(v)
}
