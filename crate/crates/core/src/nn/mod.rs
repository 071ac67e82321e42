//! Minimal dense-matrix autodiff used by the translation model.
//!
//! Sequences in a batch are packed row-wise into one matrix (no padding);
//! attention works on per-sequence row segments.

mod kernels;
mod mat;
mod params;
mod scalar;
mod tape;

pub use kernels::{argmax, layer_norm, normalize_row, positions, softmax_in_place, LN_EPS};
pub use mat::{dot, gemm, matmul, Mat, MatMut, MatRef};
pub use params::{ParamId, ParamSet};
pub use scalar::Scalar;
pub use tape::{Gradients, Segment, Slot, Tape, Var};
