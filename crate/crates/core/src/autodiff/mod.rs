//! Minimal reverse-mode differentiation over dense row-major tensors.
//!
//! Only first-order gradients are supported. The tape records operations
//! eagerly; see [`Tape`].

pub mod gradcheck;
mod sparse;
mod tape;
mod tensor;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use sparse::CsrMatrix;
pub use tape::{GradientMap, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutodiffError {
    #[error("shape mismatch in {op}: node {lhs} has shape {lhs_shape:?}, node {rhs} has shape {rhs_shape:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: usize,
        lhs_shape: Vec<usize>,
        rhs: usize,
        rhs_shape: Vec<usize>,
    },
    #[error("{op}: node {node} has shape {shape:?}, expected {expected}")]
    InvalidShape {
        op: &'static str,
        node: usize,
        shape: Vec<usize>,
        expected: &'static str,
    },
    #[error("non-finite value produced by {op} at node {node}")]
    NonFinite { op: &'static str, node: usize },
    #[error("backward needs a scalar output, node {node} has shape {shape:?}")]
    NotScalar { node: usize, shape: Vec<usize> },
    #[error("{op}: index {index} out of bounds for {rows} rows")]
    IndexOutOfBounds {
        op: &'static str,
        index: usize,
        rows: usize,
    },
    #[error("{op} needs at least one input")]
    EmptyInput { op: &'static str },
    #[error("tensor data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("dropout rate must lie in [0, 1), got {0}")]
    InvalidDropoutRate(f64),
}

/// Inverted-scaling dropout mask: each entry is `0` with probability `rate`
/// and `1 / (1 - rate)` otherwise.
pub fn dropout_mask(shape: &[usize], rate: f64, seed: u64) -> Result<Tensor, AutodiffError> {
    if !(0.0..1.0).contains(&rate) {
        return Err(AutodiffError::InvalidDropoutRate(rate));
    }
    if rate == 0.0 {
        return Ok(Tensor::filled(shape, 1.0));
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mask = Tensor::zeros(shape);
    for v in mask.data_mut() {
        if rng.random::<f64>() >= rate {
            *v = keep;
        }
    }
    Ok(mask)
}
