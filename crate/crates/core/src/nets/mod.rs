//! Generator, identity classifier and discriminator ensemble with explicit
//! forward and backward passes, plus Adam and the checkpoint format.
//!
//! Each `forward` returns a pass object caching the activations that the
//! matching `backward` needs. Gradients are returned in the same parameter
//! struct type as the network they belong to.

mod adam;
mod checkpoint;
mod classifier;
mod discriminator;
mod generator;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{decode_checkpoint, encode_checkpoint, read_checkpoint, write_checkpoint, Checkpoint};
pub use classifier::{softmax_rows, ClassifierParams, ClassifierPass};
pub use discriminator::{selu, selu_grad, DiscriminatorParams, DiscriminatorPass, EnsembleParams, SELU_ALPHA, SELU_LAMBDA};
pub use generator::{GeneratorParams, GeneratorPass, PRELU_INIT_SLOPE};

use rand::Rng;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Width of the generator output.
pub const GENERATOR_OUT_DIM: usize = 256;
/// Hidden width of each discriminator.
pub const DISCRIMINATOR_HIDDEN: usize = 128;

/// A collection of named, flat parameter blocks.
pub trait ParamSet {
    fn blocks(&self) -> Vec<&[f64]>;
    fn blocks_mut(&mut self) -> Vec<&mut [f64]>;
    fn block_names(&self) -> Vec<String>;
    /// Same shapes, all zeros.
    fn zeros_like(&self) -> Self
    where
        Self: Sized;

    fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    fn is_finite(&self) -> bool {
        self.blocks().iter().all(|b| b.iter().all(|v| v.is_finite()))
    }
}

/// Glorot-uniform weights in ±√(6/(fan_in+fan_out)).
pub(crate) fn glorot<R: Rng>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-limit..limit))
        .collect();
    Matrix::from_vec(fan_in, fan_out, data).expect("shape")
}

pub(crate) fn check_input(what: &str, x: &Matrix, expected: usize) -> Result<()> {
    if x.cols() != expected {
        return Err(Error::Dimension(format!(
            "{what} expects {expected} input columns, got {}",
            x.cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_upstream(what: &str, grad: &Matrix, rows: usize, cols: usize) -> Result<()> {
    if grad.rows() != rows || grad.cols() != cols {
        return Err(Error::State(format!(
            "{what} backward got a {}x{} upstream gradient for a cached {rows}x{cols} forward pass",
            grad.rows(),
            grad.cols()
        )));
    }
    Ok(())
}

/// `x·W + b` for every row.
pub(crate) fn affine(x: &Matrix, w: &Matrix, b: &[f64]) -> Matrix {
    let mut z = x.matmul(w).expect("checked shapes");
    z.add_row_vector(b);
    z
}
