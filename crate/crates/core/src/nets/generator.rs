use rand::Rng;

use super::{affine, check_input, check_upstream, glorot, ParamSet};
use crate::error::Result;
use crate::linalg::Matrix;

/// Initial per-channel PReLU slope.
pub const PRELU_INIT_SLOPE: f64 = 0.25;

/// Single linear layer followed by a per-channel PReLU.
#[derive(Clone, Debug, PartialEq)]
pub struct GeneratorParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub prelu_slope: Vec<f64>,
}

/// Cached activations of one generator forward pass.
#[derive(Clone, Debug)]
pub struct GeneratorPass {
    pub input: Matrix,
    pub pre_activation: Matrix,
    pub output: Matrix,
}

impl GeneratorParams {
    pub fn init<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        GeneratorParams {
            weight: glorot(in_dim, out_dim, rng),
            bias: vec![0.0; out_dim],
            prelu_slope: vec![PRELU_INIT_SLOPE; out_dim],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<GeneratorPass> {
        check_input("generator", x, self.in_dim())?;
        let pre = affine(x, &self.weight, &self.bias);
        let mut out = pre.clone();
        for r in 0..out.rows() {
            for (z, a) in out.row_mut(r).iter_mut().zip(&self.prelu_slope) {
                if *z < 0.0 {
                    *z *= a;
                }
            }
        }
        Ok(GeneratorPass {
            input: x.clone(),
            pre_activation: pre,
            output: out,
        })
    }

    /// Forward pass without caching.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.output)
    }

    /// Parameter gradients and input gradient for `grad_out = ∂L/∂output`.
    pub fn backward(&self, pass: &GeneratorPass, grad_out: &Matrix) -> Result<(GeneratorParams, Matrix)> {
        let pre = &pass.pre_activation;
        check_upstream("generator", grad_out, pre.rows(), pre.cols())?;
        let mut grad_pre = grad_out.clone();
        let mut grad_slope = vec![0.0; self.out_dim()];
        for r in 0..pre.rows() {
            let z = pre.row(r);
            for (c, g) in grad_pre.row_mut(r).iter_mut().enumerate() {
                if z[c] < 0.0 {
                    grad_slope[c] += *g * z[c];
                    *g *= self.prelu_slope[c];
                }
            }
        }
        let grads = GeneratorParams {
            weight: pass.input.t_matmul(&grad_pre)?,
            bias: grad_pre.column_sums(),
            prelu_slope: grad_slope,
        };
        let grad_input = grad_pre.matmul_t(&self.weight)?;
        Ok((grads, grad_input))
    }
}

impl ParamSet for GeneratorParams {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias, &self.prelu_slope]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias, &mut self.prelu_slope]
    }

    fn block_names(&self) -> Vec<String> {
        vec!["generator.weight".into(), "generator.bias".into(), "generator.prelu_slope".into()]
    }

    fn zeros_like(&self) -> Self {
        GeneratorParams {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
            prelu_slope: vec![0.0; self.prelu_slope.len()],
        }
    }
}
