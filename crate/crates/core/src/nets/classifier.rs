use rand::Rng;

use super::{affine, check_input, check_upstream, glorot, ParamSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Linear identity classifier with a softmax output.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ClassifierPass {
    pub input: Matrix,
    pub probs: Matrix,
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &mut Matrix) {
    for r in 0..logits.rows() {
        let row = logits.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
}

/// Pulls `∂L/∂p` back through a row-wise softmax: `p ⊙ (g − ⟨p, g⟩)`.
pub(crate) fn softmax_backward(probs: &Matrix, grad: &Matrix) -> Matrix {
    let mut out = grad.clone();
    for r in 0..probs.rows() {
        let p = probs.row(r);
        let dot: f64 = p.iter().zip(grad.row(r)).map(|(a, b)| a * b).sum();
        for (o, pi) in out.row_mut(r).iter_mut().zip(p) {
            *o = pi * (*o - dot);
        }
    }
    out
}

impl ClassifierParams {
    pub fn init<R: Rng>(in_dim: usize, n_identities: usize, rng: &mut R) -> Result<Self> {
        if n_identities < 2 {
            return Err(Error::Validation(format!(
                "classifier needs at least 2 identities, got {n_identities}"
            )));
        }
        Ok(ClassifierParams {
            weight: glorot(in_dim, n_identities, rng),
            bias: vec![0.0; n_identities],
        })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn n_identities(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ClassifierPass> {
        check_input("classifier", x, self.in_dim())?;
        let mut probs = affine(x, &self.weight, &self.bias);
        softmax_rows(&mut probs);
        Ok(ClassifierPass {
            input: x.clone(),
            probs,
        })
    }

    /// Backward from `∂L/∂probs`.
    pub fn backward(&self, pass: &ClassifierPass, grad_probs: &Matrix) -> Result<(ClassifierParams, Matrix)> {
        check_upstream("classifier", grad_probs, pass.probs.rows(), pass.probs.cols())?;
        let grad_logits = softmax_backward(&pass.probs, grad_probs);
        self.backward_logits(pass, &grad_logits)
    }

    /// Backward from `∂L/∂logits`.
    pub fn backward_logits(&self, pass: &ClassifierPass, grad_logits: &Matrix) -> Result<(ClassifierParams, Matrix)> {
        check_upstream("classifier", grad_logits, pass.probs.rows(), pass.probs.cols())?;
        let grads = ClassifierParams {
            weight: pass.input.t_matmul(grad_logits)?,
            bias: grad_logits.column_sums(),
        };
        Ok((grads, grad_logits.matmul_t(&self.weight)?))
    }
}

impl ParamSet for ClassifierParams {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.weight.data(), &self.bias]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.weight.data_mut(), &mut self.bias]
    }

    fn block_names(&self) -> Vec<String> {
        vec!["classifier.weight".into(), "classifier.bias".into()]
    }

    fn zeros_like(&self) -> Self {
        ClassifierParams {
            weight: Matrix::zeros(self.weight.rows(), self.weight.cols()),
            bias: vec![0.0; self.bias.len()],
        }
    }
}
