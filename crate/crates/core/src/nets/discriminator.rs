use rand::Rng;

use super::classifier::{softmax_backward, softmax_rows};
use super::{affine, check_input, check_upstream, glorot, ParamSet};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

#[inline]
pub fn selu(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA * z
    } else {
        SELU_LAMBDA * SELU_ALPHA * (z.exp() - 1.0)
    }
}

#[inline]
pub fn selu_grad(z: f64) -> f64 {
    if z > 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * z.exp()
    }
}

#[inline]
fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Attribute predictor: SELU hidden layer, then a two-unit sigmoid layer
/// whose outputs are passed through a softmax. Output column 0 is the male
/// score, column 1 the female score.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscriminatorParams {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct DiscriminatorPass {
    pub input: Matrix,
    pub hidden_pre: Matrix,
    pub hidden: Matrix,
    /// Sigmoid outputs before the softmax.
    pub sigmoid: Matrix,
    /// `(o_male, o_female)` per row.
    pub output: Matrix,
}

impl DiscriminatorParams {
    pub fn init<R: Rng>(in_dim: usize, hidden: usize, rng: &mut R) -> Self {
        DiscriminatorParams {
            w1: glorot(in_dim, hidden, rng),
            b1: vec![0.0; hidden],
            w2: glorot(hidden, 2, rng),
            b2: vec![0.0; 2],
        }
    }

    pub fn in_dim(&self) -> usize {
        self.w1.rows()
    }

    pub fn hidden_dim(&self) -> usize {
        self.w1.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<DiscriminatorPass> {
        check_input("discriminator", x, self.in_dim())?;
        let hidden_pre = affine(x, &self.w1, &self.b1);
        let mut hidden = hidden_pre.clone();
        hidden.data_mut().iter_mut().for_each(|v| *v = selu(*v));
        let mut sig = affine(&hidden, &self.w2, &self.b2);
        sig.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        let mut output = sig.clone();
        softmax_rows(&mut output);
        Ok(DiscriminatorPass {
            input: x.clone(),
            hidden_pre,
            hidden,
            sigmoid: sig,
            output,
        })
    }

    /// Backward from `∂L/∂output`.
    pub fn backward(&self, pass: &DiscriminatorPass, grad_out: &Matrix) -> Result<(DiscriminatorParams, Matrix)> {
        check_upstream("discriminator", grad_out, pass.output.rows(), 2)?;
        let mut grad_z2 = softmax_backward(&pass.output, grad_out);
        for (g, s) in grad_z2.data_mut().iter_mut().zip(pass.sigmoid.data()) {
            *g *= s * (1.0 - s);
        }
        let mut grad_h = grad_z2.matmul_t(&self.w2)?;
        for (g, z) in grad_h.data_mut().iter_mut().zip(pass.hidden_pre.data()) {
            *g *= selu_grad(*z);
        }
        let grads = DiscriminatorParams {
            w1: pass.input.t_matmul(&grad_h)?,
            b1: grad_h.column_sums(),
            w2: pass.hidden.t_matmul(&grad_z2)?,
            b2: grad_z2.column_sums(),
        };
        Ok((grads, grad_h.matmul_t(&self.w1)?))
    }

    /// Fraction of rows whose larger output matches the label (ties count
    /// as female).
    pub fn accuracy(&self, x: &Matrix, male: &[bool]) -> Result<f64> {
        let out = self.forward(x)?.output;
        if male.len() != out.rows() || male.is_empty() {
            return Err(Error::Dimension(format!("{} labels for {} rows", male.len(), out.rows())));
        }
        let correct = out
            .row_iter()
            .zip(male)
            .filter(|(o, &m)| (o[0] > o[1]) == m)
            .count();
        Ok(correct as f64 / male.len() as f64)
    }
}

impl ParamSet for DiscriminatorParams {
    fn blocks(&self) -> Vec<&[f64]> {
        vec![self.w1.data(), &self.b1, self.w2.data(), &self.b2]
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.w1.data_mut(), &mut self.b1, self.w2.data_mut(), &mut self.b2]
    }

    fn block_names(&self) -> Vec<String> {
        ["w1", "b1", "w2", "b2"].iter().map(|n| format!("discriminator.{n}")).collect()
    }

    fn zeros_like(&self) -> Self {
        DiscriminatorParams {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.w2.rows(), self.w2.cols()),
            b2: vec![0.0; 2],
        }
    }
}

/// `K` independent discriminators.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleParams {
    pub members: Vec<DiscriminatorParams>,
}

impl EnsembleParams {
    pub fn init<R: Rng>(k: usize, in_dim: usize, hidden: usize, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("ensemble needs at least one member".into()));
        }
        Ok(EnsembleParams {
            members: (0..k).map(|_| DiscriminatorParams::init(in_dim, hidden, rng)).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl ParamSet for EnsembleParams {
    fn blocks(&self) -> Vec<&[f64]> {
        self.members.iter().flat_map(|m| m.blocks()).collect()
    }

    fn blocks_mut(&mut self) -> Vec<&mut [f64]> {
        self.members.iter_mut().flat_map(|m| m.blocks_mut()).collect()
    }

    fn block_names(&self) -> Vec<String> {
        self.members
            .iter()
            .enumerate()
            .flat_map(|(k, m)| {
                m.block_names()
                    .into_iter()
                    .map(move |n| n.replace("discriminator", &format!("ensemble[{k}]")))
            })
            .collect()
    }

    fn zeros_like(&self) -> Self {
        EnsembleParams {
            members: self.members.iter().map(|m| m.zeros_like()).collect(),
        }
    }
}
