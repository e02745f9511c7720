//! Logistic-regression attribute probe.
//!
//! Features are z-scored with train-split statistics, then a weight vector
//! and bias are fitted by full-batch gradient descent on the mean binary
//! cross-entropy plus an L2 penalty, starting from zero.

use crate::dataio::{fmt_f64, Attribute, CsvReport, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub rate: f64,
    pub l2: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 500,
            rate: 0.1,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeModel {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub weight: Vec<f64>,
    pub bias: f64,
    pub n_train: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeReport {
    /// Percent correct.
    pub accuracy: f64,
    /// Percent of female test records predicted male.
    pub females_misclassified: f64,
    /// Percent of male test records predicted female.
    pub males_misclassified: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_female: usize,
    pub n_male: usize,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl ProbeModel {
    fn standardize(&self, x: &Matrix) -> Matrix {
        let mut s = x.clone();
        for r in 0..s.rows() {
            for ((v, m), sc) in s.row_mut(r).iter_mut().zip(&self.mean).zip(&self.scale) {
                *v = (*v - m) / sc;
            }
        }
        s
    }

    fn logits(&self, standardized: &Matrix) -> Vec<f64> {
        standardized
            .row_iter()
            .map(|row| row.iter().zip(&self.weight).map(|(a, b)| a * b).sum::<f64>() + self.bias)
            .collect()
    }

    /// Probability of the male class for each record.
    pub fn predict_proba(&self, dataset: &Dataset) -> Result<Vec<f64>> {
        if dataset.dim() != self.weight.len() {
            return Err(Error::Dimension(format!(
                "probe expects dimension {}, dataset has {}",
                self.weight.len(),
                dataset.dim()
            )));
        }
        Ok(self.logits(&self.standardize(&dataset.features())).into_iter().map(sigmoid).collect())
    }
}

pub fn probe_train(train: &Dataset, config: &ProbeConfig) -> Result<ProbeModel> {
    if !train.has_both_attributes() {
        return Err(Error::Validation("probe training set needs both attribute values".into()));
    }
    let x = train.features();
    let n = x.rows() as f64;
    let mean = x.column_means();
    let mut scale = vec![0.0; x.cols()];
    for row in x.row_iter() {
        for ((s, v), m) in scale.iter_mut().zip(row).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut scale {
        *s = (*s / n).sqrt();
        if !(*s > 1e-12) {
            *s = 1.0;
        }
    }
    let mut model = ProbeModel {
        mean,
        scale,
        weight: vec![0.0; x.cols()],
        bias: 0.0,
        n_train: train.len(),
    };
    let xs = model.standardize(&x);
    let y = train.attribute_labels();
    for _ in 0..config.epochs {
        let residual: Vec<f64> = model
            .logits(&xs)
            .into_iter()
            .zip(&y)
            .map(|(z, t)| (sigmoid(z) - t) / n)
            .collect();
        let r = Matrix::from_vec(residual.len(), 1, residual).expect("shape");
        let grad_w = xs.t_matmul(&r)?;
        let grad_b: f64 = r.data().iter().sum();
        for (w, g) in model.weight.iter_mut().zip(grad_w.data()) {
            *w -= config.rate * (g + config.l2 * *w);
        }
        model.bias -= config.rate * grad_b;
    }
    if !model.weight.iter().all(|w| w.is_finite()) || !model.bias.is_finite() {
        return Err(Error::Numeric("probe weights diverged".into()));
    }
    Ok(model)
}

pub fn probe_eval(model: &ProbeModel, test: &Dataset) -> Result<ProbeReport> {
    if test.is_empty() {
        return Err(Error::Validation("probe test set is empty".into()));
    }
    let probs = model.predict_proba(test)?;
    let (mut wrong_f, mut wrong_m) = (0usize, 0usize);
    for (p, r) in probs.iter().zip(test.records()) {
        let predicted_male = *p > 0.5;
        match r.attribute {
            Attribute::Female if predicted_male => wrong_f += 1,
            Attribute::Male if !predicted_male => wrong_m += 1,
            _ => {}
        }
    }
    let n_female = test.count(Attribute::Female);
    let n_male = test.count(Attribute::Male);
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    Ok(ProbeReport {
        accuracy: pct(test.len() - wrong_f - wrong_m, test.len()),
        females_misclassified: pct(wrong_f, n_female),
        males_misclassified: pct(wrong_m, n_male),
        n_train: model.n_train,
        n_test: test.len(),
        n_female,
        n_male,
    })
}

impl ProbeReport {
    pub fn to_report(&self, config: &ProbeConfig) -> CsvReport {
        let mut r = CsvReport::new([
            "accuracy",
            "females_misclassified",
            "males_misclassified",
            "n_train",
            "n_test",
        ]);
        r.meta("tool", concat!("agenda ", env!("CARGO_PKG_VERSION")))
            .meta("probe", "logistic regression, z-scored features, full-batch gradient descent")
            .meta("epochs", config.epochs)
            .meta("rate", config.rate)
            .meta("l2", config.l2);
        r.push_row([
            fmt_f64(self.accuracy),
            fmt_f64(self.females_misclassified),
            fmt_f64(self.males_misclassified),
            self.n_train.to_string(),
            self.n_test.to_string(),
        ]);
        r
    }
}

/// Trains on `train` and evaluates on `test` with the given config.
pub fn probe_accuracy(train: &Dataset, test: &Dataset, config: &ProbeConfig) -> Result<ProbeReport> {
    probe_eval(&probe_train(train, config)?, test)
}
