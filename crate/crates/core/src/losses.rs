//! Identity cross-entropy, ensemble attribute cross-entropy, the
//! even-posterior adversarial loss, its max over the ensemble, and the
//! combined debiasing objective.
//!
//! Every cross-entropy is a batch mean. The `*_objective` functions compose
//! a loss with the networks and return exact gradients for every parameter
//! block the loss depends on.

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::nets::{ClassifierParams, DiscriminatorParams, EnsembleParams, GeneratorParams, ParamSet};

/// Probabilities below this are clamped before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct LossValue {
    pub value: f64,
    pub terms: Vec<(String, f64)>,
    /// Number of probabilities that hit [`LOG_CLAMP`].
    pub clamped: usize,
}

impl LossValue {
    fn plain(value: f64, clamped: usize) -> Self {
        LossValue {
            value,
            terms: Vec::new(),
            clamped,
        }
    }

    pub fn term(&self, name: &str) -> Option<f64> {
        self.terms.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }
}

/// A loss value with its gradient with respect to the network output.
#[derive(Clone, Debug)]
pub struct LossGrad {
    pub loss: LossValue,
    pub grad: Matrix,
}

/// `−ln max(p, clamp)` and its derivative in `p` (zero when clamped).
#[inline]
fn neg_log(p: f64, clamped: &mut usize) -> (f64, f64) {
    if p < LOG_CLAMP {
        *clamped += 1;
        (-LOG_CLAMP.ln(), 0.0)
    } else {
        (-p.ln(), -1.0 / p)
    }
}

fn check_batch(what: &str, rows: usize, labels: usize) -> Result<()> {
    if rows == 0 {
        return Err(Error::Validation(format!("{what}: empty batch")));
    }
    if rows != labels {
        return Err(Error::Dimension(format!("{what}: {labels} labels for {rows} rows")));
    }
    Ok(())
}

/// Mean of `−ln p[true identity]`.
pub fn l_class(probs: &Matrix, y_id: &[usize]) -> Result<LossGrad> {
    check_batch("l_class", probs.rows(), y_id.len())?;
    let n = probs.rows() as f64;
    let mut grad = Matrix::zeros(probs.rows(), probs.cols());
    let (mut total, mut clamped) = (0.0, 0);
    for (r, &y) in y_id.iter().enumerate() {
        if y >= probs.cols() {
            return Err(Error::Validation(format!(
                "identity index {y} out of range for {} classes",
                probs.cols()
            )));
        }
        let (v, d) = neg_log(probs.get(r, y), &mut clamped);
        total += v;
        grad.set(r, y, d / n);
    }
    Ok(LossGrad {
        loss: LossValue::plain(total / n, clamped),
        grad,
    })
}

/// Binary cross-entropy of one member's `(o_male, o_female)` rows.
pub fn l_g_member(outputs: &Matrix, male: &[bool]) -> Result<LossGrad> {
    check_batch("l_g", outputs.rows(), male.len())?;
    if outputs.cols() != 2 {
        return Err(Error::Dimension(format!("l_g expects 2 output columns, got {}", outputs.cols())));
    }
    let n = outputs.rows() as f64;
    let mut grad = Matrix::zeros(outputs.rows(), 2);
    let (mut total, mut clamped) = (0.0, 0);
    for (r, &m) in male.iter().enumerate() {
        let col = if m { 0 } else { 1 };
        let (v, d) = neg_log(outputs.get(r, col), &mut clamped);
        total += v;
        grad.set(r, col, d / n);
    }
    Ok(LossGrad {
        loss: LossValue::plain(total / n, clamped),
        grad,
    })
}

/// Sum over members of [`l_g_member`].
pub fn l_g(outputs: &[&Matrix], male: &[bool]) -> Result<(LossValue, Vec<Matrix>)> {
    if outputs.is_empty() {
        return Err(Error::Validation("l_g needs at least one ensemble member".into()));
    }
    let mut loss = LossValue::plain(0.0, 0);
    let mut grads = Vec::with_capacity(outputs.len());
    for (k, out) in outputs.iter().enumerate() {
        let lg = l_g_member(out, male)?;
        loss.value += lg.loss.value;
        loss.clamped += lg.loss.clamped;
        loss.terms.push((format!("member_{k}"), lg.loss.value));
        grads.push(lg.grad);
    }
    Ok((loss, grads))
}

/// Mean of `−(½ ln o_male + ½ ln o_female)`; minimized at `(½, ½)`.
pub fn l_a(outputs: &Matrix) -> Result<LossGrad> {
    check_batch("l_a", outputs.rows(), outputs.rows())?;
    if outputs.cols() != 2 {
        return Err(Error::Dimension(format!("l_a expects 2 output columns, got {}", outputs.cols())));
    }
    let n = outputs.rows() as f64;
    let mut grad = Matrix::zeros(outputs.rows(), 2);
    let (mut total, mut clamped) = (0.0, 0);
    for r in 0..outputs.rows() {
        for c in 0..2 {
            let (v, d) = neg_log(outputs.get(r, c), &mut clamped);
            total += 0.5 * v;
            grad.set(r, c, 0.5 * d / n);
        }
    }
    Ok(LossGrad {
        loss: LossValue::plain(total / n, clamped),
        grad,
    })
}

/// The strongest member's adversarial loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DebSelection {
    pub value: f64,
    /// Lowest index among tied maxima.
    pub member: usize,
}

pub fn l_deb(member_losses: &[f64]) -> Result<DebSelection> {
    let (&first, rest) = member_losses
        .split_first()
        .ok_or_else(|| Error::Validation("l_deb needs at least one member".into()))?;
    let mut best = DebSelection {
        value: first,
        member: 0,
    };
    for (i, &v) in rest.iter().enumerate() {
        if v > best.value {
            best = DebSelection { value: v, member: i + 1 };
        }
    }
    Ok(best)
}

/// `l_class + λ·l_deb`, keeping both terms.
pub fn l_br(class: &LossValue, deb: &LossValue, lambda: f64) -> Result<LossValue> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::Validation(format!("lambda must be finite and >= 0, got {lambda}")));
    }
    if !class.value.is_finite() || !deb.value.is_finite() {
        return Err(Error::Numeric("l_br inputs must be finite".into()));
    }
    Ok(LossValue {
        value: class.value + lambda * deb.value,
        terms: vec![("l_class".into(), class.value), ("l_deb".into(), deb.value)],
        clamped: class.clamped + deb.clamped,
    })
}

/// A loss together with gradients for each network it depends on.
#[derive(Clone, Debug)]
pub struct Objective {
    pub loss: LossValue,
    pub generator: Option<GeneratorParams>,
    pub classifier: Option<ClassifierParams>,
    pub ensemble: Option<EnsembleParams>,
    /// Member chosen by `l_deb`, when the loss involves it.
    pub member: Option<usize>,
    /// Per-member batch-mean `l_a`, when computed.
    pub member_losses: Vec<f64>,
}

/// Ensemble `L_g` on fixed features: loss, ensemble gradients, feature gradient.
pub fn g_on_features(ens: &EnsembleParams, features: &Matrix, male: &[bool]) -> Result<(LossValue, EnsembleParams, Matrix)> {
    let passes = ens
        .members
        .iter()
        .map(|m| m.forward(features))
        .collect::<Result<Vec<_>>>()?;
    let outs: Vec<&Matrix> = passes.iter().map(|p| &p.output).collect();
    let (loss, grads) = l_g(&outs, male)?;
    let mut ens_grads = Vec::with_capacity(ens.len());
    let mut grad_f = Matrix::zeros(features.rows(), features.cols());
    for ((member, pass), g) in ens.members.iter().zip(&passes).zip(&grads) {
        let (pg, gx) = member.backward(pass, g)?;
        ens_grads.push(pg);
        for (a, b) in grad_f.data_mut().iter_mut().zip(gx.data()) {
            *a += b;
        }
    }
    Ok((loss, EnsembleParams { members: ens_grads }, grad_f))
}

/// One member's `L_g` on fixed features.
pub fn g_member_on_features(
    member: &DiscriminatorParams,
    features: &Matrix,
    male: &[bool],
) -> Result<(LossValue, DiscriminatorParams, Matrix)> {
    let pass = member.forward(features)?;
    let lg = l_g_member(&pass.output, male)?;
    let (grads, gx) = member.backward(&pass, &lg.grad)?;
    Ok((lg.loss, grads, gx))
}

/// `L_a` of one member on fixed features.
pub fn a_on_features(member: &DiscriminatorParams, features: &Matrix) -> Result<(LossValue, DiscriminatorParams, Matrix)> {
    let pass = member.forward(features)?;
    let la = l_a(&pass.output)?;
    let (grads, gx) = member.backward(&pass, &la.grad)?;
    Ok((la.loss, grads, gx))
}

/// Result of `L_deb` on fixed features.
#[derive(Clone, Debug)]
pub struct DebOnFeatures {
    pub loss: LossValue,
    pub selection: DebSelection,
    pub member_losses: Vec<f64>,
    /// Nonzero only for the selected member.
    pub ensemble: EnsembleParams,
    pub grad_features: Matrix,
}

/// `L_deb` on fixed features; only the selected member is backpropagated.
pub fn deb_on_features(ens: &EnsembleParams, features: &Matrix) -> Result<DebOnFeatures> {
    let passes = ens
        .members
        .iter()
        .map(|m| m.forward(features))
        .collect::<Result<Vec<_>>>()?;
    let las = passes.iter().map(|p| l_a(&p.output)).collect::<Result<Vec<_>>>()?;
    let member_losses: Vec<f64> = las.iter().map(|l| l.loss.value).collect();
    let selection = l_deb(&member_losses)?;
    let k = selection.member;
    let (member_grads, grad_features) = ens.members[k].backward(&passes[k], &las[k].grad)?;
    let mut ensemble = ens.zeros_like();
    ensemble.members[k] = member_grads;
    let mut loss = LossValue::plain(selection.value, las[k].loss.clamped);
    loss.terms.push(("member".into(), k as f64));
    Ok(DebOnFeatures {
        loss,
        selection,
        member_losses,
        ensemble,
        grad_features,
    })
}

/// `L_class` through generator and classifier.
pub fn class_objective(gen: &GeneratorParams, cls: &ClassifierParams, x: &Matrix, y_id: &[usize]) -> Result<Objective> {
    let gp = gen.forward(x)?;
    let cp = cls.forward(&gp.output)?;
    let lc = l_class(&cp.probs, y_id)?;
    let (cls_grads, grad_f) = cls.backward(&cp, &lc.grad)?;
    let (gen_grads, _) = gen.backward(&gp, &grad_f)?;
    Ok(Objective {
        loss: lc.loss,
        generator: Some(gen_grads),
        classifier: Some(cls_grads),
        ensemble: None,
        member: None,
        member_losses: Vec::new(),
    })
}

/// `L_g` through generator and the whole ensemble.
pub fn g_objective(gen: &GeneratorParams, ens: &EnsembleParams, x: &Matrix, male: &[bool]) -> Result<Objective> {
    let gp = gen.forward(x)?;
    let (loss, ens_grads, grad_f) = g_on_features(ens, &gp.output, male)?;
    let (gen_grads, _) = gen.backward(&gp, &grad_f)?;
    Ok(Objective {
        loss,
        generator: Some(gen_grads),
        classifier: None,
        ensemble: Some(ens_grads),
        member: None,
        member_losses: Vec::new(),
    })
}

/// `L_a` of one member through the generator.
pub fn a_objective(gen: &GeneratorParams, member: &DiscriminatorParams, x: &Matrix) -> Result<Objective> {
    let gp = gen.forward(x)?;
    let (loss, member_grads, grad_f) = a_on_features(member, &gp.output)?;
    let (gen_grads, _) = gen.backward(&gp, &grad_f)?;
    Ok(Objective {
        loss,
        generator: Some(gen_grads),
        classifier: None,
        ensemble: Some(EnsembleParams {
            members: vec![member_grads],
        }),
        member: None,
        member_losses: Vec::new(),
    })
}

/// `L_deb` through generator and ensemble.
pub fn deb_objective(gen: &GeneratorParams, ens: &EnsembleParams, x: &Matrix) -> Result<Objective> {
    let gp = gen.forward(x)?;
    let deb = deb_on_features(ens, &gp.output)?;
    let (gen_grads, _) = gen.backward(&gp, &deb.grad_features)?;
    Ok(Objective {
        loss: deb.loss,
        generator: Some(gen_grads),
        classifier: None,
        ensemble: Some(deb.ensemble),
        member: Some(deb.selection.member),
        member_losses: deb.member_losses,
    })
}

/// `L_br = L_class + λ·L_deb`. The classifier receives only the `L_class`
/// gradient; the generator receives both.
pub fn br_objective(
    gen: &GeneratorParams,
    cls: &ClassifierParams,
    ens: &EnsembleParams,
    x: &Matrix,
    y_id: &[usize],
    lambda: f64,
) -> Result<Objective> {
    let gp = gen.forward(x)?;
    let cp = cls.forward(&gp.output)?;
    let lc = l_class(&cp.probs, y_id)?;
    let (cls_grads, mut grad_f) = cls.backward(&cp, &lc.grad)?;
    let deb = deb_on_features(ens, &gp.output)?;
    let loss = l_br(&lc.loss, &deb.loss, lambda)?;
    for (a, b) in grad_f.data_mut().iter_mut().zip(deb.grad_features.data()) {
        *a += lambda * b;
    }
    let (gen_grads, _) = gen.backward(&gp, &grad_f)?;
    let mut ens_grads = deb.ensemble;
    for block in ens_grads.blocks_mut() {
        block.iter_mut().for_each(|v| *v *= lambda);
    }
    Ok(Objective {
        loss,
        generator: Some(gen_grads),
        classifier: Some(cls_grads),
        ensemble: Some(ens_grads),
        member: Some(deb.selection.member),
        member_losses: deb.member_losses,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pairs(rows: &[[f64; 2]]) -> Matrix {
        Matrix::from_rows(rows).unwrap()
    }

    #[test]
    fn l_class_cases() {
        let perfect = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(l_class(&perfect, &[0, 1]).unwrap().loss.value, 0.0);

        let uniform = Matrix::from_rows(&[[0.25; 4], [0.25; 4]]).unwrap();
        assert!((l_class(&uniform, &[0, 3]).unwrap().loss.value - 4f64.ln()).abs() < 1e-15);

        let p = Matrix::from_rows(&[[0.7, 0.2, 0.1]]).unwrap();
        let v = l_class(&p, &[0]).unwrap().loss.value;
        assert!((v - 0.35667494393873245).abs() < 1e-12);

        let zero = Matrix::from_rows(&[[1.0, 0.0]]).unwrap();
        let lv = l_class(&zero, &[1]).unwrap().loss;
        assert_eq!(lv.clamped, 1);
        assert!((lv.value - 1e-12f64.ln().abs()).abs() < 1e-9);

        assert!(l_class(&p, &[3]).is_err());
    }

    #[test]
    fn l_g_cases() {
        let perfect = pairs(&[[1.0, 0.0], [0.0, 1.0]]);
        let (lv, _) = l_g(&[&perfect], &[true, false]).unwrap();
        assert_eq!(lv.value, 0.0);

        let half = pairs(&[[0.5, 0.5]; 3]);
        let (lv, _) = l_g(&[&half, &half, &half], &[true, false, true]).unwrap();
        assert!((lv.value - 3.0 * 2f64.ln()).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut rand_out = || {
            let rows: Vec<[f64; 2]> = (0..5)
                .map(|_| {
                    let p = rng.random_range(0.01..0.99);
                    [p, 1.0 - p]
                })
                .collect();
            pairs(&rows)
        };
        let (a, b) = (rand_out(), rand_out());
        let male = [true, false, false, true, true];
        let (both, _) = l_g(&[&a, &b], &male).unwrap();
        let sep = l_g(&[&a], &male).unwrap().0.value + l_g(&[&b], &male).unwrap().0.value;
        assert!((both.value - sep).abs() < 1e-12);
    }

    #[test]
    fn l_a_cases() {
        let half = l_a(&pairs(&[[0.5, 0.5]])).unwrap().loss.value;
        assert!((half - 2f64.ln()).abs() < 1e-15);
        let skew = l_a(&pairs(&[[0.9, 0.1]])).unwrap().loss.value;
        assert!((skew - -(0.5 * 0.9f64.ln() + 0.5 * 0.1f64.ln())).abs() < 1e-15);
        assert!((skew - 1.20397).abs() < 5e-6);
        let swapped = l_a(&pairs(&[[0.1, 0.9]])).unwrap().loss.value;
        assert_eq!(skew, swapped);
        assert_eq!(l_a(&pairs(&[[1.0, 0.0]])).unwrap().loss.clamped, 1);
    }

    #[test]
    fn l_deb_cases() {
        assert_eq!(l_deb(&[0.2, 0.9, 0.5]).unwrap(), DebSelection { value: 0.9, member: 1 });
        assert_eq!(l_deb(&[0.7]).unwrap(), DebSelection { value: 0.7, member: 0 });
        assert_eq!(l_deb(&[0.4, 0.8, 0.8]).unwrap().member, 1);
        assert!(l_deb(&[]).is_err());
    }

    #[test]
    fn l_br_cases() {
        let c = LossValue::plain(1.0, 0);
        let d = LossValue::plain(0.5, 0);
        assert_eq!(l_br(&c, &d, 10.0).unwrap().value, 6.0);
        assert_eq!(l_br(&c, &d, 0.0).unwrap().value, 1.0);
        assert!(l_br(&c, &d, -1.0).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (cv, dv) = (rng.random_range(0.0..5.0), rng.random_range(0.6..0.9));
        let br = l_br(&LossValue::plain(cv, 0), &LossValue::plain(dv, 0), 1.0).unwrap();
        assert_eq!(br.value, cv + dv);
        assert_eq!(br.term("l_class"), Some(cv));
        assert_eq!(br.term("l_deb"), Some(dv));
    }

    proptest::proptest! {
        #[test]
        fn l_a_never_below_ln2(p in 1e-9f64..1.0) {
            let v = l_a(&pairs(&[[p, 1.0 - p]])).unwrap().loss.value;
            proptest::prop_assert!(v >= 2f64.ln() - 1e-12);
        }
    }
}
