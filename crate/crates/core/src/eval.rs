//! Group-wise 1:1 verification: cosine pair scores, TPR at fixed FPR per
//! attribute group, and the bias gap between groups.
//!
//! Operating points use a strict `score > threshold` rule with no ROC
//! interpolation. For a target FPR the threshold is the smallest observed
//! impostor score whose impostor pass fraction stays within the target.

use rand::Rng;
use rayon::prelude::*;

use crate::dataio::{fmt_f64, Attribute, CsvReport, Dataset, PairRow};
use crate::error::{Error, Result};
use crate::probe::{probe_accuracy, ProbeConfig};
use crate::rng::substream;
use crate::trainer::{train, transform, TrainConfig};

pub const DEFAULT_FPRS: [f64; 4] = [1e-6, 1e-5, 1e-4, 1e-3];
pub const THRESHOLD_RULE: &str = "strict-greater, no interpolation";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Pair {
    pub a: usize,
    pub b: usize,
    pub genuine: bool,
    pub group: Attribute,
}

/// Same-group verification pairs over one dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct PairProtocol {
    pub pairs: Vec<Pair>,
}

impl PairProtocol {
    /// Validates raw rows against `ds`: indices in range, both endpoints in
    /// one group, and `genuine` equal to identity agreement.
    pub fn from_rows(ds: &Dataset, rows: &[PairRow]) -> Result<Self> {
        let recs = ds.records();
        let pairs = rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let (ra, rb) = match (recs.get(r.index_a), recs.get(r.index_b)) {
                    (Some(a), Some(b)) => (a, b),
                    _ => {
                        return Err(Error::Validation(format!(
                            "pair {i} ({}, {}) out of range for {} records",
                            r.index_a,
                            r.index_b,
                            recs.len()
                        )))
                    }
                };
                if ra.attribute != rb.attribute {
                    return Err(Error::Validation(format!("pair {i} crosses attribute groups")));
                }
                if (ra.identity == rb.identity) != r.genuine {
                    return Err(Error::Validation(format!(
                        "pair {i} genuine flag disagrees with identities"
                    )));
                }
                Ok(Pair { a: r.index_a, b: r.index_b, genuine: r.genuine, group: ra.attribute })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PairProtocol { pairs })
    }

    pub fn to_rows(&self) -> Vec<PairRow> {
        self.pairs
            .iter()
            .map(|p| PairRow { index_a: p.a, index_b: p.b, genuine: p.genuine })
            .collect()
    }

    pub fn count(&self, group: Attribute, genuine: bool) -> usize {
        self.pairs.iter().filter(|p| p.group == group && p.genuine == genuine).count()
    }
}

/// How to build a protocol when none is supplied.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairConfig {
    /// Impostor pairs drawn per genuine pair, per group.
    pub impostor_ratio: f64,
    /// Cap on genuine pairs per identity (all pairs when `None`).
    pub max_genuine_per_identity: Option<usize>,
    pub seed: u64,
}

impl Default for PairConfig {
    fn default() -> Self {
        PairConfig { impostor_ratio: 10.0, max_genuine_per_identity: None, seed: 0 }
    }
}

/// All within-identity pairs (optionally capped) plus uniformly drawn
/// different-identity pairs from the same group.
pub fn generate_pairs(ds: &Dataset, cfg: &PairConfig) -> Result<PairProtocol> {
    if !(cfg.impostor_ratio > 0.0 && cfg.impostor_ratio.is_finite()) {
        return Err(Error::Validation(format!(
            "impostor ratio must be positive, got {}",
            cfg.impostor_ratio
        )));
    }
    let mut pairs = Vec::new();
    for (gi, group) in [Attribute::Male, Attribute::Female].into_iter().enumerate() {
        let members: Vec<usize> =
            (0..ds.len()).filter(|&i| ds.records()[i].attribute == group).collect();
        let mut by_id: std::collections::BTreeMap<u64, Vec<usize>> = Default::default();
        for &i in &members {
            by_id.entry(ds.records()[i].identity).or_default().push(i);
        }
        if by_id.len() < 2 {
            return Err(Error::Validation(format!(
                "group {} needs at least 2 identities for impostor pairs",
                group.name()
            )));
        }
        let mut genuine = 0usize;
        for idx in by_id.values() {
            let mut n = 0;
            'outer: for x in 0..idx.len() {
                for y in x + 1..idx.len() {
                    if cfg.max_genuine_per_identity.is_some_and(|m| n >= m) {
                        break 'outer;
                    }
                    pairs.push(Pair { a: idx[x], b: idx[y], genuine: true, group });
                    n += 1;
                }
            }
            genuine += n;
        }
        if genuine == 0 {
            return Err(Error::Validation(format!(
                "group {} has no identity with two samples",
                group.name()
            )));
        }
        let n_imp = ((genuine as f64) * cfg.impostor_ratio).round().max(1.0) as usize;
        let mut rng = substream(cfg.seed, "pairs.impostor", gi as u64);
        let mut drawn = 0;
        while drawn < n_imp {
            let a = members[rng.random_range(0..members.len())];
            let b = members[rng.random_range(0..members.len())];
            if ds.records()[a].identity != ds.records()[b].identity {
                pairs.push(Pair { a, b, genuine: false, group });
                drawn += 1;
            }
        }
    }
    Ok(PairProtocol { pairs })
}

/// Cosine scores plus the number of pairs that touched a zero-norm
/// descriptor (scored −1).
#[derive(Clone, Debug, PartialEq)]
pub struct Scores {
    pub values: Vec<f64>,
    pub zero_norm_pairs: usize,
}

pub fn cosine(a: &[f32], b: &[f32]) -> Option<f64> {
    let (mut ab, mut aa, mut bb) = (0.0, 0.0, 0.0);
    for (&x, &y) in a.iter().zip(b) {
        let (x, y) = (x as f64, y as f64);
        ab += x * y;
        aa += x * x;
        bb += y * y;
    }
    if aa == 0.0 || bb == 0.0 {
        return None;
    }
    Some(ab / (aa.sqrt() * bb.sqrt()))
}

pub fn score_pairs(ds: &Dataset, protocol: &PairProtocol) -> Result<Scores> {
    let recs = ds.records();
    if let Some(p) = protocol.pairs.iter().find(|p| p.a >= recs.len() || p.b >= recs.len()) {
        return Err(Error::Validation(format!(
            "pair ({}, {}) out of range for {} records",
            p.a,
            p.b,
            recs.len()
        )));
    }
    let scored: Vec<Option<f64>> = protocol
        .pairs
        .par_iter()
        .map(|p| cosine(&recs[p.a].vector, &recs[p.b].vector))
        .collect();
    let zero_norm_pairs = scored.iter().filter(|s| s.is_none()).count();
    Ok(Scores { values: scored.into_iter().map(|s| s.unwrap_or(-1.0)).collect(), zero_norm_pairs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatingPoint {
    pub target_fpr: f64,
    pub threshold: f64,
    pub tpr: f64,
    pub achieved_fpr: f64,
    /// Target below one impostor's worth of resolution.
    pub coverage_warning: bool,
}

/// Largest `k` with `k/n ≤ target`.
fn allowed_false_accepts(n: usize, target: f64) -> usize {
    let mut k = ((target * n as f64).floor() as usize).min(n);
    while k > 0 && (k as f64) / (n as f64) > target {
        k -= 1;
    }
    while k < n && ((k + 1) as f64) / (n as f64) <= target {
        k += 1;
    }
    k
}

/// Operating points for one group. Scores must be finite.
pub fn operating_points(genuine: &[f64], impostor: &[f64], targets: &[f64]) -> Result<Vec<OperatingPoint>> {
    if genuine.is_empty() || impostor.is_empty() {
        return Err(Error::Validation(format!(
            "need genuine and impostor pairs, got {} and {}",
            genuine.len(),
            impostor.len()
        )));
    }
    if let Some(t) = targets.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
        return Err(Error::Validation(format!("FPR target must be in (0,1), got {t}")));
    }
    if genuine.iter().chain(impostor).any(|s| !s.is_finite()) {
        return Err(Error::Numeric("non-finite verification score".into()));
    }
    let mut imp = impostor.to_vec();
    imp.sort_by(|a, b| b.total_cmp(a));
    let mut gen = genuine.to_vec();
    gen.sort_by(|a, b| a.total_cmp(b));
    let n = imp.len();
    Ok(targets
        .iter()
        .map(|&target| {
            let k = allowed_false_accepts(n, target);
            let threshold = imp[k];
            let above_imp = imp.partition_point(|&s| s > threshold);
            let above_gen = gen.len() - gen.partition_point(|&s| s <= threshold);
            OperatingPoint {
                target_fpr: target,
                threshold,
                tpr: above_gen as f64 / gen.len() as f64,
                achieved_fpr: above_imp as f64 / n as f64,
                coverage_warning: k == 0,
            }
        })
        .collect())
}

pub fn bias(tpr_m: f64, tpr_f: f64) -> f64 {
    (tpr_m - tpr_f).abs()
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub male: Vec<OperatingPoint>,
    pub female: Vec<OperatingPoint>,
    /// Both groups' pairs scored together.
    pub pooled: Vec<OperatingPoint>,
    pub pair_counts: [(usize, usize); 2],
    pub zero_norm_pairs: usize,
}

impl EvalReport {
    pub fn bias(&self) -> Vec<f64> {
        self.male.iter().zip(&self.female).map(|(m, f)| bias(m.tpr, f.tpr)).collect()
    }

    pub fn coverage_warnings(&self) -> usize {
        self.male.iter().chain(&self.female).filter(|p| p.coverage_warning).count()
    }

    pub fn to_report(&self) -> CsvReport {
        let mut r = CsvReport::new([
            "FPR", "TPR_m", "TPR_f", "Bias", "TPR_all", "threshold_m", "threshold_f", "achieved_fpr_m",
            "achieved_fpr_f",
        ]);
        r.meta("threshold_rule", THRESHOLD_RULE)
            .meta("similarity", "cosine")
            .meta("pairs_male_genuine", self.pair_counts[0].0)
            .meta("pairs_male_impostor", self.pair_counts[0].1)
            .meta("pairs_female_genuine", self.pair_counts[1].0)
            .meta("pairs_female_impostor", self.pair_counts[1].1)
            .meta("zero_norm_pairs", self.zero_norm_pairs)
            .meta("coverage_warnings", self.coverage_warnings());
        for ((m, f), p) in self.male.iter().zip(&self.female).zip(&self.pooled) {
            r.push_row([
                format!("{:e}", m.target_fpr),
                fmt_f64(m.tpr),
                fmt_f64(f.tpr),
                fmt_f64(bias(m.tpr, f.tpr)),
                fmt_f64(p.tpr),
                fmt_f64(m.threshold),
                fmt_f64(f.threshold),
                fmt_f64(m.achieved_fpr),
                fmt_f64(f.achieved_fpr),
            ]);
        }
        r
    }
}

pub fn evaluate(ds: &Dataset, protocol: &PairProtocol, fprs: &[f64]) -> Result<EvalReport> {
    let scores = score_pairs(ds, protocol)?;
    let mut buckets: [[Vec<f64>; 2]; 2] = Default::default();
    for (p, &s) in protocol.pairs.iter().zip(&scores.values) {
        let g = usize::from(p.group == Attribute::Female);
        buckets[g][usize::from(!p.genuine)].push(s);
    }
    let male = operating_points(&buckets[0][0], &buckets[0][1], fprs)?;
    let female = operating_points(&buckets[1][0], &buckets[1][1], fprs)?;
    let all_gen: Vec<f64> = buckets[0][0].iter().chain(&buckets[1][0]).copied().collect();
    let all_imp: Vec<f64> = buckets[0][1].iter().chain(&buckets[1][1]).copied().collect();
    let pooled = operating_points(&all_gen, &all_imp, fprs)?;
    Ok(EvalReport {
        male,
        female,
        pooled,
        pair_counts: [
            (buckets[0][0].len(), buckets[0][1].len()),
            (buckets[1][0].len(), buckets[1][1].len()),
        ],
        zero_norm_pairs: scores.zero_norm_pairs,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Lambda,
    K,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::K => "k",
        }
    }

    /// `base` with the parameter set; a K sweep also sets `t_ep = K`.
    pub fn apply(self, base: &TrainConfig, value: f64) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            SweepParam::Lambda => cfg.lambda = value,
            SweepParam::K => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Error::Validation(format!("K must be a positive integer, got {value}")));
                }
                cfg.k = value as usize;
                cfg.t_ep = cfg.k;
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Identity-disjoint partitions for an end-to-end experiment: methods are
/// fit on `fit`; `eval` is split again into probe train and test parts.
#[derive(Clone, Debug)]
pub struct ExperimentSplits {
    pub fit: Dataset,
    pub eval: Dataset,
    pub probe_train: Dataset,
    pub probe_test: Dataset,
}

pub fn experiment_splits(ds: &Dataset, eval_fraction: f64, probe_test_fraction: f64, seed: u64) -> Result<ExperimentSplits> {
    let (fit, eval) = ds.split_by_identity(eval_fraction, seed)?;
    let (probe_train, probe_test) = eval.split_by_identity(probe_test_fraction, seed.wrapping_add(1))?;
    Ok(ExperimentSplits { fit, eval, probe_train, probe_test })
}

impl ExperimentSplits {
    pub fn sweep_data<'a>(&'a self, protocol: &'a PairProtocol) -> SweepData<'a> {
        SweepData {
            fit: &self.fit,
            eval: &self.eval,
            protocol,
            probe_train: &self.probe_train,
            probe_test: &self.probe_test,
        }
    }
}

/// Data for a sweep: AGENDA is fit on `fit`, verification runs on `eval`
/// with `protocol`, and the probe trains and tests on the given splits.
pub struct SweepData<'a> {
    pub fit: &'a Dataset,
    pub eval: &'a Dataset,
    pub protocol: &'a PairProtocol,
    pub probe_train: &'a Dataset,
    pub probe_test: &'a Dataset,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepRow {
    pub value: f64,
    pub tpr_m: f64,
    pub tpr_f: f64,
    pub bias: f64,
    pub tpr_all: f64,
    pub probe_accuracy: f64,
}

/// One train, transform and evaluation per value, at a single FPR.
pub fn ablation_sweep(
    data: &SweepData,
    base: &TrainConfig,
    param: SweepParam,
    values: &[f64],
    fpr: f64,
    probe: &ProbeConfig,
) -> Result<Vec<SweepRow>> {
    values
        .iter()
        .map(|&value| {
            let cfg = param.apply(base, value)?;
            let out = train(data.fit, &cfg)?;
            let g = &out.checkpoint.generator;
            let rep = evaluate(&transform(g, data.eval)?, data.protocol, &[fpr])?;
            let acc = probe_accuracy(&transform(g, data.probe_train)?, &transform(g, data.probe_test)?, probe)?;
            Ok(SweepRow {
                value,
                tpr_m: rep.male[0].tpr,
                tpr_f: rep.female[0].tpr,
                bias: rep.bias()[0],
                tpr_all: rep.pooled[0].tpr,
                probe_accuracy: acc.accuracy,
            })
        })
        .collect()
}

pub fn sweep_report(param: SweepParam, fpr: f64, rows: &[SweepRow]) -> CsvReport {
    let mut r = CsvReport::new([param.name(), "TPR_m", "TPR_f", "Bias", "TPR_all", "probe_accuracy"]);
    r.meta("fpr", format!("{fpr:e}")).meta("threshold_rule", THRESHOLD_RULE);
    for row in rows {
        r.push_row([
            row.value.to_string(),
            fmt_f64(row.tpr_m),
            fmt_f64(row.tpr_f),
            fmt_f64(row.bias),
            fmt_f64(row.tpr_all),
            fmt_f64(row.probe_accuracy),
        ]);
    }
    r
}

#[derive(Clone, Debug)]
pub struct MethodResult {
    pub method: &'static str,
    pub report: EvalReport,
    pub probe_accuracy: f64,
}

/// Original descriptors against the correlation-filtered PCA baseline and
/// the adversarially trained generator, all fit on `data.fit`.
pub fn compare_methods(
    data: &SweepData,
    train_cfg: &TrainConfig,
    delta: f64,
    fprs: &[f64],
    probe: &ProbeConfig,
) -> Result<Vec<MethodResult>> {
    let run = |method: &'static str, f: &dyn Fn(&Dataset) -> Result<Dataset>| -> Result<MethodResult> {
        let report = evaluate(&f(data.eval)?, data.protocol, fprs)?;
        let acc = probe_accuracy(&f(data.probe_train)?, &f(data.probe_test)?, probe)?;
        Ok(MethodResult { method, report, probe_accuracy: acc.accuracy })
    };
    let subspace = crate::corrpca::fit(data.fit, delta)?;
    let generator = train(data.fit, train_cfg)?.checkpoint.generator;
    Ok(vec![
        run("original", &|d| Ok(d.clone()))?,
        run("corrpca", &|d| crate::corrpca::project(&subspace, d))?,
        run("agenda", &|d| transform(&generator, d))?,
    ])
}

pub fn compare_report(results: &[MethodResult]) -> CsvReport {
    let mut r = CsvReport::new(["method", "FPR", "TPR_m", "TPR_f", "Bias", "TPR_all", "probe_accuracy"]);
    r.meta("threshold_rule", THRESHOLD_RULE).meta("similarity", "cosine");
    for m in results {
        for ((pm, pf), pa) in m.report.male.iter().zip(&m.report.female).zip(&m.report.pooled) {
            r.push_row([
                m.method.to_string(),
                format!("{:e}", pm.target_fpr),
                fmt_f64(pm.tpr),
                fmt_f64(pf.tpr),
                fmt_f64(bias(pm.tpr, pf.tpr)),
                fmt_f64(pa.tpr),
                fmt_f64(m.probe_accuracy),
            ]);
        }
    }
    r
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_example() {
        let pts = operating_points(&[0.9, 0.8, 0.2], &[0.7, 0.3, 0.1], &[1.0 / 3.0]).unwrap();
        assert_eq!(pts[0].threshold, 0.3);
        assert_eq!(pts[0].tpr, 2.0 / 3.0);
        assert_eq!(pts[0].achieved_fpr, 1.0 / 3.0);
        assert!(!pts[0].coverage_warning);
    }

    #[test]
    fn perfect_separation_and_coverage() {
        let pts = operating_points(&[0.9, 0.95], &[0.1, 0.2, 0.3], &[0.01, 0.5]).unwrap();
        assert!(pts.iter().all(|p| p.tpr == 1.0));
        assert!(pts[0].coverage_warning);
        assert_eq!(pts[0].achieved_fpr, 0.0);
        assert_eq!(pts[0].threshold, 0.3);
    }

    #[test]
    fn ties_at_threshold() {
        // three impostors tied at the top: none of them can pass at 1/4
        let pts = operating_points(&[0.5, 0.6], &[0.5, 0.5, 0.5, 0.1], &[0.25]).unwrap();
        assert_eq!(pts[0].threshold, 0.5);
        assert_eq!(pts[0].achieved_fpr, 0.0);
        assert_eq!(pts[0].tpr, 0.5);
    }

    #[test]
    fn bias_examples() {
        assert!((bias(0.92, 0.90) - 0.02).abs() < 1e-12);
        assert!((bias(0.67, 0.63) - 0.04).abs() < 1e-12);
        assert_eq!(bias(0.5, 0.5), 0.0);
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine(&[1.0, 2.0], &[2.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 3.0]).unwrap(), 0.0);
        assert_eq!(cosine(&[0.0, 0.0], &[1.0, 0.0]), None);
    }

    #[test]
    fn rejects_bad_targets() {
        assert!(operating_points(&[0.1], &[0.2], &[0.0]).is_err());
        assert!(operating_points(&[0.1], &[0.2], &[1.0]).is_err());
        assert!(operating_points(&[], &[0.2], &[0.1]).is_err());
    }
}
