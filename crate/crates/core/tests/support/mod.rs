//! Oracles shared by the integration tests and the acceptance target.
//!
//! Everything here is written against the public API only and recomputes
//! its answers independently of the code under test.
#![allow(dead_code)]

use agenda_core::dataio::{Attribute, Dataset, DescriptorRecord};
use agenda_core::linalg::Matrix;
use agenda_core::losses::{a_objective, br_objective, class_objective, deb_objective, g_objective};
use agenda_core::nets::{
    Adam, AdamConfig, Checkpoint, ClassifierParams, DiscriminatorParams, EnsembleParams, GeneratorParams, ParamSet,
    GENERATOR_OUT_DIM,
};
use agenda_core::rng::substream;
use agenda_core::trainer::{train_with_observer, BalancedBatches, Stage, TrainConfig, TrainObserver};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

// ---------------------------------------------------------------------------
// Finite differences

pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const FD_FLOOR: f64 = 1e-7;

/// Worst relative error between `analytic` and a central difference of
/// `loss` over every scalar in `params`.
pub fn max_rel_error<P: ParamSet + Clone>(params: &P, analytic: &P, loss: impl Fn(&P) -> f64) -> f64 {
    let mut worst: f64 = 0.0;
    let shapes: Vec<usize> = params.blocks().iter().map(|b| b.len()).collect();
    let grads: Vec<Vec<f64>> = analytic.blocks().iter().map(|b| b.to_vec()).collect();
    assert_eq!(shapes, grads.iter().map(|g| g.len()).collect::<Vec<_>>());
    for (b, &len) in shapes.iter().enumerate() {
        for i in 0..len {
            let mut plus = params.clone();
            plus.blocks_mut()[b][i] += FD_STEP;
            let mut minus = params.clone();
            minus.blocks_mut()[b][i] -= FD_STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * FD_STEP);
            let a = grads[b][i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

/// Small random nets: generator 8→8, classifier 8→4, K=3 members of width 8.
pub struct ToyNets {
    pub gen: GeneratorParams,
    pub cls: ClassifierParams,
    pub ens: EnsembleParams,
    pub x: Matrix,
    pub y: Vec<usize>,
    pub male: Vec<bool>,
}

pub fn toy_nets(seed: u64) -> ToyNets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gen = GeneratorParams::init(8, 8, &mut rng);
    let mut cls = ClassifierParams::init(8, 4, &mut rng).unwrap();
    let mut ens = EnsembleParams::init(3, 8, 8, &mut rng).unwrap();
    // Nonzero biases and slopes so every parameter carries gradient.
    for block in gen.blocks_mut().into_iter().chain(cls.blocks_mut()).chain(ens.blocks_mut()) {
        for v in block.iter_mut() {
            *v += 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let data: Vec<f64> = (0..6 * 8).map(|_| rng.sample(StandardNormal)).collect();
    ToyNets {
        gen,
        cls,
        ens,
        x: Matrix::from_vec(6, 8, data).unwrap(),
        y: (0..6).map(|i| i % 4).collect(),
        male: (0..6).map(|i| i % 2 == 0).collect(),
    }
}

/// `(loss, network, max relative error)` for every loss and every network
/// it reaches.
pub fn gradient_errors(seed: u64) -> Vec<(&'static str, &'static str, f64)> {
    let t = toy_nets(seed);
    let (x, y, male) = (&t.x, &t.y[..], &t.male[..]);
    let lambda = 0.7;
    let mut out = Vec::new();

    let o = class_objective(&t.gen, &t.cls, x, y).unwrap();
    out.push(("L_class", "M", max_rel_error(&t.gen, o.generator.as_ref().unwrap(), |g| {
        class_objective(g, &t.cls, x, y).unwrap().loss.value
    })));
    out.push(("L_class", "C", max_rel_error(&t.cls, o.classifier.as_ref().unwrap(), |c| {
        class_objective(&t.gen, c, x, y).unwrap().loss.value
    })));

    let o = g_objective(&t.gen, &t.ens, x, male).unwrap();
    out.push(("L_g", "M", max_rel_error(&t.gen, o.generator.as_ref().unwrap(), |g| {
        g_objective(g, &t.ens, x, male).unwrap().loss.value
    })));
    out.push(("L_g", "E", max_rel_error(&t.ens, o.ensemble.as_ref().unwrap(), |e| {
        g_objective(&t.gen, e, x, male).unwrap().loss.value
    })));

    let member = &t.ens.members[1];
    let o = a_objective(&t.gen, member, x).unwrap();
    out.push(("L_a", "M", max_rel_error(&t.gen, o.generator.as_ref().unwrap(), |g| {
        a_objective(g, member, x).unwrap().loss.value
    })));
    let member_grad: &DiscriminatorParams = &o.ensemble.as_ref().unwrap().members[0];
    out.push(("L_a", "E", max_rel_error(member, member_grad, |m| a_objective(&t.gen, m, x).unwrap().loss.value)));

    // The max is piecewise smooth; the perturbations are far too small to
    // change which member attains it.
    let o = deb_objective(&t.gen, &t.ens, x).unwrap();
    out.push(("L_deb", "M", max_rel_error(&t.gen, o.generator.as_ref().unwrap(), |g| {
        deb_objective(g, &t.ens, x).unwrap().loss.value
    })));
    out.push(("L_deb", "E", max_rel_error(&t.ens, o.ensemble.as_ref().unwrap(), |e| {
        deb_objective(&t.gen, e, x).unwrap().loss.value
    })));

    let br = |g: &GeneratorParams, c: &ClassifierParams, e: &EnsembleParams| {
        br_objective(g, c, e, x, y, lambda).unwrap()
    };
    let o = br(&t.gen, &t.cls, &t.ens);
    out.push(("L_br", "M", max_rel_error(&t.gen, o.generator.as_ref().unwrap(), |g| {
        br(g, &t.cls, &t.ens).loss.value
    })));
    // The classifier only sees L_class; L_deb does not depend on it.
    out.push(("L_br", "C", max_rel_error(&t.cls, o.classifier.as_ref().unwrap(), |c| {
        br(&t.gen, c, &t.ens).loss.value
    })));
    out.push(("L_br", "E", max_rel_error(&t.ens, o.ensemble.as_ref().unwrap(), |e| {
        br(&t.gen, &t.cls, e).loss.value
    })));
    out
}

// ---------------------------------------------------------------------------
// Training schedule

/// Expected `(episode, stage, member)` runs of a training whose stage 4
/// always runs at least one step.
pub fn simulate_schedule(n_ep: usize, t_ep: usize, k: usize) -> Vec<(usize, Stage, Option<usize>)> {
    let mut seq = Vec::new();
    for ep in 0..n_ep {
        if ep == 0 {
            seq.push((ep, Stage::InitClassifier, None));
        }
        if ep % t_ep == 0 {
            seq.push((ep, Stage::InitEnsemble, None));
        }
        seq.push((ep, Stage::Debias, None));
        seq.push((ep, Stage::UpdateMember, Some(ep % k)));
    }
    seq
}

/// Two well separated identities per attribute value, `per_id` samples each.
pub fn tiny_dataset(n_ids: usize, per_id: usize, dim: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    for id in 0..n_ids {
        let centre: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let attribute = if id % 2 == 0 { Attribute::Male } else { Attribute::Female };
        for _ in 0..per_id {
            let vector = centre
                .iter()
                .map(|c| (c + 0.1 * rng.sample::<f64, _>(StandardNormal)) as f32)
                .collect();
            records.push(DescriptorRecord {
                identity: 1000 + id as u64,
                attribute,
                vector,
            });
        }
    }
    Dataset::new(dim, records).unwrap()
}

pub fn tiny_config(n_ep: usize, t_ep: usize, k: usize) -> TrainConfig {
    TrainConfig {
        lambda: 1.0,
        k,
        t_fc: 2,
        t_gtrain: 2,
        t_deb: 2,
        t_plat: 2,
        t_ep,
        n_ep,
        batch_size: 8,
        validation_fraction: 0.25,
        // Stage 4 always trains; an early stop would still log one check.
        g_thresh: 1.0,
        ..TrainConfig::default()
    }
}

/// Records every case where a network that its stage must not touch changed.
#[derive(Default)]
pub struct FrozenCheck {
    before: Option<Checkpoint>,
    pub violations: Vec<String>,
    pub stages_seen: usize,
}

fn bits<P: ParamSet>(p: &P) -> Vec<u64> {
    p.blocks().iter().flat_map(|b| b.iter().map(|v| v.to_bits())).collect()
}

impl TrainObserver for FrozenCheck {
    fn stage_started(&mut self, _episode: usize, _stage: Stage, nets: &Checkpoint) {
        self.before = Some(nets.clone());
    }

    fn stage_finished(&mut self, episode: usize, stage: Stage, nets: &Checkpoint) {
        let before = self.before.take().expect("started before finished");
        self.stages_seen += 1;
        let mut frozen = |what: &str, same: bool| {
            if !same {
                self.violations.push(format!("episode {episode} stage {}: {what} changed", stage.number()));
            }
        };
        match stage {
            Stage::Debias => frozen("E", bits(&before.ensemble) == bits(&nets.ensemble)),
            Stage::UpdateMember => {
                frozen("M", bits(&before.generator) == bits(&nets.generator));
                frozen("C", bits(&before.classifier) == bits(&nets.classifier));
            }
            Stage::InitEnsemble => {
                frozen("M", bits(&before.generator) == bits(&nets.generator));
                frozen("C", bits(&before.classifier) == bits(&nets.classifier));
            }
            Stage::InitClassifier => frozen("E", bits(&before.ensemble) == bits(&nets.ensemble)),
        }
    }
}

/// Replays one schedule; `Err` describes the first mismatch.
pub fn replay(ds: &Dataset, n_ep: usize, t_ep: usize, k: usize) -> Result<(), String> {
    let cfg = tiny_config(n_ep, t_ep, k);
    let mut check = FrozenCheck::default();
    let out = train_with_observer(ds, &cfg, &mut check).map_err(|e| e.to_string())?;
    let got = out.log.stage_sequence();
    let want = simulate_schedule(n_ep, t_ep, k);
    if got != want {
        return Err(format!("({n_ep},{t_ep},{k}): sequence {got:?} != {want:?}"));
    }
    if check.stages_seen != want.len() {
        return Err(format!("({n_ep},{t_ep},{k}): observer saw {} stages", check.stages_seen));
    }
    if let Some(v) = check.violations.first() {
        return Err(format!("({n_ep},{t_ep},{k}): {v}"));
    }
    Ok(())
}

/// Replays every `(n_ep, t_ep, k)` in `{1..4}³`.
pub fn replay_grid() -> Result<usize, String> {
    let ds = tiny_dataset(8, 6, 6, 3);
    let mut n = 0;
    for n_ep in 1..=4 {
        for t_ep in 1..=4 {
            for k in 1..=4 {
                replay(&ds, n_ep, t_ep, k)?;
                n += 1;
            }
        }
    }
    Ok(n)
}

/// Generator and classifier after training with `λ = 0`, computed without
/// the ensemble: stage 1 then `n_ep` rounds of plain `L_class` descent.
pub fn lambda_zero_oracle(ds: &Dataset, cfg: &TrainConfig) -> (GeneratorParams, ClassifierParams) {
    assert_eq!(cfg.lambda, 0.0);
    let (train, _) = ds.split_by_identity(cfg.validation_fraction, cfg.seed).unwrap();
    let mut labels = train.identities();
    labels.sort_unstable();
    labels.dedup();
    let y_all: Vec<usize> = train
        .records()
        .iter()
        .map(|r| labels.binary_search(&r.identity).unwrap())
        .collect();
    let x_all = train.features();
    let mut rng = substream(cfg.seed, "init.generator_classifier", 0);
    let mut gen = GeneratorParams::init(ds.dim(), GENERATOR_OUT_DIM, &mut rng);
    let mut cls = ClassifierParams::init(GENERATOR_OUT_DIM, labels.len(), &mut rng).unwrap();
    let mut batches = BalancedBatches::new(&train.attributes(), cfg.batch_size, cfg.seed, "batches.mc").unwrap();

    let mut descend = |gen: &mut GeneratorParams, cls: &mut ClassifierParams, steps: usize, lr: f64| {
        let mut ag = Adam::new(AdamConfig::with_lr(lr));
        let mut ac = Adam::new(AdamConfig::with_lr(lr));
        for _ in 0..steps {
            let idx = batches.next().unwrap();
            let x = x_all.select_rows(&idx);
            let y: Vec<usize> = idx.iter().map(|&i| y_all[i]).collect();
            let o = class_objective(gen, cls, &x, &y).unwrap();
            ag.step(gen, o.generator.as_ref().unwrap()).unwrap();
            ac.step(cls, o.classifier.as_ref().unwrap()).unwrap();
        }
    };
    descend(&mut gen, &mut cls, cfg.t_fc, cfg.alpha1);
    for _ in 0..cfg.n_ep {
        descend(&mut gen, &mut cls, cfg.t_deb, cfg.alpha3);
    }
    (gen, cls)
}

/// Whether `a` and `b` hold bit-identical parameters.
pub fn same_bits<P: ParamSet>(a: &P, b: &P) -> bool {
    bits(a) == bits(b)
}

// ---------------------------------------------------------------------------
// Verification metrics

/// TPR at the best threshold admitting at most `target` of impostors,
/// found by trying every candidate threshold.
pub fn brute_force_tpr(genuine: &[f64], impostor: &[f64], target: f64) -> (f64, f64) {
    let mut candidates: Vec<f64> = impostor.to_vec();
    candidates.push(f64::INFINITY);
    let mut best: Option<(f64, f64)> = None;
    let n = impostor.len() as f64;
    for &t in &candidates {
        let fa = impostor.iter().filter(|&&s| s > t).count() as f64;
        if fa / n > target {
            continue;
        }
        // Among admissible thresholds the lowest one accepts the most.
        if best.is_none_or(|(bt, _)| t < bt) {
            let tpr = genuine.iter().filter(|&&s| s > t).count() as f64 / genuine.len() as f64;
            best = Some((t, tpr));
        }
    }
    let (t, tpr) = best.expect("infinity is always admissible");
    (tpr, t)
}
