//! The four-stage adversarial training loop.
//!
//! Per episode `i` of `n_ep`:
//!
//! 1. at `i == 0` only: initialize generator `M` and classifier `C`, train
//!    both on `L_class` for `t_fc` steps at `alpha1`;
//! 2. when `i % t_ep == 0`: re-initialize all `K` discriminators and train
//!    them on `L_g` for `t_gtrain` steps at `alpha2` (`M`, `C` frozen);
//! 3. train `M` and `C` on `L_br` for `t_deb` steps at `alpha3` (ensemble
//!    frozen);
//! 4. train discriminator `i % K` on its own `L_g` at `alpha2` for up to
//!    `t_plat` steps, stopping as soon as its validation accuracy exceeds
//!    `g_thresh` (`M`, `C` frozen).
//!
//! Each stage entry starts fresh Adam moments for the networks it trains.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;

use crate::dataio::{fmt_f64, Attribute, CsvReport, Dataset, KeyValueReader};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::losses::{br_objective, class_objective, g_member_on_features, g_on_features};
use crate::nets::{
    Adam, AdamConfig, Checkpoint, ClassifierParams, EnsembleParams, GeneratorParams, DISCRIMINATOR_HIDDEN,
    GENERATOR_OUT_DIM,
};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lambda: f64,
    pub k: usize,
    pub t_fc: usize,
    pub t_gtrain: usize,
    pub t_deb: usize,
    pub t_plat: usize,
    pub t_ep: usize,
    pub n_ep: usize,
    pub g_thresh: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub alpha3: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 10.0,
            k: 5,
            t_fc: 2000,
            t_gtrain: 600,
            t_deb: 400,
            t_plat: 300,
            t_ep: 5,
            n_ep: 20,
            g_thresh: 0.9,
            alpha1: 1e-3,
            alpha2: 1e-3,
            alpha3: 1e-4,
            batch_size: 128,
            seed: 0,
            validation_fraction: 0.1,
        }
    }
}

/// Config keys with their defaults and meaning, for help text.
pub const TRAIN_KEYS: &[(&str, &str, &str)] = &[
    ("lambda", "10", "weight of the debiasing loss in L_br"),
    ("k", "5", "number of discriminators in the ensemble"),
    ("t_fc", "2000", "stage 1 steps (identity warm-up of M and C)"),
    ("t_gtrain", "600", "stage 2 steps (ensemble (re)training)"),
    ("t_deb", "400", "stage 3 steps per episode (L_br on M and C)"),
    ("t_plat", "300", "stage 4 step cap per episode"),
    ("t_ep", "k", "episodes between ensemble re-initializations"),
    ("n_ep", "20", "number of episodes"),
    ("g_thresh", "0.9", "stage 4 validation-accuracy early stop"),
    ("alpha1", "0.001", "stage 1 learning rate"),
    ("alpha2", "0.001", "stage 2 and 4 learning rate"),
    ("alpha3", "0.0001", "stage 3 learning rate"),
    ("batch_size", "128", "attribute-balanced batch size (even)"),
    ("seed", "0", "root seed"),
    ("validation_fraction", "0.1", "identity-disjoint validation share"),
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        for (name, v) in [
            ("k", self.k),
            ("t_fc", self.t_fc),
            ("t_gtrain", self.t_gtrain),
            ("t_deb", self.t_deb),
            ("t_plat", self.t_plat),
            ("t_ep", self.t_ep),
            ("n_ep", self.n_ep),
            ("batch_size", self.batch_size),
        ] {
            if v < 1 {
                return fail(format!("{name} must be >= 1"));
            }
        }
        if self.batch_size % 2 != 0 {
            return fail(format!("batch_size must be even, got {}", self.batch_size));
        }
        for (name, v) in [("alpha1", self.alpha1), ("alpha2", self.alpha2), ("alpha3", self.alpha3)] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} must be > 0, got {v}"));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return fail(format!("lambda must be >= 0, got {}", self.lambda));
        }
        if !(self.g_thresh > 0.5 && self.g_thresh <= 1.0) {
            return fail(format!("g_thresh must be in (0.5, 1], got {}", self.g_thresh));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return fail(format!(
                "validation_fraction must be in (0,1), got {}",
                self.validation_fraction
            ));
        }
        Ok(())
    }

    /// Reads keys named like the fields; `t_ep` defaults to `k`.
    pub fn from_key_values(mut kv: KeyValueReader) -> Result<Self> {
        let d = TrainConfig::default();
        let k = kv.take("k")?.unwrap_or(d.k);
        let cfg = TrainConfig {
            lambda: kv.take("lambda")?.unwrap_or(d.lambda),
            k,
            t_fc: kv.take("t_fc")?.unwrap_or(d.t_fc),
            t_gtrain: kv.take("t_gtrain")?.unwrap_or(d.t_gtrain),
            t_deb: kv.take("t_deb")?.unwrap_or(d.t_deb),
            t_plat: kv.take("t_plat")?.unwrap_or(d.t_plat),
            t_ep: kv.take("t_ep")?.unwrap_or(k),
            n_ep: kv.take("n_ep")?.unwrap_or(d.n_ep),
            g_thresh: kv.take("g_thresh")?.unwrap_or(d.g_thresh),
            alpha1: kv.take("alpha1")?.unwrap_or(d.alpha1),
            alpha2: kv.take("alpha2")?.unwrap_or(d.alpha2),
            alpha3: kv.take("alpha3")?.unwrap_or(d.alpha3),
            batch_size: kv.take("batch_size")?.unwrap_or(d.batch_size),
            seed: kv.take("seed")?.unwrap_or(d.seed),
            validation_fraction: kv.take("validation_fraction")?.unwrap_or(d.validation_fraction),
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("lambda".into(), self.lambda.to_string()),
            ("k".into(), self.k.to_string()),
            ("t_fc".into(), self.t_fc.to_string()),
            ("t_gtrain".into(), self.t_gtrain.to_string()),
            ("t_deb".into(), self.t_deb.to_string()),
            ("t_plat".into(), self.t_plat.to_string()),
            ("t_ep".into(), self.t_ep.to_string()),
            ("n_ep".into(), self.n_ep.to_string()),
            ("g_thresh".into(), self.g_thresh.to_string()),
            ("alpha1".into(), self.alpha1.to_string()),
            ("alpha2".into(), self.alpha2.to_string()),
            ("alpha3".into(), self.alpha3.to_string()),
            ("batch_size".into(), self.batch_size.to_string()),
            ("seed".into(), self.seed.to_string()),
            ("validation_fraction".into(), self.validation_fraction.to_string()),
        ]
    }
}

/// Endless stream of attribute-balanced index batches.
///
/// An epoch has `⌈max(n_male, n_female) / (batch/2)⌉` batches, each holding
/// `batch/2` indices of each attribute. Both classes are reshuffled at every
/// epoch from a seed derived from the epoch number; a class that runs out
/// within an epoch is reshuffled and drawn again.
#[derive(Clone, Debug)]
pub struct BalancedBatches {
    male: Vec<usize>,
    female: Vec<usize>,
    half: usize,
    seed: u64,
    label: String,
    epoch: u64,
    pending: std::vec::IntoIter<Vec<usize>>,
}

/// Balanced batches over `dataset` with the default stream label.
pub fn balanced_batches(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<BalancedBatches> {
    BalancedBatches::new(&dataset.attributes(), batch_size, seed, "batches")
}

impl BalancedBatches {
    pub fn new(attributes: &[Attribute], batch_size: usize, seed: u64, label: &str) -> Result<Self> {
        if batch_size == 0 || batch_size % 2 != 0 {
            return Err(Error::Validation(format!("batch size must be even and > 0, got {batch_size}")));
        }
        let (male, female): (Vec<usize>, Vec<usize>) =
            (0..attributes.len()).partition(|&i| attributes[i] == Attribute::Male);
        if male.is_empty() || female.is_empty() {
            return Err(Error::Validation(
                "balanced batches need records of both attribute values".into(),
            ));
        }
        Ok(BalancedBatches {
            male,
            female,
            half: batch_size / 2,
            seed,
            label: label.to_string(),
            epoch: 0,
            pending: Vec::new().into_iter(),
        })
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.male.len().max(self.female.len()).div_ceil(self.half)
    }

    /// All batches of epoch `epoch`.
    pub fn epoch_batches(&self, epoch: u64) -> Vec<Vec<usize>> {
        let mut rng = substream(self.seed, &self.label, epoch);
        let n = self.batches_per_epoch();
        let mut draw = |pool: &[usize]| {
            let mut out = Vec::with_capacity(n * self.half);
            while out.len() < n * self.half {
                let mut p = pool.to_vec();
                p.shuffle(&mut rng);
                let need = n * self.half - out.len();
                out.extend(p.into_iter().take(need));
            }
            out
        };
        let males = draw(&self.male);
        let females = draw(&self.female);
        (0..n)
            .map(|b| {
                let mut batch = males[b * self.half..(b + 1) * self.half].to_vec();
                batch.extend_from_slice(&females[b * self.half..(b + 1) * self.half]);
                batch
            })
            .collect()
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        if let Some(b) = self.pending.next() {
            return Some(b);
        }
        self.pending = self.epoch_batches(self.epoch).into_iter();
        self.epoch += 1;
        self.pending.next()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Stage {
    InitClassifier = 1,
    InitEnsemble = 2,
    Debias = 3,
    UpdateMember = 4,
}

impl Stage {
    pub fn number(self) -> u8 {
        self as u8
    }
}

/// One log line. Losses not computed in a stage are `None`.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRecord {
    pub episode: usize,
    pub stage: Stage,
    pub iteration: u64,
    pub l_class: Option<f64>,
    pub l_deb: Option<f64>,
    pub l_br: Option<f64>,
    pub l_g: Option<f64>,
    /// Stage 3: member selected by `L_deb`; stage 4: member being trained.
    pub member_k: Option<usize>,
    pub val_acc: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
}

impl TrainLog {
    /// Consecutive `(episode, stage, member)` runs; stage-3 members are
    /// reported as `None` since they vary within a run.
    pub fn stage_sequence(&self) -> Vec<(usize, Stage, Option<usize>)> {
        let mut seq: Vec<(usize, Stage, Option<usize>)> = Vec::new();
        for r in &self.records {
            let member = if r.stage == Stage::UpdateMember { r.member_k } else { None };
            let key = (r.episode, r.stage, member);
            if seq.last() != Some(&key) {
                seq.push(key);
            }
        }
        seq
    }

    pub fn stage_records(&self, stage: Stage) -> impl Iterator<Item = &LogRecord> {
        self.records.iter().filter(move |r| r.stage == stage)
    }

    pub fn to_report(&self, config: &TrainConfig) -> CsvReport {
        let mut report = CsvReport::new([
            "episode", "stage", "iteration", "l_class", "l_deb", "l_br", "member_k", "val_acc", "l_g",
        ]);
        report.meta("tool", concat!("agenda ", env!("CARGO_PKG_VERSION")));
        for (k, v) in config.to_key_values() {
            report.meta(k, v);
        }
        let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
        for r in &self.records {
            report.push_row([
                r.episode.to_string(),
                r.stage.number().to_string(),
                r.iteration.to_string(),
                opt(r.l_class),
                opt(r.l_deb),
                opt(r.l_br),
                r.member_k.map(|k| k.to_string()).unwrap_or_default(),
                opt(r.val_acc),
                opt(r.l_g),
            ]);
        }
        report
    }
}

/// Hooks called around every stage that runs.
pub trait TrainObserver {
    fn stage_started(&mut self, _episode: usize, _stage: Stage, _nets: &Checkpoint) {}
    fn stage_finished(&mut self, _episode: usize, _stage: Stage, _nets: &Checkpoint) {}
}

/// Observer that does nothing.
pub struct NoObserver;

impl TrainObserver for NoObserver {}

#[derive(Clone, Debug)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub log: TrainLog,
    /// Classifier output `j` corresponds to `identity_labels[j]`.
    pub identity_labels: Vec<u64>,
}

struct Split {
    features: Matrix,
    y_id: Vec<usize>,
    male: Vec<bool>,
    attributes: Vec<Attribute>,
}

impl Split {
    fn batch(&self, idx: &[usize]) -> (Matrix, Vec<usize>, Vec<bool>) {
        (
            self.features.select_rows(idx),
            idx.iter().map(|&i| self.y_id[i]).collect(),
            idx.iter().map(|&i| self.male[i]).collect(),
        )
    }
}

fn index_identities(ds: &Dataset) -> (Vec<usize>, Vec<u64>) {
    let labels: Vec<u64> = ds
        .identities()
        .into_iter()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .collect();
    let index: BTreeMap<u64, usize> = labels.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    (ds.records().iter().map(|r| index[&r.identity]).collect(), labels)
}

fn split_of(ds: &Dataset, y_id: Vec<usize>) -> Split {
    Split {
        features: ds.features(),
        y_id,
        male: ds.records().iter().map(|r| r.attribute == Attribute::Male).collect(),
        attributes: ds.attributes(),
    }
}

fn finite(value: f64, stage: Stage, episode: usize, n: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "non-finite loss in stage {} (episode {episode}, step {n})",
            stage.number()
        )))
    }
}

pub fn train(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutput> {
    train_with_observer(dataset, config, &mut NoObserver)
}

pub fn train_with_observer(dataset: &Dataset, config: &TrainConfig, observer: &mut dyn TrainObserver) -> Result<TrainOutput> {
    config.validate()?;
    if !dataset.has_both_attributes() {
        return Err(Error::Validation("training data needs both attribute values".into()));
    }
    let (train_ds, val_ds) = dataset.split_by_identity(config.validation_fraction, config.seed)?;
    if !train_ds.has_both_attributes() || val_ds.is_empty() {
        return Err(Error::Validation(
            "too few identities to carve a validation split with both attributes in training".into(),
        ));
    }
    let (y_id, identity_labels) = index_identities(&train_ds);
    if identity_labels.len() < 2 {
        return Err(Error::Validation("training split needs at least 2 identities".into()));
    }
    let train = split_of(&train_ds, y_id);
    let val = split_of(&val_ds, vec![0; val_ds.len()]);

    let seed = config.seed;
    let mut mc_batches = BalancedBatches::new(&train.attributes, config.batch_size, seed, "batches.mc")?;
    let mut e_batches = BalancedBatches::new(&train.attributes, config.batch_size, seed, "batches.ensemble")?;

    let mut init_rng = substream(seed, "init.generator_classifier", 0);
    let mut nets = Checkpoint {
        generator: GeneratorParams::init(dataset.dim(), GENERATOR_OUT_DIM, &mut init_rng),
        classifier: ClassifierParams::init(GENERATOR_OUT_DIM, identity_labels.len(), &mut init_rng)?,
        ensemble: EnsembleParams::init(
            config.k,
            GENERATOR_OUT_DIM,
            DISCRIMINATOR_HIDDEN,
            &mut substream(seed, "init.ensemble", 0),
        )?,
    };
    let mut log = TrainLog::default();
    let mut iteration: u64 = 0;
    let mut record = |log: &mut TrainLog, r: LogRecord| {
        log.records.push(LogRecord { iteration, ..r });
        iteration += 1;
    };
    let blank = |episode: usize, stage: Stage| LogRecord {
        episode,
        stage,
        iteration: 0,
        l_class: None,
        l_deb: None,
        l_br: None,
        l_g: None,
        member_k: None,
        val_acc: None,
    };

    for episode in 0..config.n_ep {
        if episode == 0 {
            let stage = Stage::InitClassifier;
            observer.stage_started(episode, stage, &nets);
            let mut adam_g = Adam::new(AdamConfig::with_lr(config.alpha1));
            let mut adam_c = Adam::new(AdamConfig::with_lr(config.alpha1));
            for n in 0..config.t_fc {
                let idx = mc_batches.next().expect("endless");
                let (x, y, _) = train.batch(&idx);
                let obj = class_objective(&nets.generator, &nets.classifier, &x, &y)?;
                finite(obj.loss.value, stage, episode, n)?;
                adam_g.step(&mut nets.generator, obj.generator.as_ref().expect("generator grads"))?;
                adam_c.step(&mut nets.classifier, obj.classifier.as_ref().expect("classifier grads"))?;
                record(
                    &mut log,
                    LogRecord {
                        l_class: Some(obj.loss.value),
                        ..blank(episode, stage)
                    },
                );
            }
            observer.stage_finished(episode, stage, &nets);
        }

        if episode % config.t_ep == 0 {
            let stage = Stage::InitEnsemble;
            observer.stage_started(episode, stage, &nets);
            nets.ensemble = EnsembleParams::init(
                config.k,
                GENERATOR_OUT_DIM,
                DISCRIMINATOR_HIDDEN,
                &mut substream(seed, "init.ensemble", episode as u64),
            )?;
            let mut adam_e = Adam::new(AdamConfig::with_lr(config.alpha2));
            for n in 0..config.t_gtrain {
                let idx = e_batches.next().expect("endless");
                let (x, _, male) = train.batch(&idx);
                let f = nets.generator.apply(&x)?;
                let (loss, grads, _) = g_on_features(&nets.ensemble, &f, &male)?;
                finite(loss.value, stage, episode, n)?;
                adam_e.step(&mut nets.ensemble, &grads)?;
                record(
                    &mut log,
                    LogRecord {
                        l_g: Some(loss.value),
                        ..blank(episode, stage)
                    },
                );
            }
            observer.stage_finished(episode, stage, &nets);
        }

        {
            let stage = Stage::Debias;
            observer.stage_started(episode, stage, &nets);
            let mut adam_g = Adam::new(AdamConfig::with_lr(config.alpha3));
            let mut adam_c = Adam::new(AdamConfig::with_lr(config.alpha3));
            for n in 0..config.t_deb {
                let idx = mc_batches.next().expect("endless");
                let (x, y, _) = train.batch(&idx);
                let obj = br_objective(&nets.generator, &nets.classifier, &nets.ensemble, &x, &y, config.lambda)?;
                finite(obj.loss.value, stage, episode, n)?;
                adam_g.step(&mut nets.generator, obj.generator.as_ref().expect("generator grads"))?;
                adam_c.step(&mut nets.classifier, obj.classifier.as_ref().expect("classifier grads"))?;
                record(
                    &mut log,
                    LogRecord {
                        l_class: obj.loss.term("l_class"),
                        l_deb: obj.loss.term("l_deb"),
                        l_br: Some(obj.loss.value),
                        member_k: obj.member,
                        ..blank(episode, stage)
                    },
                );
            }
            observer.stage_finished(episode, stage, &nets);
        }

        {
            let stage = Stage::UpdateMember;
            observer.stage_started(episode, stage, &nets);
            let k = episode % config.k;
            let val_features = nets.generator.apply(&val.features)?;
            let mut adam_k = Adam::new(AdamConfig::with_lr(config.alpha2));
            for n in 0..config.t_plat {
                let acc = nets.ensemble.members[k].accuracy(&val_features, &val.male)?;
                if acc > config.g_thresh {
                    record(
                        &mut log,
                        LogRecord {
                            member_k: Some(k),
                            val_acc: Some(acc),
                            ..blank(episode, stage)
                        },
                    );
                    break;
                }
                let idx = e_batches.next().expect("endless");
                let (x, _, male) = train.batch(&idx);
                let f = nets.generator.apply(&x)?;
                let (loss, grads, _) = g_member_on_features(&nets.ensemble.members[k], &f, &male)?;
                finite(loss.value, stage, episode, n)?;
                adam_k.step(&mut nets.ensemble.members[k], &grads)?;
                record(
                    &mut log,
                    LogRecord {
                        l_g: Some(loss.value),
                        member_k: Some(k),
                        val_acc: Some(acc),
                        ..blank(episode, stage)
                    },
                );
            }
            observer.stage_finished(episode, stage, &nets);
        }
    }

    Ok(TrainOutput {
        checkpoint: nets,
        log,
        identity_labels,
    })
}

/// Applies the generator row-wise; labels are kept as they are.
pub fn transform(generator: &GeneratorParams, dataset: &Dataset) -> Result<Dataset> {
    if dataset.dim() != generator.in_dim() {
        return Err(Error::Dimension(format!(
            "generator expects dimension {}, dataset has {}",
            generator.in_dim(),
            dataset.dim()
        )));
    }
    let out = generator.apply(&dataset.features())?;
    dataset.with_vectors(&out)
}

/// Top-1 identity accuracy of `C∘M` on records whose identity is known to
/// the classifier; other records are skipped.
pub fn identity_accuracy(ckpt: &Checkpoint, identity_labels: &[u64], dataset: &Dataset) -> Result<f64> {
    let index: BTreeMap<u64, usize> = identity_labels.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let rows: Vec<usize> = (0..dataset.len())
        .filter(|&i| index.contains_key(&dataset.records()[i].identity))
        .collect();
    if rows.is_empty() {
        return Err(Error::Validation("no records with identities known to the classifier".into()));
    }
    let x = dataset.subset(&rows).features();
    let probs = ckpt.classifier.forward(&ckpt.generator.apply(&x)?)?.probs;
    let correct = rows
        .iter()
        .zip(probs.row_iter())
        .filter(|(&i, p)| {
            let best = p
                .iter()
                .enumerate()
                .fold(0, |b, (j, v)| if *v > p[b] { j } else { b });
            best == index[&dataset.records()[i].identity]
        })
        .count();
    Ok(correct as f64 / rows.len() as f64)
}
