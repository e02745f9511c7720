//! Triplet probabilistic embedding: a linear map `W` (in × 128) trained so
//! that, with dot-product scores `s = (xW)·(yW)`, anchors score higher
//! against a same-identity sample than against another identity.
//!
//! The per-triplet loss is `−ln p` with `p = e^{s_ap} / (e^{s_ap} + e^{s_an})`,
//! i.e. `softplus(s_an − s_ap)`. Training is plain SGD from a PCA warm
//! start, repeated with independent seeds, and the matrices are averaged.
//!
//! `TPE1` layout, little-endian:
//!
//! ```text
//! magic "TPE1", version u32, in_dim u32, out_dim u32, repeats u32,
//! W f64 × (in_dim × out_dim), row-major
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::binfmt::{Reader, Writer};
use crate::dataio::{Dataset, KeyValueReader};
use crate::error::{Error, Result};
use crate::linalg::{covariance, eigh, Matrix};
use crate::rng::substream;

pub const TPE_DIM: usize = 128;
pub const TPE_MAGIC: [u8; 4] = *b"TPE1";
pub const TPE_VERSION: u32 = 1;
pub const TPE_LOSS: &str = "softplus(s_an - s_ap), dot-product scores";

#[derive(Clone, Debug, PartialEq)]
pub struct TpeConfig {
    pub repeats: usize,
    pub iterations: usize,
    pub rate: f64,
    pub batch: usize,
    pub negatives: Negatives,
    pub seed: u64,
}

impl Default for TpeConfig {
    fn default() -> Self {
        TpeConfig { repeats: 10, iterations: 10_000, rate: 2.5e-3, batch: 32, negatives: Negatives::SameGroup, seed: 0 }
    }
}

pub const TPE_KEYS: &[(&str, &str, &str)] = &[
    ("repeats", "10", "independent trainings averaged into W"),
    ("iterations", "10000", "SGD steps per training"),
    ("rate", "0.0025", "SGD learning rate"),
    ("batch", "32", "triplets per step"),
    ("negatives", "same_group", "negative pool: same_group or any"),
    ("seed", "0", "root seed"),
];

impl TpeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 || self.batch == 0 {
            return Err(Error::Validation("tpe repeats and batch must be at least 1".into()));
        }
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(Error::Validation(format!("tpe rate must be positive, got {}", self.rate)));
        }
        Ok(())
    }

    pub fn from_key_values(mut kv: KeyValueReader) -> Result<Self> {
        let d = TpeConfig::default();
        let cfg = TpeConfig {
            repeats: kv.take("repeats")?.unwrap_or(d.repeats),
            iterations: kv.take("iterations")?.unwrap_or(d.iterations),
            rate: kv.take("rate")?.unwrap_or(d.rate),
            batch: kv.take("batch")?.unwrap_or(d.batch),
            negatives: kv.take("negatives")?.unwrap_or(d.negatives),
            seed: kv.take("seed")?.unwrap_or(d.seed),
        };
        kv.finish()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("repeats".into(), self.repeats.to_string()),
            ("iterations".into(), self.iterations.to_string()),
            ("rate".into(), self.rate.to_string()),
            ("batch".into(), self.batch.to_string()),
            ("negatives".into(), self.negatives.name().into()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TpeMatrix {
    pub w: Matrix,
    pub repeats: usize,
}

impl TpeMatrix {
    pub fn in_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn out_dim(&self) -> usize {
        self.w.cols()
    }
}

/// Record indices `(anchor, positive, negative)`.
pub type Triplet = (usize, usize, usize);

/// Where negatives come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Negatives {
    /// Any other identity.
    Any,
    /// Another identity with the anchor's attribute.
    SameGroup,
}

impl std::str::FromStr for Negatives {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "any" => Ok(Negatives::Any),
            "same_group" => Ok(Negatives::SameGroup),
            _ => Err(format!("expected any or same_group, got {s:?}")),
        }
    }
}

impl Negatives {
    pub fn name(self) -> &'static str {
        match self {
            Negatives::Any => "any",
            Negatives::SameGroup => "same_group",
        }
    }
}

/// Uniform triplet sampler over identities with at least two samples.
pub struct TripletSampler {
    groups: Vec<Vec<usize>>,
    identity: Vec<u64>,
    /// Negative pools: one over all records, or one per attribute.
    pools: Vec<Vec<usize>>,
    pool_of: Vec<usize>,
}

impl TripletSampler {
    pub fn new(ds: &Dataset, negatives: Negatives) -> Result<Self> {
        let mut by_id: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
        for (i, r) in ds.records().iter().enumerate() {
            by_id.entry(r.identity).or_default().push(i);
        }
        if by_id.len() < 2 {
            return Err(Error::Validation("triplets need at least 2 identities".into()));
        }
        let groups: Vec<Vec<usize>> = by_id.into_values().filter(|g| g.len() >= 2).collect();
        if groups.is_empty() {
            return Err(Error::Validation("no identity has 2 or more samples".into()));
        }
        let pool_of: Vec<usize> = match negatives {
            Negatives::Any => vec![0; ds.len()],
            Negatives::SameGroup => ds.attributes().iter().map(|&a| a as usize).collect(),
        };
        let mut pools = vec![Vec::new(); 2];
        for (i, &p) in pool_of.iter().enumerate() {
            pools[p].push(i);
        }
        let identity = ds.identities();
        for g in &groups {
            let pool = &pools[pool_of[g[0]]];
            if pool.iter().all(|&i| identity[i] == identity[g[0]]) {
                return Err(Error::Validation(format!(
                    "identity {} has no negative available",
                    identity[g[0]]
                )));
            }
        }
        Ok(TripletSampler { groups, identity, pools, pool_of })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Triplet {
        let g = &self.groups[rng.random_range(0..self.groups.len())];
        let a = rng.random_range(0..g.len());
        let mut p = rng.random_range(0..g.len() - 1);
        if p >= a {
            p += 1;
        }
        let (a, p) = (g[a], g[p]);
        let pool = &self.pools[self.pool_of[a]];
        loop {
            let n = pool[rng.random_range(0..pool.len())];
            if self.identity[n] != self.identity[a] {
                return (a, p, n);
            }
        }
    }
}

/// A fixed, seeded triplet set, e.g. for comparing losses across runs.
pub fn sample_triplets(ds: &Dataset, negatives: Negatives, count: usize, seed: u64) -> Result<Vec<Triplet>> {
    let sampler = TripletSampler::new(ds, negatives)?;
    let mut rng = substream(seed, "tpe.triplets", 0);
    Ok((0..count).map(|_| sampler.sample(&mut rng)).collect())
}

/// Top principal directions as columns, zero-padded to `TPE_DIM`.
pub fn pca_init(ds: &Dataset) -> Result<Matrix> {
    let cov = covariance(&ds.features())?;
    let eig = eigh(&cov.matrix)?;
    let d = ds.dim();
    let mut w = Matrix::zeros(d, TPE_DIM);
    for c in 0..TPE_DIM.min(d) {
        for r in 0..d {
            w.set(r, c, eig.eigenvectors.get(c, r));
        }
    }
    Ok(w)
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Stacks anchor, positive and negative rows into one `3B × in` matrix.
fn stack(x: &Matrix, triplets: &[Triplet]) -> Matrix {
    let mut idx = Vec::with_capacity(3 * triplets.len());
    idx.extend(triplets.iter().map(|t| t.0));
    idx.extend(triplets.iter().map(|t| t.1));
    idx.extend(triplets.iter().map(|t| t.2));
    x.select_rows(&idx)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean loss over `triplets` and its gradient with respect to `w`.
pub fn tpe_loss_grad(w: &Matrix, x: &Matrix, triplets: &[Triplet]) -> Result<(f64, Matrix)> {
    let b = triplets.len();
    if b == 0 {
        return Err(Error::Validation("empty triplet batch".into()));
    }
    let xs = stack(x, triplets);
    let z = xs.matmul(w)?;
    let k = w.cols();
    let mut coef = Matrix::zeros(3 * b, k);
    let mut loss = 0.0;
    for t in 0..b {
        let (za, zp, zn) = (z.row(t), z.row(b + t), z.row(2 * b + t));
        let d = dot(za, zn) - dot(za, zp);
        loss += softplus(d);
        let s = sigmoid(d) / b as f64;
        for j in 0..k {
            coef.set(t, j, s * (zn[j] - zp[j]));
            coef.set(b + t, j, -s * za[j]);
            coef.set(2 * b + t, j, s * za[j]);
        }
    }
    Ok((loss / b as f64, xs.t_matmul(&coef)?))
}

pub fn tpe_loss(w: &Matrix, ds: &Dataset, triplets: &[Triplet]) -> Result<f64> {
    check_dim(w, ds)?;
    tpe_loss_grad(w, &ds.features(), triplets).map(|(l, _)| l)
}

fn train_once(init: &Matrix, x: &Matrix, sampler: &TripletSampler, cfg: &TpeConfig, repeat: usize) -> Result<Matrix> {
    let mut rng = substream(cfg.seed, "tpe.repeat", repeat as u64);
    let mut w = init.clone();
    let mut batch = Vec::with_capacity(cfg.batch);
    for it in 0..cfg.iterations {
        batch.clear();
        batch.extend((0..cfg.batch).map(|_| sampler.sample(&mut rng)));
        let (loss, g) = tpe_loss_grad(&w, x, &batch)?;
        if !loss.is_finite() || !g.is_finite() {
            return Err(Error::Numeric(format!("tpe repeat {repeat} diverged at iteration {it}")));
        }
        for (wv, gv) in w.data_mut().iter_mut().zip(g.data()) {
            *wv -= cfg.rate * gv;
        }
    }
    Ok(w)
}

/// Trains `repeats` matrices from the same warm start with streams
/// `("tpe.repeat", r)` and returns their element-wise mean.
pub fn tpe_train(ds: &Dataset, cfg: &TpeConfig) -> Result<TpeMatrix> {
    cfg.validate()?;
    let sampler = TripletSampler::new(ds, cfg.negatives)?;
    let init = pca_init(ds)?;
    let x = ds.features();
    let runs: Vec<Matrix> = (0..cfg.repeats)
        .into_par_iter()
        .map(|r| train_once(&init, &x, &sampler, cfg, r))
        .collect::<Result<_>>()?;
    let mut w = Matrix::zeros(init.rows(), init.cols());
    for run in &runs {
        for (a, b) in w.data_mut().iter_mut().zip(run.data()) {
            *a += b;
        }
    }
    let inv = 1.0 / cfg.repeats as f64;
    w.data_mut().iter_mut().for_each(|v| *v *= inv);
    Ok(TpeMatrix { w, repeats: cfg.repeats })
}

fn check_dim(w: &Matrix, ds: &Dataset) -> Result<()> {
    if w.rows() != ds.dim() {
        return Err(Error::Validation(format!(
            "TPE matrix expects dimension {}, got {}",
            w.rows(),
            ds.dim()
        )));
    }
    Ok(())
}

/// `x·W` for every record.
pub fn tpe_apply(tpe: &TpeMatrix, ds: &Dataset) -> Result<Dataset> {
    check_dim(&tpe.w, ds)?;
    ds.with_vectors(&ds.features().matmul(&tpe.w)?)
}

pub fn encode_tpe(tpe: &TpeMatrix) -> Vec<u8> {
    let mut w = Writer::new(&TPE_MAGIC, TPE_VERSION);
    w.u32(tpe.in_dim() as u32);
    w.u32(tpe.out_dim() as u32);
    w.u32(tpe.repeats as u32);
    w.f64s(tpe.w.data());
    w.buf
}

pub fn decode_tpe(bytes: &[u8], path: &Path) -> Result<TpeMatrix> {
    let mut r = Reader::open(bytes, path, TPE_MAGIC, TPE_VERSION)?;
    let (rows, cols, repeats) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
    let data = r.f64s(rows.saturating_mul(cols))?;
    r.finish()?;
    Ok(TpeMatrix { w: Matrix::from_vec(rows, cols, data)?, repeats })
}

pub fn write_tpe(tpe: &TpeMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_tpe(tpe)).map_err(|e| Error::io(path, e))
}

pub fn read_tpe(path: impl AsRef<Path>) -> Result<TpeMatrix> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_tpe(&bytes, path)
}
