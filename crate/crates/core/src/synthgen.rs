//! Seeded synthetic descriptor corpora with a planted attribute direction.
//!
//! Each identity `i` has attribute sign `s_i = ±1` (even indices male), a
//! random unit direction `u_i` and a per-identity scalar `ζ_i ~ N(0,1)`:
//!
//! ```text
//! centroid_i = σ_id·u_i + e·g·(s_i + ζ_i)·a
//! sample     = centroid_i + g·(1−e)·s_i·a + σ_noise·ν_i·ε
//! ```
//!
//! where `a` is the attribute direction, `g` the attribute strength, `e` the
//! entanglement and `ν_i` the noise scale of the identity's group (1 for
//! males, `female_noise_scale` for females). The mean attribute shift is
//! `g·s_i` for every `e`; raising `e` moves part of it onto the identity
//! centroids and makes the attribute axis carry identity-specific spread.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataio::{Attribute, Dataset, DescriptorRecord, KeyValueReader};
use crate::error::{Error, Result};
use crate::rng::substream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_identities: usize,
    pub samples_per_identity: usize,
    pub dim: usize,
    pub sigma_id: f64,
    pub sigma_noise: f64,
    pub attribute_strength: f64,
    pub entanglement: f64,
    /// Noise multiplier applied to female identities.
    pub female_noise_scale: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            n_identities: 200,
            samples_per_identity: 50,
            dim: 64,
            sigma_id: 1.0,
            sigma_noise: 0.2,
            attribute_strength: 0.4,
            entanglement: 0.3,
            female_noise_scale: 1.0,
            seed: 0,
        }
    }
}

/// Spec plus the planted direction, written next to generated corpora.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthMetadata {
    pub generator: String,
    pub spec: SynthSpec,
    pub attribute_direction: Vec<f64>,
}

pub const SYNTH_GENERATOR: &str = "agenda-synth/1 chacha20 standard-normal";

pub const SYNTH_KEYS: &[(&str, &str)] = &[
    ("n_identities", "200"),
    ("samples_per_identity", "50"),
    ("dim", "64"),
    ("sigma_id", "1.0"),
    ("sigma_noise", "0.2"),
    ("attribute_strength", "0.4"),
    ("entanglement", "0.3"),
    ("female_noise_scale", "1.0"),
    ("seed", "0"),
];

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Validation(m));
        if self.dim < 4 {
            return fail(format!("dim must be >= 4, got {}", self.dim));
        }
        if self.n_identities < 2 || self.samples_per_identity < 2 {
            return fail("n_identities and samples_per_identity must be >= 2".into());
        }
        if !(self.sigma_id > 0.0 && self.sigma_noise > 0.0 && self.female_noise_scale > 0.0) {
            return fail("sigma_id, sigma_noise and female_noise_scale must be > 0".into());
        }
        if !(self.attribute_strength >= 0.0 && self.attribute_strength.is_finite()) {
            return fail(format!("attribute_strength must be >= 0, got {}", self.attribute_strength));
        }
        if !(0.0..=1.0).contains(&self.entanglement) {
            return fail(format!("entanglement must be in [0,1], got {}", self.entanglement));
        }
        Ok(())
    }

    pub fn from_key_values(mut kv: KeyValueReader) -> Result<Self> {
        let d = SynthSpec::default();
        let spec = SynthSpec {
            n_identities: kv.take("n_identities")?.unwrap_or(d.n_identities),
            samples_per_identity: kv.take("samples_per_identity")?.unwrap_or(d.samples_per_identity),
            dim: kv.take("dim")?.unwrap_or(d.dim),
            sigma_id: kv.take("sigma_id")?.unwrap_or(d.sigma_id),
            sigma_noise: kv.take("sigma_noise")?.unwrap_or(d.sigma_noise),
            attribute_strength: kv.take("attribute_strength")?.unwrap_or(d.attribute_strength),
            entanglement: kv.take("entanglement")?.unwrap_or(d.entanglement),
            female_noise_scale: kv.take("female_noise_scale")?.unwrap_or(d.female_noise_scale),
            seed: kv.take("seed")?.unwrap_or(d.seed),
        };
        kv.finish()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_key_values(&self) -> Vec<(String, String)> {
        vec![
            ("n_identities".into(), self.n_identities.to_string()),
            ("samples_per_identity".into(), self.samples_per_identity.to_string()),
            ("dim".into(), self.dim.to_string()),
            ("sigma_id".into(), self.sigma_id.to_string()),
            ("sigma_noise".into(), self.sigma_noise.to_string()),
            ("attribute_strength".into(), self.attribute_strength.to_string()),
            ("entanglement".into(), self.entanglement.to_string()),
            ("female_noise_scale".into(), self.female_noise_scale.to_string()),
            ("seed".into(), self.seed.to_string()),
        ]
    }
}

fn random_unit<R: Rng>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Attribute of identity `i`: even indices male, giving ⌈n/2⌉ males.
pub fn identity_attribute(i: usize) -> Attribute {
    if i % 2 == 0 {
        Attribute::Male
    } else {
        Attribute::Female
    }
}

/// The unit attribute direction planted for `seed`.
pub fn attribute_direction(seed: u64, dim: usize) -> Vec<f64> {
    random_unit(dim, &mut substream(seed, "synth.direction", 0))
}

pub fn generate(spec: &SynthSpec) -> Result<(Dataset, SynthMetadata)> {
    spec.validate()?;
    let dim = spec.dim;
    let dir = attribute_direction(spec.seed, dim);
    let g = spec.attribute_strength;
    let e = spec.entanglement;

    let per_identity: Vec<Vec<DescriptorRecord>> = (0..spec.n_identities)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(spec.seed, "synth.identity", i as u64);
            let attribute = identity_attribute(i);
            let sign = if attribute == Attribute::Male { 1.0 } else { -1.0 };
            let u = random_unit(dim, &mut rng);
            let zeta: f64 = rng.sample(StandardNormal);
            let noise = spec.sigma_noise
                * if attribute == Attribute::Female {
                    spec.female_noise_scale
                } else {
                    1.0
                };
            let centroid: Vec<f64> = (0..dim)
                .map(|j| spec.sigma_id * u[j] + e * g * (sign + zeta) * dir[j])
                .collect();
            (0..spec.samples_per_identity)
                .map(|_| {
                    let vector = (0..dim)
                        .map(|j| {
                            let eps: f64 = rng.sample(StandardNormal);
                            (centroid[j] + g * (1.0 - e) * sign * dir[j] + noise * eps) as f32
                        })
                        .collect();
                    DescriptorRecord {
                        identity: i as u64,
                        attribute,
                        vector,
                    }
                })
                .collect()
        })
        .collect();

    let dataset = Dataset::new(dim, per_identity.into_iter().flatten().collect())?;
    let meta = SynthMetadata {
        generator: SYNTH_GENERATOR.into(),
        spec: spec.clone(),
        attribute_direction: dir,
    };
    Ok((dataset, meta))
}

pub fn write_metadata(meta: &SynthMetadata, path: impl AsRef<std::path::Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(meta).map_err(|e| Error::Validation(e.to_string()))?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

pub fn read_metadata(path: impl AsRef<std::path::Path>) -> Result<SynthMetadata> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    serde_json::from_str(&text).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
}
