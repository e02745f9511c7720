//! Correlation-filtered PCA: drop the principal directions whose scores
//! rank-correlate with the attribute, then project onto what is left.
//!
//! `CPCA` subspace layout, little-endian:
//!
//! ```text
//! magic "CPCA", version u32, in_dim u32, retained u32, delta f64,
//! mean f64 × in_dim,
//! in_dim × (eigenvalue f64, correlation f64, retained u8),
//! retained rows f64 × (retained × in_dim)
//! ```

use std::path::Path;

use rayon::prelude::*;

use crate::binfmt::{Reader, Writer};
use crate::dataio::{fmt_f64, CsvReport, Dataset};
use crate::error::{Error, Result};
use crate::linalg::{covariance, eigh, spearman, Matrix};

pub const SUBSPACE_MAGIC: [u8; 4] = *b"CPCA";
pub const SUBSPACE_VERSION: u32 = 1;
pub const DEFAULT_DELTA: f64 = 0.1;

/// Eigenvalues below this fraction of the largest are treated as
/// zero-variance: their scores are rounding noise, so they get correlation 0.
const ZERO_VARIANCE_RATIO: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EigenRecord {
    pub eigenvalue: f64,
    pub correlation: f64,
    pub retained: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrSubspace {
    pub delta: f64,
    pub mean: Vec<f64>,
    /// One entry per eigenvector, by descending eigenvalue.
    pub records: Vec<EigenRecord>,
    /// Retained eigenvectors as rows.
    pub retained: Matrix,
}

impl CorrSubspace {
    pub fn in_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn retained_count(&self) -> usize {
        self.retained.rows()
    }

    pub fn removed_count(&self) -> usize {
        self.in_dim() - self.retained_count()
    }

    /// `(x − mean)·Rᵀ` for every row of `x`.
    pub fn project_matrix(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_dim() {
            return Err(Error::Validation(format!(
                "subspace expects dimension {}, got {}",
                self.in_dim(),
                x.cols()
            )));
        }
        let mut c = x.clone();
        c.sub_row_vector(&self.mean);
        c.matmul_t(&self.retained)
    }
}

/// Eigendecomposition of the centered data with a score correlation per
/// eigenvector.
struct Spectrum {
    mean: Vec<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: Matrix,
    correlations: Vec<f64>,
}

fn spectrum(ds: &Dataset) -> Result<Spectrum> {
    if !ds.has_both_attributes() {
        return Err(Error::Validation(
            "correlation analysis needs both attribute values".into(),
        ));
    }
    let x = ds.features();
    let cov = covariance(&x)?;
    let eig = eigh(&cov.matrix)?;
    let mut centered = x;
    centered.sub_row_vector(&cov.mean);
    let scores = centered.matmul_t(&eig.eigenvectors)?;
    let labels = ds.attribute_labels();
    let top = eig.eigenvalues.first().copied().unwrap_or(0.0).max(0.0);
    let scores_t = scores.transpose();
    let correlations = (0..eig.eigenvalues.len())
        .into_par_iter()
        .map(|s| {
            if eig.eigenvalues[s] <= top * ZERO_VARIANCE_RATIO {
                return Ok(0.0);
            }
            spearman(scores_t.row(s), &labels).map(|r| r.rho)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(Spectrum {
        mean: cov.mean,
        eigenvalues: eig.eigenvalues,
        eigenvectors: eig.eigenvectors,
        correlations,
    })
}

/// Fits the subspace, keeping eigenvectors with `|ρ| < delta`.
pub fn fit(ds: &Dataset, delta: f64) -> Result<CorrSubspace> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::Validation(format!("delta must be in (0,1], got {delta}")));
    }
    let sp = spectrum(ds)?;
    let records: Vec<EigenRecord> = sp
        .eigenvalues
        .iter()
        .zip(&sp.correlations)
        .map(|(&eigenvalue, &correlation)| EigenRecord {
            eigenvalue,
            correlation,
            retained: correlation.abs() < delta,
        })
        .collect();
    let keep: Vec<usize> = (0..records.len()).filter(|&i| records[i].retained).collect();
    Ok(CorrSubspace {
        delta,
        mean: sp.mean,
        retained: sp.eigenvectors.select_rows(&keep),
        records,
    })
}

/// Projects every record onto the retained directions; labels carry over.
pub fn project(subspace: &CorrSubspace, ds: &Dataset) -> Result<Dataset> {
    if subspace.retained_count() == 0 {
        return Err(Error::Validation("subspace retains no directions".into()));
    }
    let y = subspace.project_matrix(&ds.features())?;
    ds.with_vectors(&y)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectrumRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub abs_correlation: f64,
}

/// Per-eigenvector `|ρ|` against the attribute, by descending eigenvalue.
pub fn correlation_spectrum(ds: &Dataset) -> Result<Vec<SpectrumRow>> {
    let sp = spectrum(ds)?;
    Ok(sp
        .eigenvalues
        .iter()
        .zip(&sp.correlations)
        .enumerate()
        .map(|(index, (&eigenvalue, &c))| SpectrumRow {
            index,
            eigenvalue,
            abs_correlation: c.abs(),
        })
        .collect())
}

pub fn spectrum_report(rows: &[SpectrumRow]) -> CsvReport {
    let mut r = CsvReport::new(["index", "eigenvalue", "abs_spearman"]);
    for row in rows {
        r.push_row([row.index.to_string(), fmt_f64(row.eigenvalue), fmt_f64(row.abs_correlation)]);
    }
    r
}

pub fn encode_subspace(s: &CorrSubspace) -> Vec<u8> {
    let mut w = Writer::new(&SUBSPACE_MAGIC, SUBSPACE_VERSION);
    w.u32(s.in_dim() as u32);
    w.u32(s.retained_count() as u32);
    w.f64(s.delta);
    w.f64s(&s.mean);
    for r in &s.records {
        w.f64(r.eigenvalue);
        w.f64(r.correlation);
        w.u8(r.retained as u8);
    }
    w.f64s(s.retained.data());
    w.buf
}

pub fn decode_subspace(bytes: &[u8], path: &Path) -> Result<CorrSubspace> {
    let mut r = Reader::open(bytes, path, SUBSPACE_MAGIC, SUBSPACE_VERSION)?;
    let in_dim = r.u32()? as usize;
    let retained = r.u32()? as usize;
    let malformed = |message: String| {
        Error::format(path, crate::error::FormatError::Malformed { line: 0, message })
    };
    if retained > in_dim {
        return Err(malformed(format!("{retained} retained of {in_dim}")));
    }
    let delta = r.f64()?;
    let mean = r.f64s(in_dim)?;
    r.require(in_dim.saturating_mul(17))?;
    let mut records = Vec::with_capacity(in_dim);
    for _ in 0..in_dim {
        let eigenvalue = r.f64()?;
        let correlation = r.f64()?;
        let flag = r.u8()?;
        if flag > 1 {
            return Err(malformed(format!("retained flag {flag}")));
        }
        records.push(EigenRecord { eigenvalue, correlation, retained: flag == 1 });
    }
    if records.iter().filter(|e| e.retained).count() != retained {
        return Err(malformed("retained flags disagree with retained count".into()));
    }
    let rows = r.f64s(retained * in_dim)?;
    r.finish()?;
    Ok(CorrSubspace {
        delta,
        mean,
        records,
        retained: Matrix::from_vec(retained, in_dim, rows)?,
    })
}

pub fn write_subspace(s: &CorrSubspace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_subspace(s)).map_err(|e| Error::io(path, e))
}

pub fn read_subspace(path: impl AsRef<Path>) -> Result<CorrSubspace> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_subspace(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::{Attribute, DescriptorRecord};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    /// Isotropic noise plus one coordinate that is a copy of the label.
    fn label_axis(n: usize, dim: usize, axis: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                let attribute = if i % 2 == 0 { Attribute::Male } else { Attribute::Female };
                let mut vector: Vec<f32> =
                    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect();
                vector[axis] = 3.0 * attribute.as_label() as f32;
                DescriptorRecord { identity: i as u64, attribute, vector }
            })
            .collect();
        Dataset::new(dim, records).unwrap()
    }

    #[test]
    fn label_copy_axis_is_the_only_removal() {
        let ds = label_axis(2000, 6, 2, 1);
        let s = fit(&ds, 0.1).unwrap();
        assert_eq!(s.removed_count(), 1);
        let removed = s.records.iter().position(|r| !r.retained).unwrap();
        // perfect separation against a binary label caps ρ at √3/2
        assert!(s.records[removed].correlation.abs() > 0.85);
        // the retained rows are orthogonal to the label axis
        for row in s.retained.row_iter() {
            assert!(row[2].abs() < 0.05, "{row:?}");
        }
    }

    #[test]
    fn full_basis_is_a_rotation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let records = (0..80)
            .map(|i| DescriptorRecord {
                identity: i,
                attribute: if i % 2 == 0 { Attribute::Male } else { Attribute::Female },
                vector: (0..5).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect(),
            })
            .collect();
        let ds = Dataset::new(5, records).unwrap();
        let s = fit(&ds, 1.0).unwrap();
        assert_eq!(s.retained_count(), 5);
        let mut c = ds.features();
        c.sub_row_vector(&s.mean);
        let y = s.project_matrix(&ds.features()).unwrap();
        let (gc, gy) = (c.matmul_t(&c).unwrap(), y.matmul_t(&y).unwrap());
        for (a, b) in gc.data().iter().zip(gy.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn subspace_round_trip_and_errors() {
        let ds = label_axis(60, 4, 1, 3);
        let s = fit(&ds, 0.1).unwrap();
        let bytes = encode_subspace(&s);
        let p = Path::new("s");
        assert_eq!(decode_subspace(&bytes, p).unwrap(), s);
        assert_eq!(decode_subspace(&bytes[..bytes.len() - 3], p).unwrap_err().code(), "truncated");
        let mut extra = bytes.clone();
        extra.push(7);
        assert_eq!(decode_subspace(&extra, p).unwrap_err().code(), "trailing_bytes");
        let mut bad = bytes;
        bad[3] = b'X';
        assert_eq!(decode_subspace(&bad, p).unwrap_err().code(), "bad_magic");
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = label_axis(20, 4, 0, 4);
        assert_eq!(fit(&ds, 0.0).unwrap_err().code(), "validation");
        let males = ds.subset(&[0, 2, 4]);
        assert_eq!(fit(&males, 0.1).unwrap_err().code(), "validation");
        let s = fit(&ds, 0.1).unwrap();
        let other = label_axis(20, 5, 0, 4);
        assert_eq!(project(&s, &other).unwrap_err().code(), "validation");
    }
}
