use agenda_core::corrpca::{correlation_spectrum, fit, project, read_subspace, write_subspace};
use agenda_core::probe::{probe_accuracy, ProbeConfig};
use agenda_core::synthgen::{generate, SynthSpec};
use agenda_core::Dataset;
use proptest::prelude::*;

fn corpus(seed: u64, strength: f64, entanglement: f64) -> Dataset {
    let spec = SynthSpec {
        n_identities: 40,
        samples_per_identity: 10,
        dim: 12,
        attribute_strength: strength,
        entanglement,
        seed,
        ..Default::default()
    };
    generate(&spec).unwrap().0
}

fn centered_sq_norms(ds: &Dataset, mean: &[f64]) -> Vec<f64> {
    ds.records()
        .iter()
        .map(|r| r.vector.iter().zip(mean).map(|(v, m)| (*v as f64 - m).powi(2)).sum())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn removed_energy_equals_removed_eigenvalues(
        seed in 0u64..1000, strength in 0.0f64..2.0, e in 0.0f64..1.0, delta in 0.05f64..0.6,
    ) {
        let ds = corpus(seed, strength, e);
        let sub = fit(&ds, delta).unwrap();
        prop_assume!(sub.retained_count() > 0);
        let y = sub.project_matrix(&ds.features()).unwrap();
        let before = centered_sq_norms(&ds, &sub.mean);
        let total_before: f64 = before.iter().sum();
        let total_after: f64 = y.data().iter().map(|v| v * v).sum();
        let removed: f64 = sub.records.iter().filter(|r| !r.retained).map(|r| r.eigenvalue).sum();
        let n = ds.len() as f64;
        let diff = total_before - total_after;
        prop_assert!((diff - removed * (n - 1.0)).abs() <= 1e-8 * total_before, "{} vs {}", diff, removed * (n - 1.0));
        // A projection never lengthens a centered row.
        for (r, b) in before.iter().enumerate() {
            let a: f64 = y.row(r).iter().map(|v| v * v).sum();
            prop_assert!(a <= b + 1e-9 * (1.0 + b));
        }
    }

    #[test]
    fn retention_is_invariant_to_uniform_scaling(seed in 0u64..1000, strength in 0.0f64..2.0) {
        let ds = corpus(seed, strength, 0.3);
        let scaled = ds.with_vectors(&{
            let mut x = ds.features();
            x.data_mut().iter_mut().for_each(|v| *v *= 2.0);
            x
        }).unwrap();
        let a = fit(&ds, 0.1).unwrap();
        let b = fit(&scaled, 0.1).unwrap();
        let flags = |s: &agenda_core::CorrSubspace| s.records.iter().map(|r| r.retained).collect::<Vec<_>>();
        prop_assert_eq!(flags(&a), flags(&b));
        for (ra, rb) in a.records.iter().zip(&b.records) {
            prop_assert!((rb.eigenvalue - 4.0 * ra.eigenvalue).abs() <= 1e-9 * (1.0 + rb.eigenvalue.abs()));
        }
    }

    #[test]
    fn spectrum_agrees_with_fit(seed in 0u64..1000, delta in 0.05f64..1.0) {
        let ds = corpus(seed, 0.8, 0.3);
        let sub = fit(&ds, delta).unwrap();
        let rows = correlation_spectrum(&ds).unwrap();
        prop_assert_eq!(rows.len(), ds.dim());
        for (row, rec) in rows.iter().zip(&sub.records) {
            prop_assert_eq!(row.eigenvalue, rec.eigenvalue);
            prop_assert_eq!(row.abs_correlation, rec.correlation.abs());
            prop_assert_eq!(rec.retained, rec.correlation.abs() < delta);
        }
        prop_assert_eq!(sub.retained_count() + sub.removed_count(), ds.dim());
        prop_assert!(rows.windows(2).all(|w| w[0].eigenvalue >= w[1].eigenvalue));
    }
}

#[test]
fn pure_attribute_axis_is_removed_alone() {
    let spec = SynthSpec { n_identities: 400, attribute_strength: 1.0, entanglement: 0.0, ..Default::default() };
    let (ds, meta) = generate(&spec).unwrap();
    let sub = fit(&ds, 0.1).unwrap();
    assert_eq!(sub.removed_count(), 1);
    // The surviving basis is orthogonal to the planted direction.
    for r in 0..sub.retained.rows() {
        let dot: f64 = sub.retained.row(r).iter().zip(&meta.attribute_direction).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 0.05, "row {r}: {dot}");
    }
    // Fit on the probe's own training split: a basis fitted on everything
    // leaves opposite residual offsets in the two halves, which a probe
    // then reads backwards.
    let (a, b) = ds.split_by_identity(0.3, 1).unwrap();
    let sub = fit(&a, 0.1).unwrap();
    assert_eq!(sub.removed_count(), 1);
    let acc = probe_accuracy(&project(&sub, &a).unwrap(), &project(&sub, &b).unwrap(), &ProbeConfig::default())
        .unwrap()
        .accuracy;
    assert!((45.0..=55.0).contains(&acc), "{acc}");
}

#[test]
fn subspace_file_round_trip() {
    let ds = corpus(3, 1.0, 0.2);
    let sub = fit(&ds, 0.2).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.cpca");
    write_subspace(&sub, &path).unwrap();
    assert_eq!(read_subspace(&path).unwrap(), sub);
    assert!(fit(&ds, 0.0).is_err());
    assert!(fit(&ds, 1.5).is_err());
}
