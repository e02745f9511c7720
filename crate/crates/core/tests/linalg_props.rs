use agenda_core::linalg::{average_ranks, eigh, spearman, Matrix};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v: f64 = rng.sample(StandardNormal);
            a.set(i, j, v);
            a.set(j, i, v);
        }
    }
    a
}

#[test]
fn eigh_residual_orthonormality_and_trace() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sizes = [1usize, 2, 3, 5, 8, 16, 32, 64, 100, 128];
    for case in 0..100 {
        let n = sizes[case % sizes.len()];
        let a = random_symmetric(n, &mut rng);
        let e = eigh(&a).unwrap();
        let v = &e.eigenvectors;
        for (i, &lambda) in e.eigenvalues.iter().enumerate() {
            for r in 0..n {
                let av: f64 = (0..n).map(|c| a.get(r, c) * v.get(i, c)).sum();
                let res = (av - lambda * v.get(i, r)).abs();
                assert!(res < 1e-6, "case {case} n={n}: residual {res:e}");
            }
        }
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..n).map(|c| v.get(i, c) * v.get(j, c)).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8, "case {case} n={n}: gram[{i},{j}]={dot}");
            }
        }
        let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
        let sum: f64 = e.eigenvalues.iter().sum();
        assert!((trace - sum).abs() < 1e-9, "case {case}: trace {trace} vs {sum}");
        assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn eigh_handles_repeated_eigenvalues() {
    let e = eigh(&Matrix::identity(6)).unwrap();
    assert!(e.eigenvalues.iter().all(|&l| (l - 1.0).abs() < 1e-15));
    let a = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 3.0]]).unwrap();
    let e = eigh(&a).unwrap();
    for (got, want) in e.eigenvalues.iter().zip([3.0, 3.0, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn eigh_rejects_bad_matrices() {
    assert!(eigh(&Matrix::zeros(2, 3)).is_err());
    let asym = Matrix::from_rows(&[[1.0, 2.0], [0.0, 1.0]]).unwrap();
    assert!(eigh(&asym).is_err());
}

proptest! {
    #[test]
    fn average_ranks_sum_and_ties(values in prop::collection::vec(0i32..6, 1..40)) {
        let v: Vec<f64> = values.iter().map(|&x| x as f64).collect();
        let r = average_ranks(&v);
        let n = v.len() as f64;
        prop_assert!((r.iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
        for i in 0..v.len() {
            for j in 0..v.len() {
                if v[i] == v[j] { prop_assert_eq!(r[i], r[j]); }
                if v[i] < v[j] { prop_assert!(r[i] < r[j]); }
            }
        }
    }

    #[test]
    fn spearman_is_bounded_and_monotone_invariant(
        v in prop::collection::vec(-5.0f64..5.0, 4..60),
        seed in 0u64..50,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut labels: Vec<f64> = (0..v.len()).map(|_| rng.random_range(0..2) as f64).collect();
        labels[0] = 0.0;
        labels[1] = 1.0;
        let rho = spearman(&v, &labels).unwrap().rho;
        prop_assert!((-1.0..=1.0).contains(&rho));
        // Ranks ignore any strictly increasing transform.
        let cubed: Vec<f64> = v.iter().map(|x| x * x * x + 2.0 * x).collect();
        prop_assert!((spearman(&cubed, &labels).unwrap().rho - rho).abs() < 1e-12);
    }
}
