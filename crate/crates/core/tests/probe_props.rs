use agenda_core::dataio::{Attribute, Dataset, DescriptorRecord};
use agenda_core::probe::{probe_accuracy, probe_eval, probe_train, ProbeConfig};
use agenda_core::synthgen::{generate, SynthSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small(seed: u64, strength: f64) -> (Dataset, Dataset) {
    corpus(60, seed, strength)
}

fn corpus(n_identities: usize, seed: u64, strength: f64) -> (Dataset, Dataset) {
    let spec = SynthSpec {
        n_identities,
        samples_per_identity: 10,
        dim: 16,
        attribute_strength: strength,
        seed,
        ..Default::default()
    };
    generate(&spec).unwrap().0.split_by_identity(0.3, seed).unwrap()
}

#[test]
fn unrelated_labels_sit_near_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let noise = |n: usize, rng: &mut ChaCha8Rng| {
        let records = (0..n)
            .map(|i| DescriptorRecord {
                identity: i as u64,
                attribute: if rng.random_bool(0.5) { Attribute::Male } else { Attribute::Female },
                vector: (0..8).map(|_| rng.sample::<f64, _>(StandardNormal) as f32).collect(),
            })
            .collect();
        Dataset::new(8, records).unwrap()
    };
    let train = noise(2000, &mut rng);
    let test = noise(4000, &mut rng);
    let acc = probe_accuracy(&train, &test, &ProbeConfig::default()).unwrap().accuracy;
    assert!((45.0..=55.0).contains(&acc), "{acc}");
}

#[test]
fn duplicating_the_training_set_changes_nothing() {
    let (train, test) = small(1, 0.4);
    let doubled = Dataset::new(train.dim(), [train.records(), train.records()].concat()).unwrap();
    let cfg = ProbeConfig::default();
    let a = probe_train(&train, &cfg).unwrap();
    let b = probe_train(&doubled, &cfg).unwrap();
    for (x, y) in a.weight.iter().zip(&b.weight) {
        assert!((x - y).abs() < 1e-9 * (1.0 + x.abs()));
    }
    assert_eq!(probe_eval(&a, &test).unwrap().accuracy, probe_eval(&b, &test).unwrap().accuracy);
}

#[test]
fn accuracy_climbs_with_attribute_strength() {
    let cfg = ProbeConfig::default();
    let ladder: Vec<f64> = [0.0, 0.15, 0.3, 0.6]
        .iter()
        .map(|&g| {
            let (train, test) = corpus(300, 4, g);
            probe_accuracy(&train, &test, &cfg).unwrap().accuracy
        })
        .collect();
    for w in ladder.windows(2) {
        assert!(w[1] >= w[0] - 2.0, "{ladder:?}");
    }
    assert!(ladder[3] > 90.0 && ladder[0] < 60.0, "{ladder:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn group_error_rates_add_up_to_accuracy(seed in 0u64..500, strength in 0.0f64..0.6) {
        let (train, test) = small(seed, strength);
        let r = probe_accuracy(&train, &test, &ProbeConfig { epochs: 100, ..Default::default() }).unwrap();
        let wrong = r.females_misclassified * r.n_female as f64 + r.males_misclassified * r.n_male as f64;
        prop_assert!((100.0 - wrong / r.n_test as f64 - r.accuracy).abs() < 1e-9);
        prop_assert_eq!(r.n_female + r.n_male, r.n_test);
        prop_assert!((0.0..=100.0).contains(&r.accuracy));
    }
}

#[test]
fn one_sided_training_set_is_rejected() {
    let (train, _) = small(0, 0.4);
    let males: Vec<usize> = (0..train.len()).filter(|&i| train.records()[i].attribute == Attribute::Male).collect();
    assert!(probe_train(&train.subset(&males), &ProbeConfig::default()).is_err());
}
