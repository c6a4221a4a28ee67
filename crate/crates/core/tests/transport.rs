use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use ulab::data::{synth_appendix_uniform_pair, synth_gaussian_pair};
use ulab::transport::{
    bound_sandwich, em_exact_1d, em_exact_assignment, f_pc_eval, lower_bound_thm2, unbounded_example_lower,
    unitized_upper_bound, UnitizedMode,
};
use ulab::unitization::{default_pole, general_unitize, partial_unitize, vanilla_unitize};
use ulab::{LipschitzProbe, SampleSet};

fn samples(n: usize, d: usize) -> impl Strategy<Value = SampleSet> {
    prop::collection::vec(-3.0f64..3.0, n * d)
        .prop_map(move |v| SampleSet::new(ulab::Tensor::new(vec![n, d], v).unwrap(), 0).unwrap())
}

fn diff(v: &[f64], w: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

proptest! {
    #[test]
    fn probe_is_one_lipschitz(
        p in 2u32..=4,
        c in prop::sample::select(vec![0.5, 1.0, 2.0]),
        v in prop::collection::vec(-4.0f64..4.0, 3),
        w in prop::collection::vec(-4.0f64..4.0, 3),
    ) {
        let probe = LipschitzProbe::new(p, c, 3, None).unwrap();
        let gap = (f_pc_eval(&v, &probe).unwrap() - f_pc_eval(&w, &probe).unwrap()).abs();
        prop_assert!(gap <= diff(&v, &w) + 1e-12);
    }

    #[test]
    fn lower_bound_is_symmetric(a in samples(12, 2), b in samples(12, 2), p in 2u32..=4) {
        let probe = LipschitzProbe::tightest(p, &a, &b).unwrap();
        prop_assert_eq!(lower_bound_thm2(&a, &b, &probe).unwrap(), lower_bound_thm2(&b, &a, &probe).unwrap());
    }

    #[test]
    fn sandwich_orders_bounds(a in samples(16, 3), b in samples(16, 3), p in 2u32..=4) {
        let report = bound_sandwich(&a, &b, &LipschitzProbe::tightest(p, &a, &b).unwrap()).unwrap();
        prop_assert!(report.ordered());
    }

    #[test]
    fn assignment_is_a_metric(a in samples(8, 2), b in samples(8, 2), c in samples(8, 2)) {
        let ab = em_exact_assignment(&a, &b).unwrap();
        prop_assert_eq!(ab, em_exact_assignment(&b, &a).unwrap());
        prop_assert_eq!(em_exact_assignment(&a, &a).unwrap(), 0.0);
        prop_assert!(ab >= 0.0);
        let bc = em_exact_assignment(&b, &c).unwrap();
        prop_assert!(em_exact_assignment(&a, &c).unwrap() <= ab + bc + 1e-9);
    }

    #[test]
    fn assignment_matches_sorted_one_dimensional(a in samples(20, 1), b in samples(20, 1)) {
        let gap = (em_exact_assignment(&a, &b).unwrap() - em_exact_1d(&a, &b).unwrap()).abs();
        prop_assert!(gap <= 1e-12);
    }

    #[test]
    fn unitized_sets_stay_within_their_bounds(a in samples(10, 3), b in samples(10, 3), alpha in 0.1f64..=1.0) {
        let c = default_pole::<f64>(3);
        let vanilla = |s: &SampleSet| s.map_rows(|r| vanilla_unitize(r, &c)).unwrap();
        let dist = em_exact_assignment(&vanilla(&a), &vanilla(&b)).unwrap();
        prop_assert!(dist <= unitized_upper_bound::<f64>(&UnitizedMode::Vanilla, None).unwrap() + 1e-12);

        let partial = |s: &SampleSet| s.map_rows(|r| partial_unitize(r, alpha, &c)).unwrap();
        let dist = em_exact_assignment(&partial(&a), &partial(&b)).unwrap();
        prop_assert!(dist <= unitized_upper_bound(&UnitizedMode::Scalar(alpha), None).unwrap() + 1e-12);

        let av = vec![alpha, 1.0, (alpha + 1.0) / 2.0];
        let general = |s: &SampleSet| s.map_rows(|r| general_unitize(r, &av)).unwrap();
        let dist = em_exact_assignment(&general(&a), &general(&b)).unwrap();
        prop_assert!(dist <= unitized_upper_bound(&UnitizedMode::Vector(av.clone()), None).unwrap() + 1e-12);
    }
}

#[test]
fn random_gaussian_pairs_are_sandwiched() {
    for seed in 0..100 {
        let (a, b) = synth_gaussian_pair::<f64>(64, 2, 0.5, 2.0, seed).unwrap();
        let report = bound_sandwich(&a, &b, &LipschitzProbe::tightest(2, &a, &b).unwrap()).unwrap();
        assert!(report.ordered(), "seed {seed}: {report:?}");
    }
}

#[test]
fn uniform_box_distance_exceeds_its_lower_bound() {
    for c_prime in [1.0, 10.0, 100.0] {
        let (a, b) = synth_appendix_uniform_pair::<f64>(c_prime, 2, 128, 7).unwrap();
        let probe = LipschitzProbe::new(2, c_prime, 2, Some(c_prime)).unwrap();
        let lower = unbounded_example_lower(c_prime, &probe).unwrap();
        assert!(lower <= em_exact_assignment(&a, &b).unwrap());
    }
}

#[test]
fn zero_alpha_bound_needs_norms() {
    assert!(unitized_upper_bound::<f64>(&UnitizedMode::Scalar(0.0), None).is_err());
    assert_eq!(unitized_upper_bound::<f64>(&UnitizedMode::Scalar(0.0), Some((1.5, 2.0))).unwrap(), 3.5);
    assert_eq!(unitized_upper_bound::<f64>(&UnitizedMode::Scalar(0.5), None).unwrap(), 4.0);
}

#[test]
fn sample_set_csv_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rows: Vec<Vec<f64>> = (0..5).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let s = SampleSet::from_rows(&rows, 42).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.csv");
    s.save(&path).unwrap();
    assert_eq!(SampleSet::load(&path).unwrap(), s);
}
