use bellsim::coincidence::{accumulate_tensor, aggregate, estimate_all, s_hat_distribution, sample_events, HistogramSpec};
use bellsim::pointer::{Axis, PixelGrid};
use bellsim::polarization::{werner, AngleSet, TwoQubitState};
use bellsim::tomography::{reconstruct_mle_with, tomography_settings, CountEntry, CountRecord, MleOptions};
use bellsim::weak::{
    alice_pixel_pmf, apply_output_channel, chsh_from_moments, exact_moments, joint_pixel_pmf, min_eigenvalue,
    Couplings, MeasurementSettings,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn angles_strategy() -> impl Strategy<Value = AngleSet> {
    (0.0..3.2f64, 0.0..3.2f64, 0.0..3.2f64, 0.0..3.2f64)
        .prop_map(|(alpha1, alpha2, beta1, beta2)| AngleSet { alpha1, alpha2, beta1, beta2 })
}

fn couplings_strategy() -> impl Strategy<Value = Couplings> {
    prop::array::uniform4(0.0..3.0f64).prop_map(|[x_a, y_a, x_b, y_b]| Couplings { x_a, y_a, x_b, y_b })
}

#[test]
fn estimator_consistency_across_geometries() {
    let rho = werner(0.95).unwrap();
    // (g/σ, σ, grid side): the pixelation bias shrinks as σ grows in pixel units
    for (r, sigma, n, bound) in [(0.3, 1.5, 12, 0.05), (0.2, 3.0, 24, 0.01), (0.1, 4.0, 32, 0.005)] {
        let s = MeasurementSettings::uniform(AngleSet::default(), r, sigma).unwrap();
        let grid = PixelGrid::centered(n);
        let pmf = joint_pixel_pmf(&rho, &s, &grid).unwrap();
        let (mean, _) = s_hat_distribution(&pmf, &s, &grid).unwrap();
        let exact = chsh_from_moments(&exact_moments(&rho, &s).unwrap(), &s).unwrap();
        assert!((mean - exact).abs() < bound, "g/σ={r} σ={sigma} n={n}: {mean} vs {exact}");
    }
}

#[test]
fn tensor_marginal_converges_to_alice_pmf() {
    let rho = werner(0.9).unwrap();
    let s = MeasurementSettings::uniform(AngleSet::default(), 0.4, 1.5).unwrap();
    let grid = PixelGrid::centered(10);
    let pmf = joint_pixel_pmf(&rho, &s, &grid).unwrap();
    let direct = alice_pixel_pmf(&rho, &s, &grid).unwrap();
    let n = 400_000;
    let tensor = accumulate_tensor(&sample_events(&pmf, n, 17).unwrap(), grid.n).unwrap();
    let freq = tensor.alice_marginal();
    let tv: f64 = 0.5 * freq.iter().zip(&direct).map(|(&c, p)| (c as f64 / n as f64 - p).abs()).sum::<f64>();
    let bound = 3.0 * (direct.len() as f64 / n as f64).sqrt();
    assert!(tv <= bound, "TV {tv} > {bound}");
}

#[test]
fn run_summary_independent_of_thread_count() {
    let rho = werner(0.986).unwrap();
    let s = MeasurementSettings::uniform(AngleSet::default(), 0.2, 2.0).unwrap();
    let grid = PixelGrid::centered(12);
    let pmf = joint_pixel_pmf(&rho, &s, &grid).unwrap();
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let events = sample_events(&pmf, 200_001, 5).unwrap();
            let est: Vec<f64> = estimate_all(&events, &s, &grid).unwrap().iter().map(|e| e.s_hat).collect();
            aggregate(&est, &HistogramSpec::default()).unwrap()
        })
    };
    let one = run(1);
    for t in [2, 3, 8] {
        assert_eq!(run(t), one);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn channel_output_is_a_state(angles in angles_strategy(), c in couplings_strategy(), seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = TwoQubitState::random_mixed(&mut rng);
        let s = MeasurementSettings::new(angles, c, 1.0).unwrap();
        let out = apply_output_channel(rho.matrix(), &s).unwrap();
        prop_assert!((out.trace().re - 1.0).abs() < 1e-12);
        prop_assert!(min_eigenvalue(&out) > -1e-10);
        prop_assert!((out - out.adjoint()).iter().all(|z| z.norm() < 1e-14));
    }

    #[test]
    fn pmf_normalized_with_consistent_marginal(
        angles in angles_strategy(),
        c in couplings_strategy(),
        sigma in 0.6..2.0f64,
        seed in any::<u64>(),
        order in Just([Axis::XA, Axis::XB, Axis::YA, Axis::YB]).prop_shuffle(),
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rho = TwoQubitState::random_mixed(&mut rng);
        let s = MeasurementSettings::new(angles, c, sigma).unwrap().with_ordering(order).unwrap();
        let grid = PixelGrid::centered(6);
        let pmf = joint_pixel_pmf(&rho, &s, &grid).unwrap();
        prop_assert!((pmf.total() - 1.0).abs() < 1e-9);
        prop_assert!(pmf.probs.iter().all(|&p| p >= 0.0));
        let direct = alice_pixel_pmf(&rho, &s, &grid).unwrap();
        for (a, b) in pmf.alice_marginal().iter().zip(&direct) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn mle_output_is_physical_for_any_counts(raw in prop::collection::vec(0u64..=50, 36)) {
        let rec = CountRecord {
            entries: tomography_settings()
                .into_iter()
                .zip(raw)
                .map(|(setting, counts)| CountEntry { setting, counts, shots: 50 })
                .collect(),
        };
        let out = reconstruct_mle_with(&rec, &MleOptions { max_iterations: 300, ..MleOptions::default() }).unwrap();
        prop_assert!(out.rho.eigenvalues().min() >= -1e-10);
        prop_assert!((out.rho.matrix().trace().re - 1.0).abs() < 1e-10);
    }
}
