//! End-to-end acceptance checks. Each test prints one PASS/FAIL line; run with
//! `cargo test -p bellsim --release --test acceptance -- --nocapture`.

use std::f64::consts::SQRT_2;
use std::time::{Duration, Instant};

use bellsim::coincidence::{accumulate_tensor, s_hat_distribution, sample_events};
use bellsim::experiment::{
    calibrate_g_over_sigma, cmd_calibrate, cmd_run, simulate_run, sweep, CouplingSpec, ExperimentConfig, StateSpec,
};
use bellsim::pointer::{Axis, PixelGrid};
use bellsim::polarization::{
    chsh_s, concurrence, fidelity, negativity, singlet, werner, AngleSet, TwoQubitState,
};
use bellsim::tomography::{reconstruct_mle, simulate_counts, tomography_settings};
use bellsim::weak::{
    alice_pixel_pmf, apply_output_channel, chsh_from_moments, exact_moments, joint_pixel_pmf, min_eigenvalue,
    output_kraus, output_polarization_state, pixel_moments, visibility, weak_moments_first_order, Couplings,
    MeasurementSettings,
};
use nalgebra::Matrix4;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

fn verdict(n: u32, name: &str, ok: bool, detail: String) {
    println!("criterion {n:>2} {} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
    assert!(ok, "criterion {n} ({name}) failed: {detail}");
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = xs.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

fn headline_config() -> ExperimentConfig {
    ExperimentConfig {
        state: StateSpec::Werner(0.986),
        couplings: CouplingSpec::GOverSigma(0.1),
        n_events: 1_000_000,
        seed: 7,
        ..ExperimentConfig::default()
    }
}

#[test]
fn criterion_01_tsirelson() {
    let rho = singlet();
    let angles = AngleSet::default();
    let s = chsh_s(&rho, &angles).unwrap();
    let mut best = Duration::MAX;
    for _ in 0..20 {
        let t = Instant::now();
        std::hint::black_box(chsh_s(std::hint::black_box(&rho), &angles).unwrap());
        best = best.min(t.elapsed());
    }
    let err = (s + 2.0 * SQRT_2).abs();
    verdict(
        1,
        "Tsirelson value",
        err <= 1e-12 && best < Duration::from_millis(1),
        format!("S = {s:.15}, |S + 2√2| = {err:.1e}, time {best:?}"),
    );
}

#[test]
fn criterion_02_headline_s_ave() {
    let cfg = headline_config();
    let t = Instant::now();
    let out = simulate_run(&cfg).unwrap();
    let elapsed = t.elapsed();
    let sum = &out.report.summary;
    let within_3se = (sum.s_ave + 2.789).abs() <= 3.0 * sum.stderr;
    let overlaps = (sum.s_ave + 2.79).abs() <= 0.18;
    verdict(
        2,
        "headline S_ave",
        within_3se && overlaps && elapsed < Duration::from_secs(300),
        format!(
            "S_ave = {:.4} ± {:.4} (stddev {:.1}, n = {}); within 3 stderr of -2.789: {within_3se}; \
             S_ave ± 0.18 contains -2.79: {overlaps}; {elapsed:.1?}",
            sum.s_ave, sum.stderr, sum.stddev, sum.n_events
        ),
    );
}

#[test]
fn criterion_03_estimator_identity() {
    let rho = werner(0.986).unwrap();
    let mut details = Vec::new();
    let mut ok = true;

    // default geometry: dense cell sum, cross-checked against the factorized form
    let cfg = headline_config();
    let calibrated = calibrate_g_over_sigma(&rho, &cfg, 0.941).unwrap();
    for r in [0.1, calibrated] {
        let s = MeasurementSettings::uniform(AngleSet::default(), r, cfg.sigma).unwrap();
        let pmf = joint_pixel_pmf(&rho, &s, &cfg.grid).unwrap();
        let (dense, _) = s_hat_distribution(&pmf, &s, &cfg.grid).unwrap();
        let factorized = chsh_from_moments(&pixel_moments(&rho, &s, &cfg.grid).unwrap(), &s).unwrap();
        let exact = chsh_from_moments(&exact_moments(&rho, &s).unwrap(), &s).unwrap();
        let d = (dense - exact).abs();
        ok &= d <= 0.02 && (dense - factorized).abs() <= 1e-9;
        details.push(format!("24 grid g/σ={r:.4}: |E[Ŝ] − S_moments| = {d:.2e}"));
    }

    // 96 × 96 with the beam scaled up four times
    let grid = PixelGrid::centered(96);
    let sigma = 12.0;
    let s = MeasurementSettings::uniform(AngleSet::default(), 0.1, sigma).unwrap();
    let fine = chsh_from_moments(&pixel_moments(&rho, &s, &grid).unwrap(), &s).unwrap();
    let exact = chsh_from_moments(&exact_moments(&rho, &s).unwrap(), &s).unwrap();
    let d = (fine - exact).abs();
    ok &= d <= 0.002;
    details.push(format!("96 grid: {d:.2e}"));
    verdict(3, "estimator identity", ok, details.join("; "));
}

#[test]
fn criterion_04_weak_limit_scaling() {
    let sigma = 3.0;
    let ratios = [0.02, 0.04, 0.08, 0.16, 0.32];
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let rho = TwoQubitState::random_mixed(&mut rng);
    let disc: Vec<f64> = ratios
        .iter()
        .map(|&r| {
            let s = MeasurementSettings::uniform(AngleSet::default(), r, sigma).unwrap();
            let g = r * sigma;
            let e = exact_moments(&rho, &s).unwrap().as_array();
            let f = weak_moments_first_order(&rho, &s).unwrap().as_array();
            (0..8)
                .map(|k| (e[k] - f[k]).abs() / if k < 4 { g } else { g * g })
                .fold(0.0, f64::max)
        })
        .collect();
    let slope = log_log_slope(&ratios, &disc);
    verdict(
        4,
        "weak-limit convergence",
        (slope - 2.0).abs() <= 0.2,
        format!(
            "slope {slope:.4}, discrepancies [{}]",
            disc.iter().map(|d| format!("{d:.3e}")).collect::<Vec<_>>().join(", ")
        ),
    );
}

#[test]
fn criterion_05_channel_physicality() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let identity = Matrix4::<Complex64>::identity();
    let mut worst_tp: f64 = 0.0;
    let mut worst_kraus: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    for i in 0..200 {
        let angles = AngleSet {
            alpha1: rand::Rng::random::<f64>(&mut rng) * 3.0,
            alpha2: rand::Rng::random::<f64>(&mut rng) * 3.0,
            beta1: rand::Rng::random::<f64>(&mut rng) * 3.0,
            beta2: rand::Rng::random::<f64>(&mut rng) * 3.0,
        };
        let mut c = Couplings::uniform(0.0);
        for axis in Axis::ALL {
            c.set(axis, rand::Rng::random::<f64>(&mut rng) * 6.0);
        }
        let s = MeasurementSettings::new(angles, c, 3.0).unwrap();
        let rho = if i % 2 == 0 { TwoQubitState::random_pure(&mut rng) } else { TwoQubitState::random_mixed(&mut rng) };
        let out = apply_output_channel(rho.matrix(), &s).unwrap();
        worst_tp = worst_tp.max((out.trace() - Complex64::new(1.0, 0.0)).norm());
        worst_eig = worst_eig.min(min_eigenvalue(&out));
        let sum = output_kraus(&s).unwrap().iter().fold(Matrix4::zeros(), |acc, k| acc + k.adjoint() * k);
        worst_kraus = worst_kraus.max((sum - identity).iter().map(|z| z.norm()).fold(0.0, f64::max));
    }

    let rho = werner(0.9).unwrap();
    let s0 = MeasurementSettings::new(AngleSet::default(), Couplings::uniform(0.0), 3.0).unwrap();
    let id_err = (apply_output_channel(rho.matrix(), &s0).unwrap() - rho.matrix())
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max);

    let cfg = ExperimentConfig { state: StateSpec::Werner(0.986), ..ExperimentConfig::default() };
    let values: Vec<f64> = (1..=30).map(|i| 0.05 * i as f64).collect();
    let rows = sweep(&cfg, &values).unwrap();
    let monotone = rows.windows(2).all(|w| w[1].f_out <= w[0].f_out + 1e-12);

    verdict(
        5,
        "channel physicality",
        worst_tp <= 1e-12 && worst_kraus <= 1e-12 && worst_eig >= -1e-10 && id_err <= 1e-15 && monotone,
        format!(
            "trace err {worst_tp:.1e}, ΣK†K err {worst_kraus:.1e}, min eig {worst_eig:.1e}, \
             g=0 err {id_err:.1e}, F_out monotone over {} points: {monotone}",
            rows.len()
        ),
    );
}

#[test]
fn criterion_06_calibration_vs_paper() {
    let cfg = ExperimentConfig { state: StateSpec::Werner(0.986), ..ExperimentConfig::default() };
    let dir = tempfile::tempdir().unwrap();
    let (report, _) = cmd_calibrate(&cfg, 0.941, dir.path()).unwrap();
    let s = MeasurementSettings::uniform(cfg.angles, report.g_over_sigma, cfg.sigma).unwrap();
    let out = output_polarization_state(&werner(0.986).unwrap(), &s).unwrap();
    let v = visibility(&out).unwrap();
    let c = concurrence(&out).unwrap();
    let n = negativity(&out);
    verdict(
        6,
        "calibrated decoherence",
        (v - 0.941).abs() <= 1e-4 && (0.88..=0.95).contains(&c),
        format!(
            "V_in = {:.4}, g/σ = {:.6}, V_out = {v:.6}, C_out = {c:.4}, N_out = {n:.4}",
            report.v_in, report.g_over_sigma
        ),
    );
}

#[test]
fn criterion_07_entanglement_metrics() {
    let (ns, cs) = (negativity(&singlet()), concurrence(&singlet()).unwrap());
    let cw = concurrence(&werner(0.986).unwrap()).unwrap();
    let mixed = TwoQubitState::maximally_mixed();
    let (nm, cm) = (negativity(&mixed), concurrence(&mixed).unwrap());
    let ok = (ns - 1.0).abs() <= 1e-12
        && (cs - 1.0).abs() <= 1e-12
        && (cw - 0.979).abs() <= 1e-9
        && nm.abs() <= 1e-12
        && cm.abs() <= 1e-12;
    verdict(
        7,
        "entanglement metrics",
        ok,
        format!("singlet N = {ns:.15}, C = {cs:.15}; werner(0.986) C = {cw:.12}; I/4 N = {nm:.1e}, C = {cm:.1e}"),
    );
}

#[test]
fn criterion_08_tomography_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let settings = tomography_settings();
    let mut worst_f: f64 = 1.0;
    let mut monotone = true;
    let mut physical = true;
    for i in 0..20u64 {
        let truth = if i % 2 == 0 { TwoQubitState::random_pure(&mut rng) } else { TwoQubitState::random_mixed(&mut rng) };
        let counts = simulate_counts(&truth, &settings, 100_000, 800 + i).unwrap();
        let rec = reconstruct_mle(&counts).unwrap();
        worst_f = worst_f.min(fidelity(&rec.rho, &truth).unwrap());
        monotone &= rec.history.windows(2).all(|w| w[1] >= w[0] - 64.0 * f64::EPSILON * w[0].abs());
        physical &= rec.rho.eigenvalues().min() >= -1e-10 && (rec.rho.matrix().trace().re - 1.0).abs() <= 1e-10;
    }
    verdict(
        8,
        "tomography round trip",
        worst_f >= 0.995 && monotone && physical,
        format!("worst fidelity {worst_f:.5} over 20 states; likelihood monotone: {monotone}; physical: {physical}"),
    );
}

#[test]
fn criterion_09_pmf_integrity() {
    let cfg = headline_config();
    let rho = cfg.input_state().unwrap();
    let s = cfg.settings().unwrap();
    let pmf = joint_pixel_pmf(&rho, &s, &cfg.grid).unwrap();
    let norm_err = (pmf.total() - 1.0).abs();

    let direct = alice_pixel_pmf(&rho, &s, &cfg.grid).unwrap();
    let marg_err = pmf
        .alice_marginal()
        .iter()
        .zip(&direct)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // χ² on cells pooled in order of expected count, at least 20 expected per pool
    let n = 1_000_000usize;
    let events = sample_events(&pmf, n, 9).unwrap();
    let tensor = accumulate_tensor(&events, cfg.grid.n).unwrap();
    let mut order: Vec<usize> = (0..pmf.probs.len()).collect();
    order.sort_by(|&a, &b| pmf.probs[a].total_cmp(&pmf.probs[b]));
    let mut pools: Vec<(f64, f64)> = Vec::new();
    let (mut exp, mut obs) = (0.0, 0.0);
    for idx in order {
        let [xa, ya, xb, yb] = pmf.cell(idx);
        exp += pmf.probs[idx] * n as f64;
        obs += tensor.get(xa, ya, xb, yb) as f64;
        if exp >= 20.0 {
            pools.push((exp, obs));
            exp = 0.0;
            obs = 0.0;
        }
    }
    if let Some(last) = pools.last_mut() {
        last.0 += exp;
        last.1 += obs;
    }
    let chi2: f64 = pools.iter().map(|(e, o)| (o - e) * (o - e) / e).sum();
    let dof = (pools.len() - 1) as f64;
    let p = ChiSquared::new(dof).unwrap().sf(chi2);

    verdict(
        9,
        "pmf integrity",
        norm_err <= 1e-9 && marg_err <= 1e-10 && p >= 1e-3,
        format!("|Σp − 1| = {norm_err:.1e}, marginal err {marg_err:.1e}, χ² = {chi2:.1} on {dof} dof, p = {p:.3}"),
    );
}

#[test]
fn criterion_10_per_pair_spread() {
    let cfg = headline_config();
    let ratios = [0.05, 0.1, 0.2];
    let rows = sweep(&cfg, &ratios).unwrap();
    let inverse: Vec<f64> = ratios.iter().map(|r| 1.0 / r).collect();
    let sd: Vec<f64> = rows.iter().map(|r| r.stddev).collect();
    let slope = log_log_slope(&inverse, &sd);
    verdict(
        10,
        "per-pair spread",
        (slope - 2.0).abs() <= 0.3,
        format!("slope {slope:.4} of stddev(Ŝ) vs σ/g; stddev {sd:.1?}"),
    );
}

#[test]
fn criterion_11_thread_determinism() {
    let cfg = ExperimentConfig { n_events: 400_000, ..headline_config() };
    let summaries: Vec<Vec<u8>> = [1, 2, 8]
        .iter()
        .map(|&threads| {
            let dir = tempfile::tempdir().unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| cmd_run(&cfg, dir.path(), false)).unwrap();
            std::fs::read(dir.path().join("summary.json")).unwrap()
        })
        .collect();
    let same = summaries.windows(2).all(|w| w[0] == w[1]);
    verdict(
        11,
        "thread-count determinism",
        same,
        format!("summary.json identical across 1, 2, 8 threads ({} bytes): {same}", summaries[0].len()),
    );
}
