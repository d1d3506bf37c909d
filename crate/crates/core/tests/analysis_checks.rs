//! End-to-end checks of the rate-extraction and report layer: noiseless
//! power-series inversion over broad random models, robustness to noisy
//! input, automatic shelving-law selection, and the geometric invariants
//! of the polarization helpers.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use spekit_core::analysis::{
    dipole_misalignment, ensemble_stats, extract_rates, visibility, visibility_from_fit,
    AngleConvention, PolarizationParams, PowerSeriesPoint, ShelvingMode,
};
use spekit_core::kinetics::RateModel;

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.random::<f64>() * (hi / lo).ln()).exp() * lo
}

/// The three reference parameter rows used throughout the crate tests.
fn reference_models() -> [RateModel<f64>; 3] {
    [
        RateModel::new(0.678, 0.127, 0.024, 9.27e-4, 0.0).unwrap(),
        RateModel::new(0.268, 0.046, 0.021, 3.31e-4, 3.29e-5).unwrap(),
        RateModel::new(1.039, 0.521, 0.043, 1.65e-4, 3.49e-4).unwrap(),
    ]
}

/// Noiseless power series of correlation parameters for `model`, with the
/// pump rate sweeping a fixed fraction window of the radiative rate.
fn noiseless_series(model: &RateModel<f64>, n_powers: usize) -> Option<Vec<PowerSeriesPoint<f64>>> {
    let p_lo = 0.05 * model.k21 / model.alpha;
    let span = 40.0f64;
    let mut series = Vec::with_capacity(n_powers);
    for k in 0..n_powers {
        let p = p_lo * span.powf(k as f64 / (n_powers - 1) as f64);
        let g2 = model.rates_at_power(p).ok()?.analytic_g2().ok()?;
        series.push(PowerSeriesPoint::from_g2(p, &g2));
    }
    Some(series)
}

fn random_model(rng: &mut ChaCha8Rng, with_beta: bool) -> RateModel<f64> {
    loop {
        let k21 = log_uniform(rng, 0.1, 2.0);
        let k23 = k21 / rng.random_range(2.0..40.0);
        let k31_0 = log_uniform(rng, 0.005, 0.1).min(0.8 * k23);
        let alpha = log_uniform(rng, 1e-4, 1e-3);
        let beta = if with_beta {
            // Strong enough that the deshelving law is visible inside the
            // swept power window.
            let p_max = 2.0 * k21 / alpha;
            rng.random_range(0.5..3.0) / p_max
        } else {
            0.0
        };
        if let Ok(m) = RateModel::new(k21, k23, k31_0, alpha, beta) {
            return m;
        }
    }
}

#[test]
fn rate_extraction_round_trips_noiselessly() {
    let mut rng = ChaCha8Rng::seed_from_u64(1201);
    let mut done = 0;
    while done < 1000 {
        let with_beta = done % 2 == 0;
        let model = random_model(&mut rng, with_beta);
        let Some(series) = noiseless_series(&model, 6) else {
            continue;
        };
        let mode =
            if with_beta { ShelvingMode::PowerDependent } else { ShelvingMode::PowerIndependent };
        let ex = extract_rates(&series, mode).unwrap();
        assert!(ex.fit.converged, "trial {done} did not converge");
        let pairs = [
            ("k21", ex.model.k21, model.k21),
            ("k23", ex.model.k23, model.k23),
            ("k31_0", ex.model.k31_0, model.k31_0),
            ("alpha", ex.model.alpha, model.alpha),
        ];
        for (name, got, truth) in pairs {
            assert!((got - truth).abs() / truth < 1e-4, "trial {done}: {name} {got} vs {truth}");
        }
        if with_beta {
            assert!(
                (ex.model.beta - model.beta).abs() / model.beta < 1e-4,
                "trial {done}: beta {} vs {}",
                ex.model.beta,
                model.beta
            );
        }
        done += 1;
    }
}

#[test]
fn rate_extraction_survives_noisy_series() {
    let truth = RateModel::new(1.039, 0.521, 0.043, 1.65e-4, 3.49e-4).unwrap();
    let powers: Vec<f64> = (0..6).map(|k| 100.0 * 30f64.powf(k as f64 / 5.0)).collect();
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); 5];
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let series: Vec<PowerSeriesPoint<f64>> = powers
            .iter()
            .map(|&p| {
                let g2 = truth.rates_at_power(p).unwrap().analytic_g2().unwrap();
                let l1 = g2.lambda1() * (1.0 + noise.sample(&mut rng));
                let l2 = g2.lambda2() * (1.0 + noise.sample(&mut rng));
                let a = g2.a * (1.0 + noise.sample(&mut rng));
                PowerSeriesPoint {
                    power: p,
                    lambda1: l1,
                    lambda2: l2,
                    a,
                    lambda1_err: 0.05 * l1,
                    lambda2_err: 0.05 * l2,
                    a_err: 0.05 * a,
                }
            })
            .collect();
        let Ok(ex) = extract_rates(&series, ShelvingMode::PowerDependent) else {
            continue;
        };
        let got = [ex.model.k21, ex.model.k23, ex.model.k31_0, ex.model.alpha, ex.model.beta];
        let want = [truth.k21, truth.k23, truth.k31_0, truth.alpha, truth.beta];
        for i in 0..5 {
            errs[i].push((got[i] - want[i]).abs() / want[i]);
        }
    }
    for (name, e) in ["k21", "k23", "k31_0", "alpha", "beta"].iter().zip(errs.iter_mut()) {
        assert!(e.len() >= 95, "{name}: only {} extractions succeeded", e.len());
        e.sort_unstable_by(f64::total_cmp);
        let median = e[e.len() / 2];
        assert!(median < 0.20, "{name}: median relative error {median}");
    }
}

#[test]
fn auto_mode_resolves_the_right_shelving_law() {
    let mut rng = ChaCha8Rng::seed_from_u64(555);
    let mut checked = [0u32; 2];
    while checked[0] < 40 || checked[1] < 40 {
        let with_beta = checked[0] <= checked[1];
        let model = random_model(&mut rng, with_beta);
        let Some(series) = noiseless_series(&model, 6) else {
            continue;
        };
        let ex = extract_rates(&series, ShelvingMode::Auto).unwrap();
        let expected =
            if with_beta { ShelvingMode::PowerDependent } else { ShelvingMode::PowerIndependent };
        assert_eq!(ex.mode, expected, "model {model:?}");
        assert!(
            ex.fit.warnings.iter().any(|w| w.contains("auto")),
            "auto selection left no warning trail"
        );
        checked[if with_beta { 0 } else { 1 }] += 1;
    }
}

#[test]
fn antibunching_rate_grows_with_power() {
    // Pumping harder always shortens the antibunching timescale; the
    // extracted models must inherit that monotonicity.
    for model in reference_models() {
        let series = noiseless_series(&model, 6).unwrap();
        let ex = extract_rates(&series, ShelvingMode::Auto).unwrap();
        let mut prev = 0.0;
        for step in 1..=40 {
            let p = 50.0 * step as f64;
            let g2 = ex.model.rates_at_power(p).unwrap().analytic_g2().unwrap();
            let l1 = g2.lambda1();
            assert!(l1 > prev, "lambda1 fell from {prev} to {l1} at {p} uW");
            prev = l1;
        }
    }
}

#[test]
fn shelving_ratio_sits_inside_the_envelope() {
    // Across the characterized emitters the radiative channel beats the
    // shelving channel by a factor of roughly two to forty.
    for model in reference_models() {
        let ratio = model.k21 / model.k23;
        assert!((1.9..=40.5).contains(&ratio), "k21/k23 = {ratio} outside the expected envelope");
        assert!(model.k31_0 < model.k23, "deshelving should be the slowest channel");
    }
}

#[test]
fn visibility_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(777);
    for _ in 0..500 {
        let i_min = log_uniform(&mut rng, 0.1, 100.0);
        let i_max = i_min * rng.random_range(1.01..50.0);
        let c = log_uniform(&mut rng, 1e-3, 1e3);
        let v1 = visibility(i_max, i_min).unwrap();
        let v2 = visibility(c * i_max, c * i_min).unwrap();
        assert!((v1 - v2).abs() < 1e-12, "{v1} vs {v2}");
        assert!((0.0..=1.0).contains(&v1));

        let params = PolarizationParams { a: i_min, b: i_max - i_min, phi0_deg: 40.0 };
        let scaled = PolarizationParams { a: c * i_min, b: c * (i_max - i_min), phi0_deg: 40.0 };
        let r1 = visibility_from_fit(&params).unwrap();
        let r2 = visibility_from_fit(&scaled).unwrap();
        assert!((r1.visibility - r2.visibility).abs() < 1e-12);
        assert!((r1.visibility - v1).abs() < 1e-12);
        assert_eq!(r1.axis_angle_deg, r2.axis_angle_deg);
    }
}

#[test]
fn misalignment_respects_fold_and_shift_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(888);
    let mut tested = 0;
    while tested < 500 {
        let a: f64 = rng.random_range(-720.0..720.0);
        let e: f64 = rng.random_range(-720.0..720.0);
        let raw = dipole_misalignment(a, e, AngleConvention::Raw);
        let folded = dipole_misalignment(a, e, AngleConvention::Folded);
        // Skip draws that land within numerical reach of a branch cut.
        let near_cut = [180.0, 90.0]
            .iter()
            .any(|&cut| ((raw.abs() - cut).abs() < 1e-6) || (folded.abs() - 90.0).abs() < 1e-6);
        if near_cut {
            continue;
        }
        assert!((-180.0..=180.0).contains(&raw));
        assert!((-90.0..=90.0).contains(&folded));

        // Turning either dipole by a half turn leaves the folded axis
        // difference alone.
        let half = dipole_misalignment(a + 180.0, e, AngleConvention::Folded);
        assert!((half - folded).abs() < 1e-9, "half-turn moved fold {folded} -> {half}");

        // A common rotation of both angles changes nothing.
        let shift = rng.random_range(-360.0..360.0);
        let moved = dipole_misalignment(a + shift, e + shift, AngleConvention::Folded);
        assert!((moved - folded).abs() < 1e-9);

        // Swapping the roles negates the raw difference.
        let swapped = dipole_misalignment(e, a, AngleConvention::Raw);
        assert!((swapped + raw).abs() < 1e-9, "raw {raw}, swapped {swapped}");
        tested += 1;
    }
}

#[test]
fn ensemble_stats_match_direct_computation() {
    let mut rng = ChaCha8Rng::seed_from_u64(999);
    for _ in 0..50 {
        let n = rng.random_range(5..200);
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..4.5)).collect();
        let stats = ensemble_stats(&values, 0.25).unwrap();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        assert!((stats.mean - mean).abs() < 1e-12);
        assert!((stats.std_dev - var.sqrt()).abs() < 1e-12);
        assert_eq!(stats.counts.iter().sum::<u64>(), n as u64);
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(stats.bin_edges[0] <= lo && *stats.bin_edges.last().unwrap() >= hi);
        // A uniform shift moves the mean and leaves the spread alone.
        let shifted: Vec<f64> = values.iter().map(|v| v + 10.0).collect();
        let moved = ensemble_stats(&shifted, 0.25).unwrap();
        assert!((moved.mean - (mean + 10.0)).abs() < 1e-10);
        assert!((moved.std_dev - stats.std_dev).abs() < 1e-10);
    }
}
