//! Weighted nonlinear least-squares fits of the four measurement models:
//! the two-exponential correlation function, the saturation hyperbola, the
//! double-exponential decay and the cos^2 polarization response.
//!
//! All fitters share one contract: weights are `1/error^2` when per-point
//! errors are supplied (zero errors borrow the smallest positive one, and
//! all-zero errors mean an unweighted fit), positive parameters are fitted
//! on a log scale so no clamping is ever needed and the covariance stays
//! meaningful, Jacobians are analytic, and non-convergence is reported in
//! the result rather than silently accepted or raised as a failure.

pub mod lm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::G2Params;
use crate::scalar::Real;
use lm::LevenbergMarquardt;

/// Named parameter estimates with uncertainties and fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<T> {
    /// Parameter names and fitted values, in model order.
    pub params: Vec<(String, T)>,
    /// One-sigma uncertainty per parameter, aligned with `params`.
    pub uncertainties: Vec<T>,
    /// Square root of the summed squared weighted residuals.
    pub residual_norm: T,
    pub iterations: usize,
    pub converged: bool,
    /// Parameter covariance, aligned with `params`.
    pub covariance: Vec<Vec<T>>,
    /// Identifiability and domain warnings; empty means a clean fit.
    pub warnings: Vec<String>,
    /// Which model (and mode) produced this result.
    pub model: String,
}

impl<T: Real> FitResult<T> {
    pub fn param(&self, name: &str) -> Option<T> {
        self.params.iter().find(|(n, _)| n == name).map(|&(_, v)| v)
    }

    pub fn uncertainty(&self, name: &str) -> Option<T> {
        self.params.iter().position(|(n, _)| n == name).map(|i| self.uncertainties[i])
    }

    /// Reduced chi-square, meaningful when the fit was weighted.
    pub fn chi2_per_dof(&self, n_points: usize) -> Option<T> {
        let dof = n_points.checked_sub(self.params.len())?;
        if dof == 0 {
            return None;
        }
        Some(self.residual_norm * self.residual_norm / T::of(dof as f64))
    }
}

/// Whether the correlation fit includes a background dilution factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum G2FitMode {
    /// Fit the bare two-exponential form.
    Bare,
    /// Fit `1 + rho^2 (g2 - 1)` with the signal fraction rho as a fourth
    /// parameter.
    WithBackground,
}

/// Polarization scan orientation: rotating the excitation or the analyzer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PolarizationRole {
    Absorption,
    Emission,
}

/// Intensity versus polarization angle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolarizationScan<T> {
    pub angles_deg: Vec<T>,
    pub intensities: Vec<T>,
    pub errors: Option<Vec<T>>,
    pub role: PolarizationRole,
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub(crate) enum Transform {
    Log,
    Linear,
}

/// Per-point standard deviations for the weighted residuals; `None` means
/// the data carry no usable errors and the fit is unweighted.
pub(crate) fn sigma_vector<T: Real>(n: usize, errors: Option<&[T]>) -> Result<Option<Vec<T>>> {
    let Some(errs) = errors else { return Ok(None) };
    if errs.len() != n {
        return Err(Error::invalid("errors", "length mismatch with data"));
    }
    if errs.iter().any(|e| !e.is_finite() || *e < T::zero()) {
        return Err(Error::invalid("errors", "must be finite and >= 0"));
    }
    let mut min_pos = T::infinity();
    for &e in errs {
        if e > T::zero() && e < min_pos {
            min_pos = e;
        }
    }
    if !min_pos.is_finite() {
        return Ok(None);
    }
    Ok(Some(errs.iter().map(|&e| if e > T::zero() { e } else { min_pos }).collect()))
}

pub(crate) struct TransformedFit<T> {
    pub(crate) theta: Vec<T>,
    pub(crate) uncertainties: Vec<T>,
    pub(crate) covariance: Vec<Vec<T>>,
    pub(crate) chi2: T,
    pub(crate) iterations: usize,
    pub(crate) converged: bool,
    pub(crate) cov_ok: bool,
}

/// Runs the minimizer in a transformed space where `Log` parameters are
/// fitted as exponents, then maps estimates and covariance back.
pub(crate) fn run_transformed<T: Real>(
    transforms: &[Transform],
    theta0: &[T],
    n_res: usize,
    weighted: bool,
    res_fn: &dyn Fn(&[T], &mut [T]),
    jac_fn: &dyn Fn(&[T], &mut [T]),
) -> TransformedFit<T> {
    let p = theta0.len();
    let u0: Vec<T> = theta0
        .iter()
        .zip(transforms)
        .map(|(&t, tr)| match tr {
            Transform::Log => t.max(T::of(1e-12)).ln(),
            Transform::Linear => t,
        })
        .collect();
    // Capping the exponent keeps back-transformed parameters inside the
    // normal float range, so Jacobian terms like t / theta^2 stay finite
    // even when the optimizer drives a parameter toward zero.
    let cap = T::max_value().ln() * T::of(0.45);
    let to_theta = |u: &[T]| -> Vec<T> {
        u.iter()
            .zip(transforms)
            .map(|(&v, tr)| match tr {
                Transform::Log => v.min(cap).max(-cap).exp(),
                Transform::Linear => v,
            })
            .collect()
    };
    let lm = LevenbergMarquardt::default();
    let out = lm.minimize(
        n_res,
        &u0,
        |u, r| res_fn(&to_theta(u), r),
        |u, j| {
            let theta = to_theta(u);
            jac_fn(&theta, j);
            for row in 0..n_res {
                for (i, tr) in transforms.iter().enumerate() {
                    if *tr == Transform::Log {
                        j[row * p + i] *= theta[i];
                    }
                }
            }
        },
    );
    let theta = to_theta(&out.params);
    let dof = n_res.saturating_sub(p);
    // Absolute covariance for weighted fits, residual-scaled otherwise.
    let scale2 = if weighted || dof == 0 { T::one() } else { out.chi2 / T::of(dof as f64) };
    let (covariance, uncertainties, cov_ok) = match lm::invert(&out.jtj) {
        Ok(cov_u) => {
            let mut cov = vec![vec![T::zero(); p]; p];
            for i in 0..p {
                for k in 0..p {
                    let si = if transforms[i] == Transform::Log { theta[i] } else { T::one() };
                    let sk = if transforms[k] == Transform::Log { theta[k] } else { T::one() };
                    cov[i][k] = cov_u[i][k] * si * sk * scale2;
                }
            }
            let unc = (0..p).map(|i| cov[i][i].max(T::zero()).sqrt()).collect();
            (cov, unc, true)
        }
        Err(_) => (vec![vec![T::infinity(); p]; p], vec![T::infinity(); p], false),
    };
    TransformedFit {
        theta,
        uncertainties,
        covariance,
        chi2: out.chi2,
        iterations: out.iterations,
        converged: out.converged,
        cov_ok,
    }
}

pub(crate) fn assemble<T: Real>(
    model: &str,
    names: &[&str],
    fit: TransformedFit<T>,
    mut warnings: Vec<String>,
) -> FitResult<T> {
    if !fit.converged {
        warnings.push("did not converge within the iteration budget".into());
    }
    if !fit.cov_ok {
        warnings.push("covariance singular; one or more parameters unidentifiable".into());
    }
    FitResult {
        params: names.iter().map(|n| n.to_string()).zip(fit.theta.clone()).collect(),
        uncertainties: fit.uncertainties,
        residual_norm: fit.chi2.max(T::zero()).sqrt(),
        iterations: fit.iterations,
        converged: fit.converged,
        covariance: fit.covariance,
        warnings,
        model: model.into(),
    }
}

/// Folds a curve into (|lag|, value) pairs sorted by |lag|.
fn sorted_by_abs_lag<T: Real>(lags: &[T], values: &[T]) -> Vec<(T, T)> {
    let mut pts: Vec<(T, T)> = lags.iter().zip(values).map(|(&l, &v)| (l.abs(), v)).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts
}

/// Starting point heuristics for the correlation fit: bunching amplitude
/// from the peak overshoot, the antibunching time from the first crossing
/// of one, and the bunching time from a log-linear tail regression.
fn g2_init<T: Real>(lags: &[T], values: &[T]) -> (T, T, T) {
    let pts = sorted_by_abs_lag(lags, values);
    let max_lag = pts.last().map(|p| p.0).unwrap_or(T::one());
    let peak = pts.iter().map(|p| p.1).fold(T::neg_infinity(), T::max);
    let mut a0 = (peak - T::one()).max(T::of(0.05));

    let mut t_cross = T::zero();
    for &(l, v) in &pts {
        if l > T::zero() && v >= T::one() {
            t_cross = l;
            break;
        }
    }
    let tau1 = if t_cross > T::zero() && a0 > T::of(1e-3) {
        t_cross / ((T::one() + a0) / a0).ln()
    } else {
        // No crossing: treat as a rise to one and take the 63% point.
        let mut t63 = max_lag * T::of(0.05);
        for &(l, v) in &pts {
            if l > T::zero() && v >= T::of(0.632) {
                t63 = l;
                break;
            }
        }
        a0 = T::of(0.05);
        t63
    };

    // Tail regression of ln(g2 - 1) against |lag| over the bunching region.
    let mut sx = T::zero();
    let mut sy = T::zero();
    let mut sxx = T::zero();
    let mut sxy = T::zero();
    let mut n = T::zero();
    for &(l, v) in &pts {
        if l > tau1 * T::of(3.0) && v > T::one() + a0 * T::of(0.05) {
            let y = (v - T::one()).ln();
            sx += l;
            sy += y;
            sxx += l * l;
            sxy += l * y;
            n += T::one();
        }
    }
    let mut tau2 = max_lag * T::of(0.3);
    if n >= T::of(3.0) {
        let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
        if slope < T::zero() {
            tau2 = -slope.recip();
        }
    }
    tau2 = tau2.max(tau1 * T::of(2.0));
    (a0, tau1.max(T::of(1e-6)), tau2)
}

/// Fits the two-exponential correlation model to sampled curve data.
///
/// Parameters are `a`, `tau1`, `tau2`, plus `rho` in the background mode
/// where the model becomes `1 + rho^2 (g2_ideal - 1)`.
pub fn fit_g2_data<T: Real>(
    lags: &[T],
    values: &[T],
    errors: Option<&[T]>,
    init: Option<G2Params<T>>,
    mode: G2FitMode,
) -> Result<FitResult<T>> {
    let n = lags.len();
    if values.len() != n {
        return Err(Error::invalid("values", "length mismatch with lags"));
    }
    if n < 10 {
        return Err(Error::InsufficientData(format!("{n} bins; need at least 10")));
    }
    let sigma = sigma_vector(n, errors)?;
    let weighted = sigma.is_some();
    let sigma = sigma.unwrap_or_else(|| vec![T::one(); n]);
    let (a0, tau1_0, tau2_0) = match init {
        Some(p) => (p.a.max(T::of(1e-6)), p.tau1, p.tau2),
        None => g2_init(lags, values),
    };
    let with_bg = mode == G2FitMode::WithBackground;
    let theta0: Vec<T> = if with_bg {
        let g_min = values.iter().fold(T::infinity(), |m, &v| m.min(v));
        let rho0 = (T::one() - g_min).max(T::of(0.05)).min(T::one()).sqrt();
        vec![a0, tau1_0, tau2_0, rho0]
    } else {
        vec![a0, tau1_0, tau2_0]
    };
    let transforms = if with_bg { vec![Transform::Log; 4] } else { vec![Transform::Log; 3] };
    let p = theta0.len();

    let res_fn = |theta: &[T], r: &mut [T]| {
        let (a, t1, t2) = (theta[0], theta[1], theta[2]);
        for i in 0..n {
            let t = lags[i].abs();
            let bare = T::one() - (T::one() + a) * (-t / t1).exp() + a * (-t / t2).exp();
            let model =
                if with_bg { T::one() + theta[3] * theta[3] * (bare - T::one()) } else { bare };
            r[i] = (model - values[i]) / sigma[i];
        }
    };
    let jac_fn = |theta: &[T], j: &mut [T]| {
        let (a, t1, t2) = (theta[0], theta[1], theta[2]);
        for i in 0..n {
            let t = lags[i].abs();
            let e1 = (-t / t1).exp();
            let e2 = (-t / t2).exp();
            let da = -e1 + e2;
            let dt1 = -(T::one() + a) * e1 * t / (t1 * t1);
            let dt2 = a * e2 * t / (t2 * t2);
            if with_bg {
                let rho = theta[3];
                let r2 = rho * rho;
                let bare = T::one() - (T::one() + a) * e1 + a * e2;
                j[i * p] = r2 * da / sigma[i];
                j[i * p + 1] = r2 * dt1 / sigma[i];
                j[i * p + 2] = r2 * dt2 / sigma[i];
                j[i * p + 3] = T::of(2.0) * rho * (bare - T::one()) / sigma[i];
            } else {
                j[i * p] = da / sigma[i];
                j[i * p + 1] = dt1 / sigma[i];
                j[i * p + 2] = dt2 / sigma[i];
            }
        }
    };

    let fit = run_transformed(&transforms, &theta0, n, weighted, &res_fn, &jac_fn);
    let mut warnings = Vec::new();
    let (a_hat, tau1_hat, tau2_hat) = (fit.theta[0], fit.theta[1], fit.theta[2]);
    if tau2_hat <= tau1_hat {
        warnings.push("tau2 <= tau1 at the optimum; time constants not identifiable as antibunching and bunching".into());
    }
    if a_hat <= T::of(1e-6) {
        warnings.push("bunching amplitude vanishes; tau2 unidentifiable".into());
    }
    if with_bg && fit.theta[3] > T::one() {
        warnings.push("fitted signal fraction exceeds one".into());
    }
    let names: &[&str] =
        if with_bg { &["a", "tau1", "tau2", "rho"] } else { &["a", "tau1", "tau2"] };
    let model = if with_bg { "g2_background" } else { "g2" };
    Ok(assemble(model, names, fit, warnings))
}

/// Fits a correlation curve, weighting each bin by its error bar.
pub fn fit_g2(
    curve: &crate::correlator::G2Curve,
    init: Option<G2Params<f64>>,
    mode: G2FitMode,
) -> Result<FitResult<f64>> {
    curve.validate()?;
    fit_g2_data(&curve.lags, &curve.values, Some(&curve.errors), init, mode)
}

/// Removes background dilution from a measured zero-lag value:
/// `g_ideal(0) = 1 + (g_measured(0) - 1) / rho^2`.
pub fn correct_g2_background<T: Real>(g0_measured: T, rho: T) -> Result<T> {
    if !(rho > T::zero() && rho <= T::one()) {
        return Err(Error::invalid("rho", format!("must be in (0, 1], got {rho}")));
    }
    if !g0_measured.is_finite() || g0_measured < T::zero() {
        return Err(Error::invalid("g0", "must be finite and >= 0"));
    }
    Ok(T::one() + (g0_measured - T::one()) / (rho * rho))
}

/// Fits the saturation hyperbola `I(P) = i_inf P / (P + p_sat)`.
pub fn fit_saturation<T: Real>(points: &[(T, T)], errors: Option<&[T]>) -> Result<FitResult<T>> {
    let n = points.len();
    let mut powers: Vec<T> = points.iter().map(|p| p.0).collect();
    powers.sort_by(|a, b| a.partial_cmp(b).unwrap());
    powers.dedup();
    if powers.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "{} distinct powers; need at least 3",
            powers.len()
        )));
    }
    if points.iter().any(|&(p, _)| !p.is_finite() || p < T::zero()) {
        return Err(Error::invalid("power", "must be finite and >= 0"));
    }
    let sigma = sigma_vector(n, errors)?;
    let weighted = sigma.is_some();
    let sigma = sigma.unwrap_or_else(|| vec![T::one(); n]);

    let mut sorted: Vec<(T, T)> = points.to_vec();
    sorted.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let y_max = sorted.iter().map(|p| p.1).fold(T::neg_infinity(), T::max);
    let y_min = sorted.iter().map(|p| p.1).fold(T::infinity(), T::min);
    let p_max = sorted.last().unwrap().0;
    let mut warnings = Vec::new();
    if y_max - y_min <= y_max.abs() * T::of(1e-12) {
        warnings.push("intensities all equal; saturation power unidentifiable".into());
    }
    // Half-maximum crossing, ties toward the smallest power.
    let mut p_half = p_max * T::of(0.5);
    for &(p, y) in &sorted {
        if y >= y_max * T::of(0.5) && p > T::zero() {
            p_half = p;
            break;
        }
    }
    let i0 = (y_max * (p_max + p_half) / p_max.max(T::of(1e-12))).max(T::of(1e-12));
    let theta0 = vec![i0, p_half.max(T::of(1e-12))];

    let res_fn = |theta: &[T], r: &mut [T]| {
        for (i, &(p, y)) in points.iter().enumerate() {
            r[i] = (theta[0] * p / (p + theta[1]) - y) / sigma[i];
        }
    };
    let jac_fn = |theta: &[T], j: &mut [T]| {
        for (i, &(p, _)) in points.iter().enumerate() {
            let denom = p + theta[1];
            j[i * 2] = p / denom / sigma[i];
            j[i * 2 + 1] = -theta[0] * p / (denom * denom) / sigma[i];
        }
    };
    let fit =
        run_transformed(&[Transform::Log, Transform::Log], &theta0, n, weighted, &res_fn, &jac_fn);
    Ok(assemble("saturation", &["i_inf", "p_sat"], fit, warnings))
}

/// Generic double-exponential decay fit over (time, count) samples.
///
/// Fits `a_fast exp(-t/tau_fast) + a_slow exp(-t/tau_slow) + baseline` to
/// the bins from the histogram peak onward, with Poisson weights. The slow
/// time constant is the emitter lifetime; the fast one absorbs the
/// instrument response, following the usual reporting convention.
pub fn fit_decay_data<T: Real>(times: &[T], counts: &[T]) -> Result<FitResult<T>> {
    if times.len() != counts.len() {
        return Err(Error::invalid("counts", "length mismatch with times"));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("times", "must be strictly increasing"));
    }
    if counts.iter().any(|c| !c.is_finite() || *c < T::zero()) {
        return Err(Error::invalid("counts", "must be finite and >= 0"));
    }
    let peak = counts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let n = times.len() - peak;
    if n < 21 {
        return Err(Error::InsufficientData(format!(
            "{} bins past the peak; need at least 20",
            n.saturating_sub(1)
        )));
    }
    let t0 = times[peak];
    let ts: Vec<T> = times[peak..].iter().map(|&t| t - t0).collect();
    let ys: Vec<T> = counts[peak..].to_vec();
    let sigma: Vec<T> = ys.iter().map(|&y| y.max(T::one()).sqrt()).collect();
    let peak_y = ys[0];
    let dt = ts[1] - ts[0];

    // Baseline from the final stretch; slow component from a log-linear
    // regression over bins that still clear the baseline noise (bins near
    // the baseline would otherwise steepen the slope and inflate the
    // extrapolated amplitude); fast component from the peak excess and
    // its 1/e point.
    let tail_len = (n / 10).max(3);
    let baseline0 = ys[n - tail_len..].iter().copied().sum::<T>() / T::of(tail_len as f64);
    let thresh = ((baseline0.abs() + T::one()).sqrt() * T::of(3.0)).max(peak_y * T::of(1e-3));
    let regress = |range: std::ops::Range<usize>| -> Option<(T, T)> {
        let mut sx = T::zero();
        let mut sy = T::zero();
        let mut sxx = T::zero();
        let mut sxy = T::zero();
        let mut m = T::zero();
        for i in range {
            let v = ys[i] - baseline0;
            if v > thresh {
                let y = v.ln();
                sx += ts[i];
                sy += y;
                sxx += ts[i] * ts[i];
                sxy += ts[i] * y;
                m += T::one();
            }
        }
        if m < T::of(3.0) {
            return None;
        }
        let slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
        let icept = (sy - slope * sx) / m;
        (slope < T::zero()).then(|| (icept.exp(), -slope.recip()))
    };
    let (a_slow0, tau_slow0) =
        regress(n / 5..n).unwrap_or((peak_y * T::of(0.5), ts[n - 1] * T::of(0.3)));
    let slow_at = |i: usize| a_slow0 * (-ts[i] / tau_slow0).exp() + baseline0;
    let a_fast0 = (peak_y - slow_at(0)).max(peak_y * T::of(0.02));
    let inv_e = T::of(std::f64::consts::E).recip();
    let mut tau_fast0 = (tau_slow0 * T::of(0.2)).max(dt * T::of(0.5));
    for i in 0..n {
        if ys[i] - slow_at(i) < a_fast0 * inv_e {
            tau_fast0 = ts[i].max(dt * T::of(0.5));
            break;
        }
    }
    let transforms =
        [Transform::Log, Transform::Log, Transform::Log, Transform::Log, Transform::Linear];

    let res_fn = |theta: &[T], r: &mut [T]| {
        for i in 0..n {
            let model = theta[0] * (-ts[i] / theta[1]).exp()
                + theta[2] * (-ts[i] / theta[3]).exp()
                + theta[4];
            r[i] = (model - ys[i]) / sigma[i];
        }
    };
    let jac_fn = |theta: &[T], j: &mut [T]| {
        for i in 0..n {
            let ef = (-ts[i] / theta[1]).exp();
            let es = (-ts[i] / theta[3]).exp();
            j[i * 5] = ef / sigma[i];
            j[i * 5 + 1] = theta[0] * ef * ts[i] / (theta[1] * theta[1]) / sigma[i];
            j[i * 5 + 2] = es / sigma[i];
            j[i * 5 + 3] = theta[2] * es * ts[i] / (theta[3] * theta[3]) / sigma[i];
            j[i * 5 + 4] = T::one() / sigma[i];
        }
    };

    // The fast time constant is the fragile direction: started too small
    // it degenerates into a one-bin spike the optimizer cannot leave. A
    // few deterministic starts make the joint fit robust to that.
    let mut candidates = vec![tau_fast0];
    for c in [tau_slow0 * T::of(0.05), tau_slow0 * T::of(0.25)] {
        let c = c.max(dt * T::of(0.5));
        if candidates.iter().all(|&t| (t - c).abs() > t.max(c) * T::of(0.2)) {
            candidates.push(c);
        }
    }
    let mut best: Option<TransformedFit<T>> = None;
    for tf in candidates {
        let theta0 = vec![
            a_fast0.max(T::of(1e-6)),
            tf.min(tau_slow0),
            a_slow0.max(T::of(1e-6)),
            tau_slow0.max(T::of(1e-6)),
            baseline0,
        ];
        let trial = run_transformed(&transforms, &theta0, n, true, &res_fn, &jac_fn);
        if best.as_ref().is_none_or(|b| trial.chi2 < b.chi2) {
            best = Some(trial);
        }
    }
    let mut fit = best.unwrap();

    // Keep the naming convention: index 1 fast, index 3 slow.
    if fit.theta[1] > fit.theta[3] {
        fit.theta.swap(0, 2);
        fit.theta.swap(1, 3);
        fit.uncertainties.swap(0, 2);
        fit.uncertainties.swap(1, 3);
        for perm in [(0usize, 2usize), (1, 3)] {
            fit.covariance.swap(perm.0, perm.1);
        }
        for row in fit.covariance.iter_mut() {
            row.swap(0, 2);
            row.swap(1, 3);
        }
    }
    let mut warnings = Vec::new();
    let df = (fit.theta[3] - fit.theta[1]).abs();
    if fit.cov_ok && df < fit.uncertainties[1] + fit.uncertainties[3] {
        warnings.push("fast and slow time constants indistinguishable within uncertainties".into());
    }
    if fit.theta[0] < (fit.theta[0] + fit.theta[2]) * T::of(1e-6) {
        warnings.push("fast component amplitude vanishes; decay is single-exponential".into());
    }
    Ok(assemble(
        "double_exponential",
        &["a_fast", "tau_fast", "a_slow", "tau_slow", "baseline"],
        fit,
        warnings,
    ))
}

/// Fits the post-peak decay of a delay histogram.
pub fn fit_double_exponential(hist: &crate::correlator::TcspcHistogram) -> Result<FitResult<f64>> {
    hist.validate()?;
    let centers = hist.centers();
    let counts: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
    fit_decay_data(&centers, &counts)
}

/// Fits `I(phi) = a + b cos^2(phi - phi0)`; `phi0` is reported in [0, 180).
pub fn fit_polarization<T: Real>(scan: &PolarizationScan<T>) -> Result<FitResult<T>> {
    let n = scan.angles_deg.len();
    if scan.intensities.len() != n {
        return Err(Error::invalid("intensities", "length mismatch with angles"));
    }
    if n < 8 {
        return Err(Error::InsufficientData(format!("{n} angles; need at least 8")));
    }
    let lo = scan.angles_deg.iter().fold(T::infinity(), |m, &a| m.min(a));
    let hi = scan.angles_deg.iter().fold(T::neg_infinity(), |m, &a| m.max(a));
    if hi - lo < T::of(180.0) - T::of(1e-9) {
        return Err(Error::InsufficientData("scan must span at least 180 degrees".into()));
    }
    let sigma = sigma_vector(n, scan.errors.as_deref())?;
    let weighted = sigma.is_some();
    let sigma = sigma.unwrap_or_else(|| vec![T::one(); n]);

    let y_max = scan.intensities.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let y_min = scan.intensities.iter().fold(T::infinity(), |m, &v| m.min(v));
    // Angle at the maximum, ties toward the smallest angle.
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scan.angles_deg[a].partial_cmp(&scan.angles_deg[b]).unwrap());
    let mut phi0_init = scan.angles_deg[order[0]];
    let mut best = T::neg_infinity();
    for &i in &order {
        if scan.intensities[i] > best {
            best = scan.intensities[i];
            phi0_init = scan.angles_deg[i];
        }
    }
    let mut warnings = Vec::new();
    if y_max - y_min <= y_max.abs() * T::of(1e-12) {
        warnings.push("scan is flat; amplitude near zero and axis angle unidentifiable".into());
    }
    let theta0 = vec![
        y_min.max(y_max * T::of(1e-6)).max(T::of(1e-12)),
        (y_max - y_min).max(y_max * T::of(1e-6)).max(T::of(1e-12)),
        phi0_init,
    ];
    let deg = T::of(std::f64::consts::PI / 180.0);

    let res_fn = |theta: &[T], r: &mut [T]| {
        for i in 0..n {
            let x = (scan.angles_deg[i] - theta[2]) * deg;
            let c = x.cos();
            r[i] = (theta[0] + theta[1] * c * c - scan.intensities[i]) / sigma[i];
        }
    };
    let jac_fn = |theta: &[T], j: &mut [T]| {
        for i in 0..n {
            let x = (scan.angles_deg[i] - theta[2]) * deg;
            let c = x.cos();
            j[i * 3] = T::one() / sigma[i];
            j[i * 3 + 1] = c * c / sigma[i];
            j[i * 3 + 2] = theta[1] * (T::of(2.0) * x).sin() * deg / sigma[i];
        }
    };
    let transforms = [Transform::Log, Transform::Log, Transform::Linear];
    let mut fit = run_transformed(&transforms, &theta0, n, weighted, &res_fn, &jac_fn);
    // Dipole axes are lines, not directions.
    fit.theta[2] = fit.theta[2] % T::of(180.0);
    if fit.theta[2] < T::zero() {
        fit.theta[2] += T::of(180.0);
    }
    if fit.theta[1] < (fit.theta[0] + fit.theta[1]).abs() * T::of(1e-6) {
        warnings.push("amplitude vanishes; axis angle unidentifiable".into());
    }
    Ok(assemble("polarization", &["a", "b", "phi0"], fit, warnings))
}
