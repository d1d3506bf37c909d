//! Emitter-level analysis: inverting power-dependent correlation fits into
//! rate coefficients, polarization visibility and dipole orientation, and
//! ensemble statistics across many emitters.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{assemble, run_transformed, FitResult, Transform};
use crate::kinetics::{self, G2Params, RateModel};
use crate::scalar::Real;

/// Correlation-fit observables at one excitation power: the fast and slow
/// decay rates `lambda1 >= lambda2` and the bunching amplitude `a`, with
/// their one-sigma uncertainties (zero when unknown).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerSeriesPoint<T> {
    /// Excitation power in microwatts.
    pub power: T,
    /// Fast decay rate in inverse nanoseconds.
    pub lambda1: T,
    /// Slow decay rate in inverse nanoseconds.
    pub lambda2: T,
    /// Bunching amplitude.
    pub a: T,
    pub lambda1_err: T,
    pub lambda2_err: T,
    pub a_err: T,
}

impl<T: Real> PowerSeriesPoint<T> {
    /// Point with no uncertainty information, from correlation parameters.
    pub fn from_g2(power: T, params: &G2Params<T>) -> Self {
        PowerSeriesPoint {
            power,
            lambda1: params.tau1.recip(),
            lambda2: params.tau2.recip(),
            a: params.a,
            lambda1_err: T::zero(),
            lambda2_err: T::zero(),
            a_err: T::zero(),
        }
    }

    /// Checks the field invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.power.is_finite() || self.power <= T::zero() {
            return Err(Error::invalid("power", format!("must be > 0, got {}", self.power)));
        }
        if !self.lambda2.is_finite() || self.lambda2 <= T::zero() {
            return Err(Error::invalid("lambda2", format!("must be > 0, got {}", self.lambda2)));
        }
        if !self.lambda1.is_finite() || self.lambda1 < self.lambda2 {
            return Err(Error::invalid(
                "lambda1",
                format!("must be >= lambda2, got {}", self.lambda1),
            ));
        }
        if !self.a.is_finite() || self.a < T::zero() {
            return Err(Error::invalid("a", format!("must be >= 0, got {}", self.a)));
        }
        for (name, e) in [
            ("lambda1_err", self.lambda1_err),
            ("lambda2_err", self.lambda2_err),
            ("a_err", self.a_err),
        ] {
            if !e.is_finite() || e < T::zero() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {e}")));
            }
        }
        Ok(())
    }
}

/// How the deshelving rate depends on excitation power.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShelvingMode {
    /// Deshelving rate constant in power; `beta` pinned to zero.
    PowerIndependent,
    /// Deshelving rate grows linearly with power; `beta` fitted.
    PowerDependent,
    /// Fit both and keep the extra parameter only when an F-test on the
    /// residuals justifies it. A convenience heuristic: the physically
    /// informed choice should be made per emitter.
    Auto,
}

/// Rate coefficients recovered from a power series, with fit diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateExtraction<T> {
    pub model: RateModel<T>,
    pub fit: FitResult<T>,
    /// Mode actually fitted; `Auto` resolves to one of the concrete modes.
    pub mode: ShelvingMode,
}

/// Recovers `(k21, k23, k31_0, alpha[, beta])` from correlation observables
/// measured at several powers.
///
/// Joint weighted least squares: every point contributes residuals for all
/// three observables, predicted from the closed-form kinetics at its power.
/// Weighted by the point uncertainties when all of them are positive,
/// unweighted otherwise.
pub fn extract_rates<T: Real>(
    series: &[PowerSeriesPoint<T>],
    mode: ShelvingMode,
) -> Result<RateExtraction<T>> {
    for point in series {
        point.validate()?;
    }
    if series.windows(2).any(|w| w[1].power <= w[0].power) {
        return Err(Error::invalid("series", "must be ordered by strictly increasing power"));
    }
    let n = series.len();
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} powers; need at least 3")));
    }
    match mode {
        ShelvingMode::PowerIndependent => extract_with(series, false),
        ShelvingMode::PowerDependent => extract_with(series, true),
        ShelvingMode::Auto => {
            let indep = extract_with(series, false)?;
            let dep = extract_with(series, true)?;
            let chi_i = (indep.fit.residual_norm * indep.fit.residual_norm).to_f64_lossy();
            let chi_d = (dep.fit.residual_norm * dep.fit.residual_norm).to_f64_lossy();
            let d2 = (3 * n - 5) as f64;
            // Both models explaining the data to numerical precision is
            // not evidence for the extra parameter.
            let floor = 1e-12 * (3 * n) as f64;
            let (mut chosen, f, p_val) = if chi_i <= floor || chi_d <= 0.0 {
                (indep, 0.0, 1.0)
            } else {
                let f = (chi_i - chi_d).max(0.0) / (chi_d / d2);
                let p_val = f_test_p_value(f, 1.0, d2);
                if p_val < 0.05 {
                    (dep, f, p_val)
                } else {
                    (indep, f, p_val)
                }
            };
            chosen.fit.warnings.push(format!(
                "auto shelving mode selected {} (F = {f:.3}, p = {p_val:.4})",
                match chosen.mode {
                    ShelvingMode::PowerDependent => "power-dependent",
                    _ => "power-independent",
                }
            ));
            Ok(chosen)
        }
    }
}

fn extract_with<T: Real>(
    series: &[PowerSeriesPoint<T>],
    with_beta: bool,
) -> Result<RateExtraction<T>> {
    let n = series.len();
    let p = if with_beta { 5 } else { 4 };
    if 3 * n <= p {
        return Err(Error::InsufficientData(format!(
            "{n} points give {} residuals for {p} parameters",
            3 * n
        )));
    }
    let weighted = series
        .iter()
        .all(|s| s.lambda1_err > T::zero() && s.lambda2_err > T::zero() && s.a_err > T::zero());
    let mixed = !weighted
        && series
            .iter()
            .any(|s| s.lambda1_err > T::zero() || s.lambda2_err > T::zero() || s.a_err > T::zero());
    let sigma: Vec<[T; 3]> = series
        .iter()
        .map(|s| {
            if weighted {
                [s.lambda1_err, s.lambda2_err, s.a_err]
            } else {
                [T::one(), T::one(), T::one()]
            }
        })
        .collect();

    let theta0 = initial_rates(series, with_beta);
    let transforms = vec![Transform::Log; p];
    let res_fn = |theta: &[T], r: &mut [T]| {
        let beta = if with_beta { theta[4] } else { T::zero() };
        for (i, s) in series.iter().enumerate() {
            let k12 = theta[3] * s.power;
            let k31 = theta[2] * (T::one() + beta * s.power);
            let (l1, l2, a) = kinetics::eigen_triple(k12, theta[0], theta[1], k31);
            r[3 * i] = (l1 - s.lambda1) / sigma[i][0];
            r[3 * i + 1] = (l2 - s.lambda2) / sigma[i][1];
            r[3 * i + 2] = (a - s.a) / sigma[i][2];
        }
    };
    // Central finite differences; the eigensystem derivatives are not
    // worth writing out by hand for a handful of parameters.
    let jac_fn = |theta: &[T], j: &mut [T]| {
        let n_res = 3 * n;
        let mut plus = vec![T::zero(); n_res];
        let mut minus = vec![T::zero(); n_res];
        let mut probe = theta.to_vec();
        for col in 0..p {
            let h = theta[col].abs().max(T::of(1e-12)) * T::of(1e-6);
            probe[col] = theta[col] + h;
            res_fn(&probe, &mut plus);
            probe[col] = theta[col] - h;
            res_fn(&probe, &mut minus);
            probe[col] = theta[col];
            for row in 0..n_res {
                j[row * p + col] = (plus[row] - minus[row]) / (h + h);
            }
        }
    };
    let fit = run_transformed(&transforms, &theta0[..p], 3 * n, weighted, &res_fn, &jac_fn);

    let mut warnings = Vec::new();
    if mixed {
        warnings.push("incomplete uncertainties; fit performed unweighted".into());
    }
    let names: &[&str] = if with_beta {
        &["k21", "k23", "k31_0", "alpha", "beta"]
    } else {
        &["k21", "k23", "k31_0", "alpha"]
    };
    for (name, &v) in names.iter().zip(&fit.theta) {
        if v < T::of(1e-10) {
            warnings.push(format!("{name} collapsed toward zero; model likely over-parameterized"));
        }
    }
    let beta = if with_beta { fit.theta[4] } else { T::zero() };
    let model = RateModel::new(fit.theta[0], fit.theta[1], fit.theta[2], fit.theta[3], beta)?;
    let mode =
        if with_beta { ShelvingMode::PowerDependent } else { ShelvingMode::PowerIndependent };
    let model_name = if with_beta {
        "rate_extraction_power_dependent"
    } else {
        "rate_extraction_power_independent"
    };
    Ok(RateExtraction { model, fit: assemble(model_name, names, fit, warnings), mode })
}

/// Starting point from inverting each point separately and regressing the
/// pieces against power: `lambda1 + lambda2 - k31 = k21 + k23 + alpha P`,
/// `lambda1 lambda2 - k31 (k21 + k23 + alpha P) = alpha k23 P`, and
/// `k31 = k31_0 (1 + beta P)`.
fn initial_rates<T: Real>(series: &[PowerSeriesPoint<T>], with_beta: bool) -> [T; 5] {
    let tiny = T::of(1e-12);
    let mut ps = Vec::new();
    let mut ks = Vec::new();
    let mut k31s = Vec::new();
    let mut pis = Vec::new();
    for s in series {
        let denom = s.lambda1 + s.a * (s.lambda1 - s.lambda2);
        if denom <= T::zero() {
            continue;
        }
        let k31 = s.lambda1 * s.lambda2 / denom;
        let k = s.lambda1 + s.lambda2 - k31;
        if !(k31 > T::zero() && k > T::zero()) {
            continue;
        }
        ps.push(s.power);
        ks.push(k);
        k31s.push(k31);
        pis.push((s.lambda1 * s.lambda2 - k31 * k).max(tiny));
    }
    let mean = |v: &[T]| v.iter().copied().sum::<T>() / T::of(v.len().max(1) as f64);
    if ps.len() < 2 {
        // Inversion failed nearly everywhere; fall back to magnitudes.
        let l1 = mean(&series.iter().map(|s| s.lambda1).collect::<Vec<_>>());
        let l2 = mean(&series.iter().map(|s| s.lambda2).collect::<Vec<_>>());
        let pbar = mean(&series.iter().map(|s| s.power).collect::<Vec<_>>());
        let half = l1 * T::of(0.5);
        return [half, half * T::of(0.1), l2.max(tiny), (l1 / pbar).max(tiny), tiny];
    }
    let lin = |xs: &[T], ys: &[T]| -> (T, T) {
        let m = T::of(xs.len() as f64);
        let sx: T = xs.iter().copied().sum();
        let sy: T = ys.iter().copied().sum();
        let sxx: T = xs.iter().map(|&x| x * x).sum();
        let sxy: T = xs.iter().zip(ys).map(|(&x, &y)| x * y).sum();
        let det = m * sxx - sx * sx;
        if det <= T::zero() {
            return (mean(ys), T::zero());
        }
        let slope = (m * sxy - sx * sy) / det;
        ((sy - slope * sx) / m, slope)
    };
    let k_mean = mean(&ks);
    let p_mean = mean(&ps);
    let (k_icept, k_slope) = lin(&ps, &ks);
    let alpha = if k_slope > T::zero() { k_slope } else { k_mean / p_mean * T::of(0.5) }.max(tiny);
    let base = k_icept.max(k_mean * T::of(0.05)).max(tiny);
    let sum_pp: T = ps.iter().map(|&x| x * x).sum();
    let pi_slope: T = ps.iter().zip(&pis).map(|(&x, &y)| x * y).sum::<T>() / sum_pp;
    let k23 = (pi_slope / alpha).max(base * T::of(0.01)).min(base * T::of(0.95));
    let k21 = (base - k23).max(base * T::of(0.05));
    let k31_mean = mean(&k31s);
    if with_beta {
        let (c0, c1) = lin(&ps, &k31s);
        let k31_0 = c0.max(k31_mean * T::of(0.1)).max(tiny);
        let beta = if c1 > T::zero() {
            c1 / k31_0
        } else {
            T::of(1e-4) / ps.last().copied().unwrap_or(T::one())
        };
        [k21, k23, k31_0, alpha, beta.max(tiny)]
    } else {
        [k21, k23, k31_mean.max(tiny), alpha, tiny]
    }
}

/// Right tail probability of the F distribution, via the regularized
/// incomplete beta function.
fn f_test_p_value(f: f64, d1: f64, d2: f64) -> f64 {
    if f <= 0.0 {
        return 1.0;
    }
    incomplete_beta(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * f))
}

/// Lanczos approximation of `ln Gamma(x)` for x > 0.
fn ln_gamma(x: f64) -> f64 {
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection keeps the approximation in its accurate half-plane.
        return (std::f64::consts::PI / (std::f64::consts::PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (x + i as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}

/// Regularized incomplete beta `I_x(a, b)` by continued fraction.
fn incomplete_beta(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let front =
        (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln()).exp();
    // Lentz evaluation converges fastest below the distribution mean.
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_continued_fraction(a, b, x) / a
    } else {
        1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b
    }
}

fn beta_continued_fraction(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-30;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=200 {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 3e-14 {
            break;
        }
    }
    h
}

/// Excited-state and metastable-state lifetimes of a rate model, in ns.
pub fn derive_lifetimes<T: Real>(model: &RateModel<T>) -> Result<(T, T)> {
    Ok((model.excited_state_lifetime()?, model.metastable_lifetime()?))
}

/// Intensity contrast `(i_max - i_min) / (i_max + i_min)`.
pub fn visibility<T: Real>(i_max: T, i_min: T) -> Result<T> {
    if !i_max.is_finite() || !i_min.is_finite() || i_min < T::zero() || i_max < i_min {
        return Err(Error::invalid("intensities", "need i_max >= i_min >= 0"));
    }
    if i_max <= T::zero() {
        return Err(Error::invalid("intensities", "both zero"));
    }
    Ok((i_max - i_min) / (i_max + i_min))
}

/// Fitted polarization response `I(phi) = a + b cos^2(phi - phi0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolarizationParams<T> {
    /// Unpolarized floor.
    pub a: T,
    /// Polarized amplitude.
    pub b: T,
    /// Response axis in degrees.
    pub phi0_deg: T,
}

impl<T: Real> PolarizationParams<T> {
    /// Extracts `(a, b, phi0)` from a polarization fit result.
    pub fn from_fit(fit: &FitResult<T>) -> Option<Self> {
        Some(PolarizationParams {
            a: fit.param("a")?,
            b: fit.param("b")?,
            phi0_deg: fit.param("phi0")?,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("a", self.a), ("b", self.b)] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if !self.phi0_deg.is_finite() {
            return Err(Error::invalid("phi0_deg", "must be finite"));
        }
        Ok(())
    }
}

/// Polarization contrast of one scan.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisibilityResult<T> {
    pub visibility: T,
    pub i_max: T,
    pub i_min: T,
    /// Response axis in degrees, reduced mod 180.
    pub axis_angle_deg: T,
}

impl<T: Real> VisibilityResult<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.i_min >= T::zero() && self.i_max >= self.i_min) {
            return Err(Error::invalid("i_max/i_min", "need i_max >= i_min >= 0"));
        }
        if !(self.visibility >= T::zero() && self.visibility <= T::one()) {
            return Err(Error::invalid("visibility", "must lie in [0, 1]"));
        }
        if !(self.axis_angle_deg >= T::zero() && self.axis_angle_deg < T::of(180.0)) {
            return Err(Error::invalid("axis_angle_deg", "must lie in [0, 180)"));
        }
        Ok(())
    }
}

/// Visibility of a fitted response: `i_max = a + b` on the axis,
/// `i_min = a` across it, so the contrast reduces to `b / (2a + b)`.
pub fn visibility_from_fit<T: Real>(params: &PolarizationParams<T>) -> Result<VisibilityResult<T>> {
    params.validate()?;
    if params.a + params.b <= T::zero() {
        return Err(Error::invalid("params", "a and b both zero"));
    }
    let mut axis = params.phi0_deg % T::of(180.0);
    if axis < T::zero() {
        axis += T::of(180.0);
    }
    Ok(VisibilityResult {
        visibility: params.b / (params.a + params.a + params.b),
        i_max: params.a + params.b,
        i_min: params.a,
        axis_angle_deg: axis,
    })
}

/// Angle-difference conventions for comparing two dipole axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AngleConvention {
    /// Signed difference in (-180, 180].
    Raw,
    /// Wrapped to (-90, 90], respecting the mod-180 symmetry of an axis.
    Folded,
}

/// Difference between absorption and emission axes in degrees.
pub fn dipole_misalignment<T: Real>(
    absorption_deg: T,
    emission_deg: T,
    convention: AngleConvention,
) -> T {
    let full = T::of(360.0);
    let mut d = absorption_deg - emission_deg;
    d -= (d / full).floor() * full;
    if d > T::of(180.0) {
        d -= full;
    }
    match convention {
        AngleConvention::Raw => d,
        AngleConvention::Folded => {
            let half = T::of(180.0);
            let mut m = d - (d / half).floor() * half;
            if m > T::of(90.0) {
                m -= half;
            }
            m
        }
    }
}

/// Sample statistics and a fixed-width histogram of one ensemble quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats<T> {
    pub mean: T,
    /// Sample standard deviation (n - 1 convention).
    pub std_dev: T,
    /// Bin edges, `counts.len() + 1` of them, aligned to bin-width multiples.
    pub bin_edges: Vec<T>,
    pub counts: Vec<u64>,
}

/// Mean, sample standard deviation and histogram of `values`.
pub fn ensemble_stats<T: Real>(values: &[T], bin_width: T) -> Result<EnsembleStats<T>> {
    if values.len() < 2 {
        return Err(Error::InsufficientData(format!("{} values; need at least 2", values.len())));
    }
    if !bin_width.is_finite() || bin_width <= T::zero() {
        return Err(Error::invalid("bin_width", format!("must be > 0, got {bin_width}")));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values", "must be finite"));
    }
    let n = T::of(values.len() as f64);
    let mean = values.iter().copied().sum::<T>() / n;
    let ss: T = values.iter().map(|&v| (v - mean) * (v - mean)).sum();
    let std_dev = (ss / (n - T::one())).sqrt();

    let lo = values.iter().copied().fold(T::infinity(), T::min);
    let hi = values.iter().copied().fold(T::neg_infinity(), T::max);
    let mut start = (lo / bin_width).floor() * bin_width;
    // Floating floor can land one step high (for example 1.7 / 0.05
    // evaluating just above 34); the histogram must begin at or below
    // the smallest value.
    if start > lo {
        start -= bin_width;
    }
    let n_bins = (((hi - start) / bin_width).floor().to_f64_lossy().max(0.0) as usize) + 1;
    let mut counts = vec![0u64; n_bins];
    for &v in values {
        let idx =
            ((((v - start) / bin_width).floor().to_f64_lossy().max(0.0)) as usize).min(n_bins - 1);
        counts[idx] += 1;
    }
    let bin_edges = (0..=n_bins).map(|i| start + bin_width * T::of(i as f64)).collect();
    Ok(EnsembleStats { mean, std_dev, bin_edges, counts })
}

/// Measured linewidth over the lifetime-limited linewidth; quantifies how
/// far spectral diffusion broadens the line beyond the transform limit.
pub fn linewidth_ratio<T: Real>(measured_fwhm_mev: T, lifetime_ns: T) -> Result<T> {
    if !measured_fwhm_mev.is_finite() || measured_fwhm_mev <= T::zero() {
        return Err(Error::invalid("measured_fwhm_mev", "must be > 0"));
    }
    let limit_uev = kinetics::transform_limited_linewidth(lifetime_ns)?;
    Ok(measured_fwhm_mev * T::of(1e3) / limit_uev)
}

/// Full per-emitter summary joining spectral, kinetic and polarization
/// results. Built through [`build_report`] so the derived fields are
/// consistent by construction; [`EmitterReport::validate`] re-checks them
/// for reports coming from serialized data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterReport<T> {
    pub label: String,
    pub zpl_energy_ev: T,
    pub fwhm_mev: T,
    /// Fitted correlation parameters per excitation power (microwatts).
    pub g2_by_power: Vec<(T, G2Params<T>)>,
    pub model: RateModel<T>,
    pub excited_lifetime_ns: T,
    pub metastable_lifetime_ns: T,
    /// Lifetime-limited linewidth in microelectronvolts.
    pub transform_limit_uev: T,
    /// Absent when no absorption scan was taken; never defaulted.
    pub absorption: Option<VisibilityResult<T>>,
    /// Absent when no emission scan was taken; never defaulted.
    pub emission: Option<VisibilityResult<T>>,
    /// Raw-convention axis difference; present only with both scans.
    pub misalignment_deg: Option<T>,
}

impl<T: Real> EmitterReport<T> {
    /// Checks cross-field consistency: the derived quantities must match a
    /// recomputation from the rate model and the polarization blocks.
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        for (power, params) in &self.g2_by_power {
            if !power.is_finite() || *power <= T::zero() {
                return Err(Error::invalid("g2_by_power", "powers must be > 0"));
            }
            params.validate()?;
        }
        if !self.zpl_energy_ev.is_finite() || self.zpl_energy_ev <= T::zero() {
            return Err(Error::invalid("zpl_energy_ev", "must be > 0"));
        }
        if !self.fwhm_mev.is_finite() || self.fwhm_mev <= T::zero() {
            return Err(Error::invalid("fwhm_mev", "must be > 0"));
        }
        let (tau2, tau3) = derive_lifetimes(&self.model)?;
        let close = |x: T, y: T| (x - y).abs() <= y.abs() * T::of(1e-9);
        if !close(self.excited_lifetime_ns, tau2) || !close(self.metastable_lifetime_ns, tau3) {
            return Err(Error::InconsistentReport("lifetimes do not match the rate model".into()));
        }
        let limit = kinetics::transform_limited_linewidth(tau2)?;
        if !close(self.transform_limit_uev, limit) {
            return Err(Error::InconsistentReport(
                "transform-limited linewidth does not match the rate model".into(),
            ));
        }
        if let Some(v) = &self.absorption {
            v.validate()?;
        }
        if let Some(v) = &self.emission {
            v.validate()?;
        }
        match (&self.absorption, &self.emission, self.misalignment_deg) {
            (Some(abs), Some(emi), Some(mis)) => {
                let expect = dipole_misalignment(
                    abs.axis_angle_deg,
                    emi.axis_angle_deg,
                    AngleConvention::Raw,
                );
                if (mis - expect).abs() > T::of(1e-9) {
                    return Err(Error::InconsistentReport(
                        "misalignment does not match the polarization axes".into(),
                    ));
                }
            }
            (_, _, None) => {}
            _ => {
                return Err(Error::InconsistentReport(
                    "misalignment present without both polarization scans".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Assembles a consistent report; lifetimes, the transform limit and the
/// axis misalignment are derived here rather than passed in.
pub fn build_report<T: Real>(
    label: &str,
    zpl_energy_ev: T,
    fwhm_mev: T,
    g2_by_power: Vec<(T, G2Params<T>)>,
    model: RateModel<T>,
    absorption: Option<VisibilityResult<T>>,
    emission: Option<VisibilityResult<T>>,
) -> Result<EmitterReport<T>> {
    let (excited_lifetime_ns, metastable_lifetime_ns) = derive_lifetimes(&model)?;
    let transform_limit_uev = kinetics::transform_limited_linewidth(excited_lifetime_ns)?;
    let misalignment_deg = match (&absorption, &emission) {
        (Some(a), Some(e)) => {
            Some(dipole_misalignment(a.axis_angle_deg, e.axis_angle_deg, AngleConvention::Raw))
        }
        _ => None,
    };
    let report = EmitterReport {
        label: label.to_string(),
        zpl_energy_ev,
        fwhm_mev,
        g2_by_power,
        model,
        excited_lifetime_ns,
        metastable_lifetime_ns,
        transform_limit_uev,
        absorption,
        emission,
        misalignment_deg,
    };
    report.validate()?;
    Ok(report)
}
