//! Closed-form three-level transition kinetics.
//!
//! The model has a ground state |1>, a radiative excited state |2> and a
//! metastable shelving state |3>. Pumping |1>->|2> scales linearly with
//! excitation power, radiative decay |2>->|1> produces the detected photons,
//! shelving |2>->|3> interrupts emission and deshelving |3>->|1> restores
//! it, optionally power-assisted. Units are fixed across the crate: time in
//! ns, rates in 1/ns, power in uW, linewidths in ueV.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Reduced Planck constant in ueV ns.
pub const HBAR_UEV_NS: f64 = 0.6582119569;

/// Power-law rate coefficients of the three-level emitter.
///
/// The pump rate is `k12(P) = alpha * P` and the deshelving rate is
/// `k31(P) = k31_0 * (1 + beta * P)`; `k21` and `k23` do not depend on
/// power. A power-independent shelving state is expressed as `beta = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateModel<T> {
    /// Radiative decay rate |2> -> |1> (1/ns).
    pub k21: T,
    /// Shelving rate |2> -> |3> (1/ns).
    pub k23: T,
    /// Zero-power deshelving rate |3> -> |1> (1/ns).
    pub k31_0: T,
    /// Pump coefficient (1/ns per uW).
    pub alpha: T,
    /// Deshelving power coefficient (1/uW).
    pub beta: T,
}

/// Transition rates at one fixed excitation power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InstantRates<T> {
    pub k12: T,
    pub k21: T,
    pub k23: T,
    pub k31: T,
}

/// Parameters of the two-exponential correlation function
/// `g2(tau) = 1 - (1 + a) exp(-|tau|/tau1) + a exp(-|tau|/tau2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct G2Params<T> {
    /// Bunching amplitude (dimensionless, >= 0).
    pub a: T,
    /// Antibunching time constant (ns); tau1 = 1/lambda1.
    pub tau1: T,
    /// Bunching time constant (ns); tau2 = 1/lambda2 >= tau1.
    pub tau2: T,
}

/// Steady-state occupation probabilities of the three levels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Populations<T> {
    pub p1: T,
    pub p2: T,
    pub p3: T,
}

impl<T: Real> RateModel<T> {
    /// Validates and builds a rate model; every coefficient must be finite
    /// and non-negative, and the radiative rate strictly positive.
    pub fn new(k21: T, k23: T, k31_0: T, alpha: T, beta: T) -> Result<Self> {
        let model = RateModel { k21, k23, k31_0, alpha, beta };
        model.validate()?;
        Ok(model)
    }

    /// Checks the field invariants, for values built directly or deserialized.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("k21", self.k21),
            ("k23", self.k23),
            ("k31_0", self.k31_0),
            ("alpha", self.alpha),
            ("beta", self.beta),
        ] {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        if self.k21 <= T::zero() {
            return Err(Error::invalid("k21", "radiative rate must be > 0"));
        }
        Ok(())
    }

    /// Instantaneous rates at the given excitation power (uW).
    pub fn rates_at_power(&self, power: T) -> Result<InstantRates<T>> {
        if !power.is_finite() || power < T::zero() {
            return Err(Error::invalid("power", format!("must be finite and >= 0, got {power}")));
        }
        Ok(InstantRates {
            k12: self.alpha * power,
            k21: self.k21,
            k23: self.k23,
            k31: self.k31_0 * (T::one() + self.beta * power),
        })
    }

    /// Excited-state lifetime 1/(k21 + k23) in ns.
    pub fn excited_state_lifetime(&self) -> Result<T> {
        let total = self.k21 + self.k23;
        if total <= T::zero() {
            return Err(Error::invalid("k21 + k23", "total decay rate must be > 0"));
        }
        Ok(total.recip())
    }

    /// Metastable-state lifetime 1/k31_0 in ns (zero-power deshelving).
    pub fn metastable_lifetime(&self) -> Result<T> {
        if self.k31_0 <= T::zero() {
            return Err(Error::invalid("k31_0", "deshelving rate must be > 0"));
        }
        Ok(self.k31_0.recip())
    }

    /// Detected photon rate eta * k21 * p2(P) in counts per second.
    pub fn predicted_intensity(&self, power: T, efficiency: T) -> Result<T> {
        if efficiency <= T::zero() || efficiency > T::one() {
            return Err(Error::invalid(
                "efficiency",
                format!("must be in (0, 1], got {efficiency}"),
            ));
        }
        if power == T::zero() {
            return Ok(T::zero());
        }
        let p2 = self.rates_at_power(power)?.steady_state()?.p2;
        Ok(efficiency * self.k21 * p2 * T::of(1e9))
    }
}

impl<T: Real> InstantRates<T> {
    /// Validates rate invariants: all finite and non-negative.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in
            [("k12", self.k12), ("k21", self.k21), ("k23", self.k23), ("k31", self.k31)]
        {
            if !v.is_finite() || v < T::zero() {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }

    /// Unique stationary point of the rate equations.
    ///
    /// Requires pumping, radiative decay and (when shelving is active)
    /// deshelving; with `k31 = 0` and `k23 > 0` every trajectory ends in
    /// |3> and no stationary emission exists.
    pub fn steady_state(&self) -> Result<Populations<T>> {
        self.validate()?;
        if self.k12 <= T::zero() {
            return Err(Error::invalid("k12", "pump rate must be > 0 for a steady state"));
        }
        if self.k21 <= T::zero() {
            return Err(Error::invalid("k21", "radiative rate must be > 0"));
        }
        if self.k23 == T::zero() {
            // Two-level limit; |3> is never populated regardless of k31.
            let p2 = self.k12 / (self.k12 + self.k21);
            return Ok(Populations { p1: T::one() - p2, p2, p3: T::zero() });
        }
        if self.k31 <= T::zero() {
            return Err(Error::ShelvedPopulation);
        }
        // Balance equations: k12 p1 = (k21 + k23) p2 and k23 p2 = k31 p3.
        let denom = self.k31 * (self.k12 + self.k21 + self.k23) + self.k12 * self.k23;
        let p1 = self.k31 * (self.k21 + self.k23) / denom;
        let p2 = self.k12 * self.k31 / denom;
        let p3 = self.k12 * self.k23 / denom;
        Ok(Populations { p1, p2, p3 })
    }

    /// Closed-form correlation parameters of the three-level dynamics.
    ///
    /// Solves the reduced 2x2 system for (p2, p3) started from the ground
    /// state after a detection. The decay rates are the eigenvalues
    /// `lambda1 >= lambda2` of the rate matrix, with
    /// `lambda1 + lambda2 = k12 + k21 + k23 + k31` and
    /// `lambda1 * lambda2 = k31 (k12 + k21 + k23) + k12 k23`,
    /// and the bunching amplitude follows from the eigenvector expansion:
    /// `a = lambda1 (lambda2 - k31) / (k31 (lambda1 - lambda2))`.
    pub fn analytic_g2(&self) -> Result<G2Params<T>> {
        self.validate()?;
        if self.k12 <= T::zero() {
            return Err(Error::invalid("k12", "pump rate must be > 0 for a correlation"));
        }
        if self.k21 <= T::zero() {
            return Err(Error::invalid("k21", "radiative rate must be > 0"));
        }
        let k = self.k12 + self.k21 + self.k23;
        if self.k23 == T::zero() {
            // Two-level limit: single decay rate k, no bunching term.
            let tau1 = k.recip();
            let tau2 = if self.k31 > T::zero() && self.k31 <= k { self.k31.recip() } else { tau1 };
            return Ok(G2Params { a: T::zero(), tau1, tau2 });
        }
        if self.k31 <= T::zero() {
            return Err(Error::ShelvedPopulation);
        }
        let s = k + self.k31;
        let q = self.k31 * k + self.k12 * self.k23;
        let disc = s * s - T::of(4.0) * q;
        if disc < T::of(1e-14) * s * s {
            return Err(Error::DegenerateSpectrum);
        }
        let lambda1 = (s + disc.sqrt()) * T::of(0.5);
        // The subtractive root would cancel badly when q << s^2.
        let lambda2 = q / lambda1;
        let a = lambda1 * (lambda2 - self.k31) / (self.k31 * (lambda1 - lambda2));
        if a < T::zero() {
            // Deshelving outruns the antibunching scale (k31 > lambda1); the
            // curve has no bunching shoulder and the a >= 0 form is invalid.
            return Err(Error::InvertedKinetics);
        }
        Ok(G2Params { a, tau1: lambda1.recip(), tau2: lambda2.recip() })
    }

    /// Reinterprets this rate set as a power-law model anchored at `power`,
    /// with `alpha = k12 / power` and a power-independent shelving state.
    pub fn into_model(self, power: T) -> Result<RateModel<T>> {
        if power <= T::zero() {
            return Err(Error::invalid("power", "anchor power must be > 0"));
        }
        RateModel::new(self.k21, self.k23, self.k31, self.k12 / power, T::zero())
    }
}

/// Reconstructs a rate set reproducing the given correlation parameters.
///
/// The map from four rates to (a, tau1, tau2) leaves one degree of freedom;
/// `k12` selects it and defaults to half the total depopulation rate of the
/// radiative manifold. Fails when the requested split leaves no room for a
/// positive radiative rate.
pub fn rates_matching_g2<T: Real>(params: &G2Params<T>, k12: Option<T>) -> Result<InstantRates<T>> {
    params.validate()?;
    let lambda1 = params.tau1.recip();
    let lambda2 = params.tau2.recip();
    let k31 = lambda1 * lambda2 / (lambda1 + params.a * (lambda1 - lambda2));
    let k = lambda1 + lambda2 - k31;
    // k12 k23 from the determinant identity.
    let pair = lambda1 * lambda2 - k31 * k;
    if k <= T::zero() || pair < T::zero() {
        return Err(Error::invalid("params", "no non-negative rate set matches"));
    }
    let k12 = k12.unwrap_or(k * T::of(0.5));
    if k12 <= T::zero() || k12 >= k {
        return Err(Error::invalid("k12", format!("must lie strictly inside (0, {k})")));
    }
    let k23 = pair / k12;
    let k21 = k - k12 - k23;
    if k21 <= T::zero() {
        return Err(Error::invalid("k12", "chosen split leaves no positive radiative rate"));
    }
    Ok(InstantRates { k12, k21, k23, k31 })
}

/// Fourier transform limited linewidth hbar / tau in ueV for a lifetime in ns.
/// Decay-rate pair and bunching amplitude for the given rates, without the
/// physical-regime checks of [`InstantRates::analytic_g2`]. The smooth
/// continuation across regime boundaries (negative `a`, near-degenerate
/// eigenvalues yielding huge `a`) is what iterative rate extraction needs:
/// bad trial points produce bad residuals instead of hard errors.
pub(crate) fn eigen_triple<T: Real>(k12: T, k21: T, k23: T, k31: T) -> (T, T, T) {
    let ktot = k12 + k21 + k23;
    let s = ktot + k31;
    let q = k31 * ktot + k12 * k23;
    let disc = (s * s - T::of(4.0) * q).max(T::zero());
    let lambda1 = (s + disc.sqrt()) * T::of(0.5);
    let lambda2 = if lambda1 > T::zero() { q / lambda1 } else { T::zero() };
    let a = lambda1 * (lambda2 - k31) / (k31 * (lambda1 - lambda2));
    (lambda1, lambda2, a)
}

pub fn transform_limited_linewidth<T: Real>(lifetime: T) -> Result<T> {
    if !lifetime.is_finite() || lifetime <= T::zero() {
        return Err(Error::invalid("lifetime", format!("must be > 0, got {lifetime}")));
    }
    Ok(T::of(HBAR_UEV_NS) / lifetime)
}

impl<T: Real> G2Params<T> {
    /// Validates and builds correlation parameters.
    pub fn new(a: T, tau1: T, tau2: T) -> Result<Self> {
        let params = G2Params { a, tau1, tau2 };
        params.validate()?;
        Ok(params)
    }

    /// Checks the field invariants.
    pub fn validate(&self) -> Result<()> {
        if !self.tau1.is_finite() || self.tau1 <= T::zero() {
            return Err(Error::invalid("tau1", format!("must be > 0, got {}", self.tau1)));
        }
        if !self.tau2.is_finite() || self.tau2 < self.tau1 {
            return Err(Error::invalid("tau2", format!("must be >= tau1, got {}", self.tau2)));
        }
        if !self.a.is_finite() || self.a < T::zero() {
            return Err(Error::invalid("a", format!("must be >= 0, got {}", self.a)));
        }
        Ok(())
    }

    /// Evaluates the correlation function at lag `tau` (even in tau).
    pub fn eval(&self, tau: T) -> T {
        let t = tau.abs();
        T::one() - (T::one() + self.a) * (-t / self.tau1).exp() + self.a * (-t / self.tau2).exp()
    }

    /// Antibunching decay rate 1/tau1.
    pub fn lambda1(&self) -> T {
        self.tau1.recip()
    }

    /// Bunching decay rate 1/tau2.
    pub fn lambda2(&self) -> T {
        self.tau2.recip()
    }
}

impl<T: Real> Populations<T> {
    /// Checks that each entry is a probability and the three sum to one.
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("p1", self.p1), ("p2", self.p2), ("p3", self.p3)] {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(Error::invalid(name, format!("must be in [0, 1], got {v}")));
            }
        }
        let sum = self.p1 + self.p2 + self.p3;
        if (sum - T::one()).abs() > T::of(1e-12) {
            return Err(Error::invalid("p1 + p2 + p3", format!("must sum to 1, got {sum}")));
        }
        Ok(())
    }
}
