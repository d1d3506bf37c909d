//! Photophysics toolkit for three-level single-photon emitters.
//!
//! The crate covers the full workflow used when characterizing a solid-state
//! quantum emitter with a Hanbury Brown–Twiss setup:
//!
//! * [`kinetics`]: closed-form second-order correlation, steady-state
//!   populations and derived quantities for the three-level rate model.
//! * [`sim`]: continuous-time Monte Carlo photon streams, detector
//!   imperfections and beamsplitter routing.
//! * [`correlator`]: histogram estimators for g2(tau), intensity traces and
//!   pulsed-excitation decay histograms from picosecond time tags.
//! * [`fit`]: Levenberg-Marquardt fits of the standard measurement models
//!   (antibunching, saturation, double-exponential decay, polarization).
//! * [`analysis`]: power-series rate extraction, lifetime and linewidth
//!   derivation, visibility and report assembly.
//!
//! Numerical routines are generic over the scalar type through the
//! [`scalar::Real`] trait; the aliases at the crate root pin everything to
//! `f64`, which is what the command-line tools use.

pub mod analysis;
pub mod correlator;
pub mod error;
pub mod fit;
pub mod kinetics;
pub mod scalar;
pub mod sim;

pub use error::{Error, Result};
pub use scalar::Real;

/// Three-level rate model over `f64`.
pub type RateModel = kinetics::RateModel<f64>;
/// Power-resolved instantaneous rates over `f64`.
pub type InstantRates = kinetics::InstantRates<f64>;
/// Two-exponential correlation parameters over `f64`.
pub type G2Params = kinetics::G2Params<f64>;
/// Steady-state level populations over `f64`.
pub type Populations = kinetics::Populations<f64>;
/// Damped least-squares settings over `f64`.
pub type LevenbergMarquardt = fit::lm::LevenbergMarquardt<f64>;
/// Named fit estimates over `f64`.
pub type FitResult = fit::FitResult<f64>;
/// Power-resolved correlation observables over `f64`.
pub type PowerSeriesPoint = analysis::PowerSeriesPoint<f64>;
/// Rate-extraction output over `f64`.
pub type RateExtraction = analysis::RateExtraction<f64>;
/// Per-emitter summary report over `f64`.
pub type EmitterReport = analysis::EmitterReport<f64>;
