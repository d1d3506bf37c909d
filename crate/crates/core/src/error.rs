use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors reported by the kinetics, simulation, correlation and analysis layers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An input value violated a documented precondition.
    #[error("invalid {name}: {reason}")]
    InvalidInput { name: &'static str, reason: String },

    /// Deshelving rate is zero while shelving is active: all population ends
    /// up trapped in the metastable state and no stationary emission exists.
    #[error("singular kinetics: k31 = 0 with k23 > 0 shelves all population")]
    ShelvedPopulation,

    /// The two population decay rates coincide; the two-exponential
    /// correlation form does not exist.
    #[error("degenerate eigen spectrum: decay rates coincide (discriminant below threshold)")]
    DegenerateSpectrum,

    /// Deshelving is faster than the total excited-state relaxation, so the
    /// bunching amplitude of the two-exponential form would be negative.
    /// Outside the shelving regime the model describes.
    #[error("inverted kinetics: deshelving rate exceeds the antibunching rate scale")]
    InvertedKinetics,

    /// A correlation was requested on a stream with an empty channel.
    #[error("channel {channel} of the time-tag stream is empty")]
    EmptyChannel { channel: u8 },

    /// Requested lag window too long for the stream duration; the rate
    /// normalization would be badly biased.
    #[error("max lag {max_lag_ns} ns too long for duration {duration_ns} ns")]
    LagExceedsDuration { max_lag_ns: f64, duration_ns: f64 },

    /// Not enough data points for the requested operation.
    #[error("insufficient data: {0}")]
    InsufficientData(String),

    /// A time-tag stream violated its ordering or range invariants.
    #[error("malformed time-tag stream: {0}")]
    MalformedStream(String),

    /// Report fields disagree with quantities recomputed from the rate model.
    #[error("inconsistent report: {0}")]
    InconsistentReport(String),
}

impl Error {
    pub fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidInput { name, reason: reason.into() }
    }
}
