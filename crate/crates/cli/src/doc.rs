//! Self-describing JSON result documents shared by every verb.
//!
//! A document is one UTF-8 JSON object: schema tag, tool version, the
//! command and configuration that produced it, the seed when one was in
//! play, and a `kind`-tagged payload. Floats serialize in the shortest
//! form that parses back to the identical bit pattern, so reading a
//! written document reproduces the in-memory value exactly.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use spekit_core::analysis::EnsembleStats;
use spekit_core::correlator::G2Curve;
use spekit_core::fit::PolarizationRole;
use spekit_core::{EmitterReport, FitResult, PowerSeriesPoint, RateExtraction};

pub const SCHEMA: &str = "spekit/result-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub schema: String,
    pub tool_version: String,
    /// Which verb produced this document.
    pub command: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Configuration echo, raw values as given.
    pub config: BTreeMap<String, String>,
    pub payload: Payload,
}

impl ResultDocument {
    pub fn new(
        command: &str,
        seed: Option<u64>,
        config: BTreeMap<String, String>,
        payload: Payload,
    ) -> Self {
        ResultDocument {
            schema: SCHEMA.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            seed,
            config,
            payload,
        }
    }
}

/// One measured point echoed into a document for self-contained plots.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DataPoint {
    pub x: f64,
    pub y: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err: Option<f64>,
}

/// A fit result plus enough context to plot and to extract rates from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDocument {
    /// Which measurement model: g2, saturation, lifetime or polarization.
    pub model: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emitter: Option<String>,
    /// Excitation power behind the data, microwatts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_uw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<PolarizationRole>,
    pub result: FitResult,
    pub data: Vec<DataPoint>,
}

/// Per-emitter product of the rate extraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmitterExtraction {
    pub emitter: String,
    /// The per-power observables the rates were fitted to.
    pub series: Vec<PowerSeriesPoint>,
    pub extraction: RateExtraction,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<EmitterReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Payload {
    Curve { curve: G2Curve },
    Fit(FitDocument),
    Extraction { emitters: Vec<EmitterExtraction> },
    Report { report: EmitterReport },
    Stats { trace_bin_ns: f64, stats: EnsembleStats<f64> },
}

pub fn write_document(path: &Path, doc: &ResultDocument) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(doc)?;
    text.push('\n');
    fs::write(path, text)
}

pub fn read_document(path: &Path) -> Result<ResultDocument, String> {
    let text =
        fs::read_to_string(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let doc: ResultDocument = serde_json::from_str(&text)
        .map_err(|e| format!("{}: not a result document: {e}", path.display()))?;
    if doc.schema != SCHEMA {
        return Err(format!("{}: unsupported schema '{}'", path.display(), doc.schema));
    }
    Ok(doc)
}
