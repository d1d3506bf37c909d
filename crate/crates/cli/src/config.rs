//! Flat `key = value` configuration with unit-suffixed numbers.
//!
//! The format is line oriented: blank lines and `#` comments are skipped
//! and every other line must read `key = value`. Values are words
//! (`source = pulsed`), bare numbers (`efficiency = 0.9`) or numbers with
//! a unit suffix (`duration = 1e7 ns`, `alpha = 3.31e-4 /ns/uW`). Suffixes
//! are converted to the toolkit's canonical units - nanoseconds,
//! microwatts and their inverses - so `duration = 10 ms` means the same
//! as `duration = 1e7 ns`. A bare number is taken in canonical units; a
//! suffix of the wrong dimension is rejected rather than guessed at.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// What kind of value a configuration key holds, fixing which unit
/// suffixes it accepts and what they convert to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dimension {
    /// Time, canonical nanoseconds.
    Time,
    /// Rate, canonical inverse nanoseconds.
    Rate,
    /// Optical power, canonical microwatts.
    Power,
    /// Pumping coefficient, canonical 1/(ns uW).
    RatePerPower,
    /// Power coefficient, canonical 1/uW.
    PerPower,
    /// Photon energy, canonical electronvolts.
    EnergyEv,
    /// Linewidth, canonical millielectronvolts.
    EnergyMev,
    /// Dimensionless number; no suffix allowed.
    Pure,
    /// Non-negative integer; no suffix allowed.
    Integer,
    /// Free text.
    Word,
}

/// Every key the pipeline understands. Parsing rejects anything outside
/// this list so a typo fails loudly instead of being silently ignored.
const VOCABULARY: &[(&str, Dimension)] = &[
    // Emitter rate model.
    ("k21", Dimension::Rate),
    ("k23", Dimension::Rate),
    ("k31_0", Dimension::Rate),
    ("alpha", Dimension::RatePerPower),
    ("beta", Dimension::PerPower),
    // Run settings.
    ("emitter", Dimension::Word),
    ("source", Dimension::Word),
    ("power", Dimension::Power),
    ("duration", Dimension::Time),
    ("seed", Dimension::Integer),
    // Detector.
    ("efficiency", Dimension::Pure),
    ("jitter_sigma", Dimension::Time),
    ("dead_time", Dimension::Time),
    ("dark_rate", Dimension::Rate),
    // Pulsed excitation.
    ("rep_period", Dimension::Time),
    ("pulse_width", Dimension::Time),
    ("excitation_prob", Dimension::Pure),
    // Correlator.
    ("lag_grid", Dimension::Word),
    ("bin_width", Dimension::Time),
    ("max_lag", Dimension::Time),
    ("min_lag", Dimension::Time),
    ("points_per_decade", Dimension::Integer),
    ("trace_bin", Dimension::Time),
    ("hist_bin", Dimension::Pure),
    // Fitting.
    ("model", Dimension::Word),
    ("g2_background", Dimension::Word),
    ("role", Dimension::Word),
    // Extraction and reporting.
    ("shelving", Dimension::Word),
    ("zpl_energy", Dimension::EnergyEv),
    ("fwhm", Dimension::EnergyMev),
];

fn dimension_of(key: &str) -> Option<Dimension> {
    VOCABULARY.iter().find(|(k, _)| *k == key).map(|&(_, d)| d)
}

fn time_factor(unit: &str) -> Option<f64> {
    Some(match unit {
        "ps" => 1e-3,
        "ns" => 1.0,
        "us" => 1e3,
        "ms" => 1e6,
        "s" => 1e9,
        _ => return None,
    })
}

fn power_factor(unit: &str) -> Option<f64> {
    Some(match unit {
        "nW" => 1e-3,
        "uW" => 1.0,
        "mW" => 1e3,
        "W" => 1e6,
        _ => return None,
    })
}

/// Factor for an inverse-unit suffix like `/ns`, `/uW` or `/ns/uW`: the
/// reciprocal of the product of the listed base units.
fn inverse_factor(unit: &str, parts: &[fn(&str) -> Option<f64>]) -> Option<f64> {
    let rest = unit.strip_prefix('/')?;
    let pieces: Vec<&str> = rest.split('/').collect();
    if pieces.len() != parts.len() {
        return None;
    }
    let mut denom = 1.0;
    for (piece, lookup) in pieces.iter().zip(parts) {
        denom *= lookup(piece)?;
    }
    Some(1.0 / denom)
}

fn suffix_factor(dim: Dimension, unit: &str) -> Option<f64> {
    match dim {
        Dimension::Time => time_factor(unit),
        Dimension::Rate => inverse_factor(unit, &[time_factor]),
        Dimension::Power => power_factor(unit),
        Dimension::RatePerPower => inverse_factor(unit, &[time_factor, power_factor]),
        Dimension::PerPower => inverse_factor(unit, &[power_factor]),
        Dimension::EnergyEv => (unit == "eV").then_some(1.0),
        Dimension::EnergyMev => match unit {
            "ueV" => Some(1e-3),
            "meV" => Some(1.0),
            "eV" => Some(1e3),
            _ => None,
        },
        Dimension::Pure | Dimension::Integer | Dimension::Word => None,
    }
}

/// Parsed configuration: raw value text per key, in key order.
#[derive(Debug, Clone, Default)]
pub struct Config {
    entries: BTreeMap<String, String>,
}

impl Config {
    pub fn empty() -> Self {
        Config::default()
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        Config::parse(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut entries = BTreeMap::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = match raw_line.find('#') {
                Some(pos) => &raw_line[..pos],
                None => raw_line,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let n = idx + 1;
            let Some((key, value)) = line.split_once('=') else {
                return Err(format!("line {n}: expected 'key = value', got '{line}'"));
            };
            let key = key.trim();
            let value = value.trim();
            if dimension_of(key).is_none() {
                return Err(format!("line {n}: unknown key '{key}'"));
            }
            if value.is_empty() {
                return Err(format!("line {n}: key '{key}' has no value"));
            }
            if entries.insert(key.to_string(), value.to_string()).is_some() {
                return Err(format!("line {n}: duplicate key '{key}'"));
            }
        }
        Ok(Config { entries })
    }

    /// Sets or replaces one key, validating it like a parsed line.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        if dimension_of(key).is_none() {
            return Err(format!("unknown key '{key}'"));
        }
        self.entries.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Raw key/value pairs, for provenance echoes.
    pub fn echo(&self) -> &BTreeMap<String, String> {
        &self.entries
    }

    /// Free-text value of a `Word` key.
    pub fn word(&self, key: &str) -> Result<Option<&str>, String> {
        match dimension_of(key) {
            Some(Dimension::Word) => Ok(self.entries.get(key).map(String::as_str)),
            Some(_) => Err(format!("key '{key}' is numeric, not a word")),
            None => Err(format!("unknown key '{key}'")),
        }
    }

    /// Numeric value of a dimensioned key, converted to canonical units.
    pub fn number(&self, key: &str) -> Result<Option<f64>, String> {
        let dim = dimension_of(key).ok_or_else(|| format!("unknown key '{key}'"))?;
        if dim == Dimension::Word {
            return Err(format!("key '{key}' holds a word, not a number"));
        }
        let Some(raw) = self.entries.get(key) else { return Ok(None) };
        let mut tokens = raw.split_whitespace();
        let number_text = tokens.next().unwrap_or_default();
        let value: f64 = number_text
            .parse()
            .map_err(|_| format!("key '{key}': '{number_text}' is not a number"))?;
        let factor = match tokens.next() {
            None => 1.0,
            Some(unit) => suffix_factor(dim, unit)
                .ok_or_else(|| format!("key '{key}': unit '{unit}' does not fit this quantity"))?,
        };
        if tokens.next().is_some() {
            return Err(format!("key '{key}': trailing text after '{raw}'"));
        }
        if !value.is_finite() {
            return Err(format!("key '{key}': value must be finite"));
        }
        Ok(Some(value * factor))
    }

    /// Non-negative integer value of an `Integer` key.
    pub fn integer(&self, key: &str) -> Result<Option<u64>, String> {
        let Some(value) = self.number(key)? else { return Ok(None) };
        if value < 0.0 || value.fract() != 0.0 || value > u64::MAX as f64 {
            return Err(format!("key '{key}': must be a non-negative integer"));
        }
        Ok(Some(value as u64))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_numbers_words_and_suffixes() {
        let cfg = Config::parse(
            "# emitter block\n\
             k21 = 0.268 /ns\n\
             alpha = 3.31e-4 /ns/uW\n\
             beta = 3.29e-5 /uW\n\
             duration = 10 ms   # converted\n\
             power = 0.3 mW\n\
             efficiency = 0.8\n\
             seed = 42\n\
             source = cw\n",
        )
        .unwrap();
        assert_eq!(cfg.number("k21").unwrap(), Some(0.268));
        assert_eq!(cfg.number("alpha").unwrap(), Some(3.31e-4));
        assert_eq!(cfg.number("beta").unwrap(), Some(3.29e-5));
        assert_eq!(cfg.number("duration").unwrap(), Some(1e7));
        assert_eq!(cfg.number("power").unwrap(), Some(300.0));
        assert_eq!(cfg.number("efficiency").unwrap(), Some(0.8));
        assert_eq!(cfg.integer("seed").unwrap(), Some(42));
        assert_eq!(cfg.word("source").unwrap(), Some("cw"));
        assert_eq!(cfg.number("max_lag").unwrap(), None);
    }

    #[test]
    fn converts_every_time_suffix() {
        for (unit, factor) in [("ps", 1e-3), ("ns", 1.0), ("us", 1e3), ("ms", 1e6), ("s", 1e9)] {
            let cfg = Config::parse(&format!("duration = 2 {unit}\n")).unwrap();
            assert_eq!(cfg.number("duration").unwrap(), Some(2.0 * factor));
        }
    }

    #[test]
    fn rejects_unknown_keys_and_bad_units() {
        assert!(Config::parse("durations = 1e7 ns\n").unwrap_err().contains("durations"));
        let cfg = Config::parse("duration = 5 uW\n").unwrap();
        assert!(cfg.number("duration").unwrap_err().contains("uW"));
        let cfg = Config::parse("efficiency = 0.9 ns\n").unwrap();
        assert!(cfg.number("efficiency").is_err());
        assert!(Config::parse("duration = 1\nduration = 2\n").unwrap_err().contains("duplicate"));
        assert!(Config::parse("just words\n").unwrap_err().contains("key = value"));
    }

    #[test]
    fn integer_keys_reject_fractions() {
        let cfg = Config::parse("seed = 1.5\n").unwrap();
        assert!(cfg.integer("seed").is_err());
        let cfg = Config::parse("seed = 1e6\n").unwrap();
        assert_eq!(cfg.integer("seed").unwrap(), Some(1_000_000));
    }
}
