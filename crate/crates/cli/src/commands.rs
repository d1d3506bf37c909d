//! The five pipeline verbs behind the `spekit` binary.

use std::collections::BTreeMap;
use std::fs;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use spekit_core::analysis::{
    build_report, derive_lifetimes, ensemble_stats, extract_rates, visibility_from_fit,
    PolarizationParams, ShelvingMode, VisibilityResult,
};
use spekit_core::correlator::{intensity_trace, log_correlate, StreamingCorrelator};
use spekit_core::fit::{
    fit_decay_data, fit_g2, fit_g2_data, fit_polarization, fit_saturation, G2FitMode,
    PolarizationRole, PolarizationScan,
};
use spekit_core::kinetics::transform_limited_linewidth;
use spekit_core::sim::{simulate_hbt_cw, simulate_pulsed_stream, DetectorModel, PulsedExcitation};
use spekit_core::{EmitterReport, G2Params, PowerSeriesPoint, RateModel};

use crate::config::Config;
use crate::doc::{
    read_document, write_document, DataPoint, EmitterExtraction, FitDocument, Payload,
    ResultDocument,
};
use crate::formats::{read_stream, write_stream, StreamFormat, TagReader};

/// How a failed invocation should exit: usage problems are the caller's
/// command line or configuration, data problems live in an input file.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Data(m) => m,
        }
    }
}

type CmdResult = Result<(), Failure>;

fn cfg_number(cfg: &Config, key: &str) -> Result<Option<f64>, Failure> {
    cfg.number(key).map_err(Failure::Usage)
}

fn require_number(cfg: &Config, key: &str) -> Result<f64, Failure> {
    cfg_number(cfg, key)?
        .ok_or_else(|| Failure::Usage(format!("config key '{key}' is required here")))
}

fn number_or(cfg: &Config, key: &str, default: f64) -> Result<f64, Failure> {
    Ok(cfg_number(cfg, key)?.unwrap_or(default))
}

fn word_or<'a>(cfg: &'a Config, key: &str, default: &'a str) -> Result<&'a str, Failure> {
    Ok(cfg.word(key).map_err(Failure::Usage)?.unwrap_or(default))
}

fn seed_from(cfg: &Config) -> Result<u64, Failure> {
    Ok(cfg.integer("seed").map_err(Failure::Usage)?.unwrap_or(0))
}

/// Core errors raised while turning configuration into a run are the
/// caller's to fix; errors raised by the content of a stream are data.
fn setting_error(e: spekit_core::Error) -> Failure {
    Failure::Usage(e.to_string())
}

fn data_error(e: impl std::fmt::Display) -> Failure {
    Failure::Data(e.to_string())
}

fn write_failure(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Data(format!("writing {}: {e}", path.display()))
}

/// Rounds a value and its one-sigma uncertainty for the terminal: the
/// uncertainty to two significant digits, the value to the matching
/// decimal place.  Documents keep full precision; this is display only.
fn format_measurement(value: f64, unc: f64) -> String {
    if !unc.is_finite() || unc <= 0.0 {
        return format!("{} +- {unc}", format_number(value));
    }
    let decimals = (1 - unc.abs().log10().floor() as i64).clamp(0, 12) as usize;
    format!("{value:.decimals$} +- {unc:.decimals$}")
}

/// Six significant digits, scientific outside a comfortable window; plain
/// `Display` would spell extreme magnitudes out positionally.
fn format_number(value: f64) -> String {
    if value == 0.0 {
        "0".into()
    } else if value.abs() < 1e-4 || value.abs() >= 1e6 {
        format!("{value:.5e}")
    } else {
        let fixed = format!("{value:.6}");
        fixed.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn model_from_config(cfg: &Config) -> Result<RateModel, Failure> {
    RateModel::new(
        require_number(cfg, "k21")?,
        require_number(cfg, "k23")?,
        require_number(cfg, "k31_0")?,
        require_number(cfg, "alpha")?,
        number_or(cfg, "beta", 0.0)?,
    )
    .map_err(setting_error)
}

fn detector_from_config(cfg: &Config) -> Result<DetectorModel, Failure> {
    let det = DetectorModel {
        efficiency: number_or(cfg, "efficiency", 1.0)?,
        jitter_sigma: number_or(cfg, "jitter_sigma", 0.0)?,
        dead_time: number_or(cfg, "dead_time", 0.0)?,
        dark_rate: number_or(cfg, "dark_rate", 0.0)?,
    };
    det.validate().map_err(setting_error)?;
    Ok(det)
}

// ---------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &Config, out: &Path, format: Option<StreamFormat>) -> CmdResult {
    let model = model_from_config(cfg)?;
    let det = detector_from_config(cfg)?;
    let duration = require_number(cfg, "duration")?;
    let seed = seed_from(cfg)?;
    let stream = match word_or(cfg, "source", "cw")? {
        "cw" => {
            let power = require_number(cfg, "power")?;
            simulate_hbt_cw(&model, power, duration, &det, seed).map_err(setting_error)?
        }
        "pulsed" => {
            let pulsed = PulsedExcitation {
                rep_period: require_number(cfg, "rep_period")?,
                pulse_width: number_or(cfg, "pulse_width", 0.0)?,
                excitation_prob: require_number(cfg, "excitation_prob")?,
            };
            simulate_pulsed_stream(&model, &pulsed, &det, duration, seed).map_err(setting_error)?
        }
        other => return Err(Failure::Usage(format!("source must be cw or pulsed, got '{other}'"))),
    };
    let format = format.unwrap_or_else(|| StreamFormat::for_path(out));
    write_stream(out, &stream, format).map_err(|e| write_failure(out, e))?;
    println!(
        "wrote {} tags ({} on channel 0, {} on channel 1) over {} ns to {} (seed {seed})",
        stream.len(),
        stream.channel_len(0),
        stream.channel_len(1),
        stream.duration_ns(),
        out.display(),
    );
    Ok(())
}

// --------------------------------------------------------------- correlate

pub fn cmd_correlate(input: &Path, cfg: &Config, out: &Path) -> CmdResult {
    let payload = match word_or(cfg, "lag_grid", "linear")? {
        "linear" => {
            let bin_width = require_number(cfg, "bin_width")?;
            let max_lag = require_number(cfg, "max_lag")?;
            let mut reader = TagReader::open(input).map_err(Failure::Data)?;
            let mut correlator =
                StreamingCorrelator::new(bin_width, max_lag).map_err(setting_error)?;
            let mut max_seen = 0u64;
            for item in &mut reader {
                let tag = item.map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
                max_seen = max_seen.max(tag.time_ps);
                correlator
                    .push(tag)
                    .map_err(|e| Failure::Data(format!("{}: {e}", input.display())))?;
            }
            let duration_ps = reader.header().duration_ps.unwrap_or(max_seen);
            let curve = correlator.finish(duration_ps).map_err(data_error)?;
            let zero_bin = curve
                .lags
                .iter()
                .enumerate()
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
                .map(|(i, _)| i)
                .expect("nonempty curve");
            println!(
                "{} linear bins over [{:.6}, {:.6}] ns; rates {:.6}/{:.6} per ns; g2 nearest zero lag = {:.4}",
                curve.len(),
                curve.lags[0],
                curve.lags[curve.len() - 1],
                curve.norm.rate0,
                curve.norm.rate1,
                curve.values[zero_bin],
            );
            Payload::Curve { curve }
        }
        "log" => {
            let stream = read_stream(input).map_err(Failure::Data)?;
            let min_lag = number_or(cfg, "min_lag", 1.0)?;
            let max_lag = require_number(cfg, "max_lag")?;
            let ppd = cfg.integer("points_per_decade").map_err(Failure::Usage)?.unwrap_or(8);
            let curve = log_correlate(&stream, min_lag, max_lag, ppd as u32).map_err(data_error)?;
            println!(
                "{} log bins over [{:.3}, {:.3}] ns; rates {:.6}/{:.6} per ns",
                curve.len(),
                curve.lags[0],
                curve.lags[curve.len() - 1],
                curve.norm.rate0,
                curve.norm.rate1,
            );
            Payload::Curve { curve }
        }
        "trace" => {
            let stream = read_stream(input).map_err(Failure::Data)?;
            let trace_bin = require_number(cfg, "trace_bin")?;
            let counts = intensity_trace(&stream, trace_bin).map_err(data_error)?;
            let values: Vec<f64> = counts.iter().map(|&c| c as f64).collect();
            let spread = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
                - values.iter().cloned().fold(f64::INFINITY, f64::min);
            let hist_bin = match cfg_number(cfg, "hist_bin")? {
                Some(b) => b,
                None => (spread / 15.0).max(1.0),
            };
            let stats = ensemble_stats(&values, hist_bin).map_err(data_error)?;
            println!(
                "intensity trace: {} bins of {} ns, {:.2} +- {:.2} counts per bin",
                values.len(),
                trace_bin,
                stats.mean,
                stats.std_dev,
            );
            Payload::Stats { trace_bin_ns: trace_bin, stats }
        }
        other => {
            return Err(Failure::Usage(format!(
                "lag_grid must be linear, log or trace, got '{other}'"
            )))
        }
    };
    let doc = ResultDocument::new(
        "correlate",
        cfg.integer("seed").map_err(Failure::Usage)?,
        cfg.echo().clone(),
        payload,
    );
    write_document(out, &doc).map_err(|e| write_failure(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

// --------------------------------------------------------------------- fit

/// Two value columns plus the optional error column of a small CSV.
type Table = (Vec<f64>, Vec<f64>, Option<Vec<f64>>);

/// Reads a small numeric CSV with two required columns and an optional
/// error column; anything else in the header is a schema error.
fn read_table(path: &Path, required: [&str; 2], err_col: &str) -> Result<Table, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
    let Some((_, header)) = lines.next() else {
        return Err(Failure::Data(format!("{}: empty file", path.display())));
    };
    let columns: Vec<&str> = header.split(',').map(str::trim).collect();
    let with_errors = match columns.as_slice() {
        [a, b] if [*a, *b] == required => false,
        [a, b, e] if [*a, *b] == required && *e == err_col => true,
        _ => {
            return Err(Failure::Data(format!(
                "{}: expected columns '{},{}[,{}]', got '{header}'",
                path.display(),
                required[0],
                required[1],
                err_col,
            )))
        }
    };
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut errs = Vec::new();
    for (line_no, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != columns.len() {
            return Err(Failure::Data(format!(
                "{}: line {line_no}: expected {} fields, got {}",
                path.display(),
                columns.len(),
                fields.len(),
            )));
        }
        let mut parsed = fields.iter().map(|f| {
            f.parse::<f64>().map_err(|_| {
                Failure::Data(format!("{}: line {line_no}: '{f}' is not a number", path.display()))
            })
        });
        xs.push(parsed.next().expect("two columns")?);
        ys.push(parsed.next().expect("two columns")?);
        if with_errors {
            errs.push(parsed.next().expect("error column")?);
        }
    }
    Ok((xs, ys, with_errors.then_some(errs)))
}

fn points_from(xs: &[f64], ys: &[f64], errs: Option<&[f64]>) -> Vec<DataPoint> {
    xs.iter()
        .zip(ys)
        .enumerate()
        .map(|(i, (&x, &y))| DataPoint { x, y, err: errs.map(|e| e[i]) })
        .collect()
}

pub fn cmd_fit(input: &Path, model_flag: Option<&str>, cfg: &Config, out: &Path) -> CmdResult {
    let model = match model_flag {
        Some(m) => m.to_string(),
        None => match cfg.word("model").map_err(Failure::Usage)? {
            Some(m) => m.to_string(),
            None => {
                return Err(Failure::Usage(
                    "fit needs a model: --model g2 | saturation | lifetime | polarization".into(),
                ))
            }
        },
    };
    let mut role = None;
    let (result, data) = match model.as_str() {
        "g2" => {
            let mode = match word_or(cfg, "g2_background", "bare")? {
                "bare" => G2FitMode::Bare,
                "fitted" => G2FitMode::WithBackground,
                other => {
                    return Err(Failure::Usage(format!(
                        "g2_background must be bare or fitted, got '{other}'"
                    )))
                }
            };
            if input.extension().and_then(|e| e.to_str()) == Some("json") {
                let doc = read_document(input).map_err(Failure::Data)?;
                let Payload::Curve { curve } = doc.payload else {
                    return Err(Failure::Data(format!(
                        "{}: document does not hold a correlation curve",
                        input.display()
                    )));
                };
                let fit = fit_g2(&curve, None, mode).map_err(data_error)?;
                let errs = Some(curve.errors.as_slice());
                (fit, points_from(&curve.lags, &curve.values, errs))
            } else {
                let (lags, values, errs) = read_table(input, ["lag_ns", "g2"], "err")?;
                let fit =
                    fit_g2_data(&lags, &values, errs.as_deref(), None, mode).map_err(data_error)?;
                (fit, points_from(&lags, &values, errs.as_deref()))
            }
        }
        "saturation" => {
            let (powers, intensities, errs) = read_table(input, ["power_uw", "intensity"], "err")?;
            let pairs: Vec<(f64, f64)> =
                powers.iter().cloned().zip(intensities.iter().cloned()).collect();
            let fit = fit_saturation(&pairs, errs.as_deref()).map_err(data_error)?;
            (fit, points_from(&powers, &intensities, errs.as_deref()))
        }
        "lifetime" => {
            let (times, counts, _) = read_table(input, ["time_ns", "counts"], "err")?;
            let fit = fit_decay_data(&times, &counts).map_err(data_error)?;
            (fit, points_from(&times, &counts, None))
        }
        "polarization" => {
            let (angles, intensities, errs) = read_table(input, ["angle_deg", "intensity"], "err")?;
            let scan_role = match word_or(cfg, "role", "absorption")? {
                "absorption" => PolarizationRole::Absorption,
                "emission" => PolarizationRole::Emission,
                other => {
                    return Err(Failure::Usage(format!(
                        "role must be absorption or emission, got '{other}'"
                    )))
                }
            };
            role = Some(scan_role);
            let scan = PolarizationScan {
                angles_deg: angles.clone(),
                intensities: intensities.clone(),
                errors: errs.clone(),
                role: scan_role,
            };
            let fit = fit_polarization(&scan).map_err(data_error)?;
            (fit, points_from(&angles, &intensities, errs.as_deref()))
        }
        other => {
            return Err(Failure::Usage(format!(
                "unknown model '{other}': use g2, saturation, lifetime or polarization"
            )))
        }
    };

    println!("{} fit: {}", model, if result.converged { "converged" } else { "did not converge" });
    for (i, (name, value)) in result.params.iter().enumerate() {
        println!("  {name} = {}", format_measurement(*value, result.uncertainties[i]));
    }
    for warning in &result.warnings {
        println!("  warning: {warning}");
    }

    let fit_doc = FitDocument {
        model,
        emitter: cfg.word("emitter").map_err(Failure::Usage)?.map(str::to_string),
        power_uw: cfg_number(cfg, "power")?,
        role,
        result,
        data,
    };
    let doc = ResultDocument::new(
        "fit",
        cfg.integer("seed").map_err(Failure::Usage)?,
        cfg.echo().clone(),
        Payload::Fit(fit_doc),
    );
    write_document(out, &doc).map_err(|e| write_failure(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

// ----------------------------------------------------------------- extract

#[derive(Default)]
struct EmitterInputs {
    points: Vec<PowerSeriesPoint>,
    g2_by_power: Vec<(f64, G2Params)>,
    absorption: Option<VisibilityResult<f64>>,
    emission: Option<VisibilityResult<f64>>,
}

fn series_point_from(
    doc_path: &Path,
    fit: &FitDocument,
) -> Result<(f64, PowerSeriesPoint, G2Params), Failure> {
    let power = fit.power_uw.ok_or_else(|| {
        Failure::Data(format!(
            "{}: correlation fit carries no excitation power; set 'power' when fitting",
            doc_path.display()
        ))
    })?;
    let grab = |name: &str| {
        fit.result.param(name).ok_or_else(|| {
            Failure::Data(format!(
                "{}: fit result has no '{name}' parameter; not a correlation fit",
                doc_path.display()
            ))
        })
    };
    let (a, tau1, tau2) = (grab("a")?, grab("tau1")?, grab("tau2")?);
    let err = |name: &str| fit.result.uncertainty(name).unwrap_or(0.0);
    let params = G2Params::new(a, tau1, tau2)
        .map_err(|e| Failure::Data(format!("{}: {e}", doc_path.display())))?;
    let point = PowerSeriesPoint {
        power,
        lambda1: tau1.recip(),
        lambda2: tau2.recip(),
        a,
        // First-order propagation through lambda = 1/tau.
        lambda1_err: err("tau1") / (tau1 * tau1),
        lambda2_err: err("tau2") / (tau2 * tau2),
        a_err: err("a"),
    };
    Ok((power, point, params))
}

pub fn cmd_extract(inputs: &[PathBuf], cfg: &Config, out: &Path) -> CmdResult {
    if inputs.is_empty() {
        return Err(Failure::Usage("extract needs at least one fit document".into()));
    }
    let mode = match word_or(cfg, "shelving", "auto")? {
        "auto" => ShelvingMode::Auto,
        "power" => ShelvingMode::PowerDependent,
        "fixed" => ShelvingMode::PowerIndependent,
        other => {
            return Err(Failure::Usage(format!(
                "shelving must be auto, power or fixed, got '{other}'"
            )))
        }
    };
    let mut groups: BTreeMap<String, EmitterInputs> = BTreeMap::new();
    for path in inputs {
        let doc = read_document(path).map_err(Failure::Data)?;
        let Payload::Fit(fit_doc) = doc.payload else {
            return Err(Failure::Data(format!(
                "{}: not a fit document; extract consumes the output of 'spekit fit'",
                path.display()
            )));
        };
        let label = fit_doc.emitter.clone().unwrap_or_else(|| "emitter".to_string());
        let group = groups.entry(label.clone()).or_default();
        match fit_doc.model.as_str() {
            "g2" => {
                let (power, point, params) = series_point_from(path, &fit_doc)?;
                group.points.push(point);
                group.g2_by_power.push((power, params));
            }
            "polarization" => {
                let role = fit_doc.role.ok_or_else(|| {
                    Failure::Data(format!("{}: polarization fit lacks a role", path.display()))
                })?;
                let params = PolarizationParams::from_fit(&fit_doc.result).ok_or_else(|| {
                    Failure::Data(format!(
                        "{}: fit result has no (a, b, phi0) parameters",
                        path.display()
                    ))
                })?;
                let vis = visibility_from_fit(&params)
                    .map_err(|e| Failure::Data(format!("{}: {e}", path.display())))?;
                let slot = match role {
                    PolarizationRole::Absorption => &mut group.absorption,
                    PolarizationRole::Emission => &mut group.emission,
                };
                if slot.is_some() {
                    return Err(Failure::Data(format!(
                        "emitter '{label}' has two {} scans",
                        match role {
                            PolarizationRole::Absorption => "absorption",
                            PolarizationRole::Emission => "emission",
                        }
                    )));
                }
                *slot = Some(vis);
            }
            other => {
                return Err(Failure::Data(format!(
                    "{}: cannot extract rates from a '{other}' fit",
                    path.display()
                )))
            }
        }
    }

    let zpl = cfg_number(cfg, "zpl_energy")?;
    let fwhm = cfg_number(cfg, "fwhm")?;
    let mut emitters = Vec::new();
    for (label, mut group) in groups {
        if group.points.is_empty() {
            return Err(Failure::Data(format!(
                "emitter '{label}': no correlation fits to extract rates from"
            )));
        }
        let mut order: Vec<usize> = (0..group.points.len()).collect();
        order.sort_by(|&i, &j| group.points[i].power.total_cmp(&group.points[j].power));
        let points: Vec<PowerSeriesPoint> = order.iter().map(|&i| group.points[i]).collect();
        for pair in points.windows(2) {
            if pair[0].power == pair[1].power {
                return Err(Failure::Data(format!(
                    "emitter '{label}': two correlation fits at the same power {} uW",
                    pair[0].power
                )));
            }
        }
        group.g2_by_power.sort_by(|x, y| x.0.total_cmp(&y.0));
        let extraction = extract_rates(&points, mode).map_err(data_error)?;
        let report = match (zpl, fwhm) {
            (Some(zpl_ev), Some(fwhm_mev)) => Some(
                build_report(
                    &label,
                    zpl_ev,
                    fwhm_mev,
                    group.g2_by_power.clone(),
                    extraction.model,
                    group.absorption,
                    group.emission,
                )
                .map_err(data_error)?,
            ),
            _ => None,
        };
        let m = &extraction.model;
        let coeff = |name: &str, v: f64| match extraction.fit.uncertainty(name) {
            Some(u) => format_measurement(v, u),
            None => format!("{v}"),
        };
        println!(
            "emitter '{label}': k21 = {} /ns, k23 = {} /ns, k31_0 = {} /ns, alpha = {} /ns/uW, beta = {} /uW",
            coeff("k21", m.k21),
            coeff("k23", m.k23),
            coeff("k31_0", m.k31_0),
            coeff("alpha", m.alpha),
            coeff("beta", m.beta),
        );
        if report.is_none() && (zpl.is_some() || fwhm.is_some()) {
            println!("  note: a full report needs both zpl_energy and fwhm in the config");
        }
        emitters.push(EmitterExtraction { emitter: label, series: points, extraction, report });
    }

    let doc = ResultDocument::new(
        "extract",
        cfg.integer("seed").map_err(Failure::Usage)?,
        cfg.echo().clone(),
        Payload::Extraction { emitters },
    );
    write_document(out, &doc).map_err(|e| write_failure(out, e))?;
    println!("wrote {}", out.display());
    Ok(())
}

// ------------------------------------------------------------------ report

/// One line of the summary table; anything unknown stays empty.
#[derive(Default)]
struct TableRow {
    emitter: String,
    model: Option<RateModel>,
    excited_lifetime_ns: Option<f64>,
    metastable_lifetime_ns: Option<f64>,
    transform_limit_uev: Option<f64>,
    fwhm_mev: Option<f64>,
    linewidth_ratio: Option<f64>,
    visibility_absorption: Option<f64>,
    visibility_emission: Option<f64>,
    misalignment_deg: Option<f64>,
}

impl TableRow {
    fn from_model(emitter: &str, model: RateModel) -> TableRow {
        let mut row =
            TableRow { emitter: emitter.to_string(), model: Some(model), ..TableRow::default() };
        if let Ok((excited, metastable)) = derive_lifetimes(&model) {
            row.excited_lifetime_ns = Some(excited);
            row.metastable_lifetime_ns = Some(metastable);
            row.transform_limit_uev = transform_limited_linewidth(excited).ok();
        }
        row
    }

    fn from_report(report: &EmitterReport) -> TableRow {
        let mut row = TableRow::from_model(&report.label, report.model);
        row.fwhm_mev = Some(report.fwhm_mev);
        row.linewidth_ratio = row
            .excited_lifetime_ns
            .and_then(|tau| spekit_core::analysis::linewidth_ratio(report.fwhm_mev, tau).ok());
        row.visibility_absorption = report.absorption.as_ref().map(|v| v.visibility);
        row.visibility_emission = report.emission.as_ref().map(|v| v.visibility);
        row.misalignment_deg = report.misalignment_deg;
        row
    }
}

fn cell(value: Option<f64>) -> String {
    value.map(|v| v.to_string()).unwrap_or_default()
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || "._-".contains(c) { c } else { '_' })
        .collect()
}

fn stem_of(path: &Path) -> String {
    sanitize(&path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default())
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(path).map_err(|e| write_failure(path, e))?))
}

/// Evaluates the fitted model of a fit document at `x`, if the parameters
/// for its model family are present.
fn fit_value(fit: &FitDocument, x: f64) -> Option<f64> {
    let p = |name: &str| fit.result.param(name);
    match fit.model.as_str() {
        "g2" => {
            let bare = 1.0 - (1.0 + p("a")?) * (-x.abs() / p("tau1")?).exp()
                + p("a")? * (-x.abs() / p("tau2")?).exp();
            Some(match p("rho") {
                Some(rho) => 1.0 + rho * rho * (bare - 1.0),
                None => bare,
            })
        }
        "saturation" => Some(p("i_inf")? * x / (x + p("p_sat")?)),
        "lifetime" => Some(
            p("a_fast")? * (-x / p("tau_fast")?).exp()
                + p("a_slow")? * (-x / p("tau_slow")?).exp()
                + p("baseline")?,
        ),
        "polarization" => {
            let c = ((x - p("phi0")?).to_radians()).cos();
            Some(p("a")? + p("b")? * c * c)
        }
        _ => None,
    }
}

fn write_fit_plot(dir: &Path, stem: &str, fit: &FitDocument) -> Result<Option<PathBuf>, Failure> {
    let (name, header) = match fit.model.as_str() {
        "g2" => ("g2_fit", "lag_ns,g2,err,fit"),
        "saturation" => ("saturation", "power_uw,intensity,err,fit"),
        "lifetime" => ("decay", "time_ns,counts,err,fit"),
        "polarization" => ("polar", "angle_deg,intensity,fit"),
        _ => return Ok(None),
    };
    let path = dir.join(format!("{name}_{stem}.csv"));
    let mut w = create(&path)?;
    let emit = |e| write_failure(&path, e);
    writeln!(w, "{header}").map_err(emit)?;
    if fit.model == "polarization" {
        // The fitted law repeats every half turn, so each measured angle
        // also stands for its antipode; together they cover [0, 360).
        let mut rows: Vec<(f64, f64)> = Vec::new();
        for point in &fit.data {
            let angle = point.x.rem_euclid(360.0);
            for candidate in [angle, (angle + 180.0).rem_euclid(360.0)] {
                if rows.iter().all(|(a, _)| (a - candidate).abs() > 1e-9) {
                    rows.push((candidate, point.y));
                }
            }
        }
        rows.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (angle, intensity) in rows {
            let model = fit_value(fit, angle).unwrap_or(f64::NAN);
            writeln!(w, "{angle},{intensity},{model}").map_err(emit)?;
        }
    } else {
        for point in &fit.data {
            let model = fit_value(fit, point.x).unwrap_or(f64::NAN);
            let err = point.err.map(|e| e.to_string()).unwrap_or_default();
            writeln!(w, "{},{},{err},{model}", point.x, point.y).map_err(emit)?;
        }
    }
    w.flush().map_err(emit)?;
    Ok(Some(path))
}

fn write_power_series(dir: &Path, extraction: &EmitterExtraction) -> Result<PathBuf, Failure> {
    let path = dir.join(format!("power_series_{}.csv", sanitize(&extraction.emitter)));
    let mut w = create(&path)?;
    let emit = |e| write_failure(&path, e);
    writeln!(
        w,
        "power_uw,lambda1_per_ns,lambda1_err,lambda1_fit,lambda2_per_ns,lambda2_err,lambda2_fit,a,a_err,a_fit"
    )
    .map_err(emit)?;
    let model = &extraction.extraction.model;
    for point in &extraction.series {
        let fit = model.rates_at_power(point.power).and_then(|r| r.analytic_g2()).ok();
        let (l1, l2, af) = match &fit {
            Some(g) => (g.tau1.recip().to_string(), g.tau2.recip().to_string(), g.a.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        writeln!(
            w,
            "{},{},{},{l1},{},{},{l2},{},{},{af}",
            point.power,
            point.lambda1,
            point.lambda1_err,
            point.lambda2,
            point.lambda2_err,
            point.a,
            point.a_err,
        )
        .map_err(emit)?;
    }
    w.flush().map_err(emit)?;
    Ok(path)
}

pub fn cmd_report(inputs: &[PathBuf], out_dir: &Path) -> CmdResult {
    fs::create_dir_all(out_dir).map_err(|e| write_failure(out_dir, e))?;
    let mut rows: Vec<TableRow> = Vec::new();
    let mut written: Vec<PathBuf> = Vec::new();
    for path in inputs {
        let doc = read_document(path).map_err(Failure::Data)?;
        let stem = stem_of(path);
        match doc.payload {
            Payload::Curve { curve } => {
                let out = out_dir.join(format!("g2_curve_{stem}.csv"));
                let mut w = create(&out)?;
                let emit = |e| write_failure(&out, e);
                writeln!(w, "lag_ns,g2,err,counts").map_err(emit)?;
                for i in 0..curve.len() {
                    writeln!(
                        w,
                        "{},{},{},{}",
                        curve.lags[i], curve.values[i], curve.errors[i], curve.counts[i]
                    )
                    .map_err(emit)?;
                }
                w.flush().map_err(emit)?;
                written.push(out);
            }
            Payload::Fit(fit_doc) => {
                if let Some(out) = write_fit_plot(out_dir, &stem, &fit_doc)? {
                    written.push(out);
                }
            }
            Payload::Extraction { emitters } => {
                for entry in &emitters {
                    written.push(write_power_series(out_dir, entry)?);
                    rows.push(match &entry.report {
                        Some(report) => TableRow::from_report(report),
                        None => TableRow::from_model(&entry.emitter, entry.extraction.model),
                    });
                }
            }
            Payload::Report { report } => rows.push(TableRow::from_report(&report)),
            Payload::Stats { trace_bin_ns: _, stats } => {
                let out = out_dir.join(format!("trace_stats_{stem}.csv"));
                let mut w = create(&out)?;
                let emit = |e| write_failure(&out, e);
                writeln!(w, "bin_lo,bin_hi,count").map_err(emit)?;
                for (i, &count) in stats.counts.iter().enumerate() {
                    writeln!(w, "{},{},{count}", stats.bin_edges[i], stats.bin_edges[i + 1])
                        .map_err(emit)?;
                }
                w.flush().map_err(emit)?;
                written.push(out);
            }
        }
    }

    let table_path = out_dir.join("table.csv");
    let mut w = create(&table_path)?;
    let emit = |e| write_failure(&table_path, e);
    writeln!(
        w,
        "emitter,k21_per_ns,k23_per_ns,k31_0_per_ns,alpha_per_ns_uw,beta_per_uw,\
         excited_lifetime_ns,metastable_lifetime_ns,transform_limit_uev,fwhm_mev,\
         linewidth_ratio,visibility_absorption,visibility_emission,misalignment_deg"
    )
    .map_err(emit)?;
    for row in &rows {
        let (k21, k23, k31_0, alpha, beta) = match &row.model {
            Some(m) => (
                m.k21.to_string(),
                m.k23.to_string(),
                m.k31_0.to_string(),
                m.alpha.to_string(),
                m.beta.to_string(),
            ),
            None => Default::default(),
        };
        writeln!(
            w,
            "{},{k21},{k23},{k31_0},{alpha},{beta},{},{},{},{},{},{},{},{}",
            row.emitter,
            cell(row.excited_lifetime_ns),
            cell(row.metastable_lifetime_ns),
            cell(row.transform_limit_uev),
            cell(row.fwhm_mev),
            cell(row.linewidth_ratio),
            cell(row.visibility_absorption),
            cell(row.visibility_emission),
            cell(row.misalignment_deg),
        )
        .map_err(emit)?;
    }
    w.flush().map_err(emit)?;
    written.push(table_path);

    if rows.is_empty() {
        println!("no emitter rows; wrote an empty table");
    } else {
        println!(
            "{:<12} {:>12} {:>12} {:>12} {:>10} {:>8} {:>8} {:>10}",
            "emitter",
            "tau_exc_ns",
            "tau_meta_ns",
            "limit_ueV",
            "ratio",
            "vis_abs",
            "vis_emi",
            "misalign"
        );
        let short = |v: Option<f64>, digits: usize| match v {
            Some(x) => format!("{x:.digits$}"),
            None => "-".to_string(),
        };
        for row in &rows {
            println!(
                "{:<12} {:>12} {:>12} {:>12} {:>10} {:>8} {:>8} {:>10}",
                row.emitter,
                short(row.excited_lifetime_ns, 2),
                short(row.metastable_lifetime_ns, 1),
                short(row.transform_limit_uev, 3),
                short(row.linewidth_ratio, 0),
                short(row.visibility_absorption, 2),
                short(row.visibility_emission, 2),
                short(row.misalignment_deg, 1),
            );
        }
    }
    for path in &written {
        println!("wrote {}", path.display());
    }
    Ok(())
}
