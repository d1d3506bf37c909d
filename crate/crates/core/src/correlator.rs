//! Histogram estimators over picosecond time tags.
//!
//! The central estimator is the full pairwise-in-window correlation: every
//! pair of tags from opposite channels with delay inside the lag window is
//! histogrammed by a sorted two-pointer sweep, never by full pairing. The
//! start-stop variant is kept only as a diagnostic, since it is biased once
//! lags approach the mean inter-arrival time.
//!
//! Normalization follows the stationary-rate convention,
//! `g2_k = C_k / (r0 r1 (T - |tau_k|) delta)`, where the `T - |tau_k|`
//! factor accounts for the shrinking overlap of a finite record with
//! itself; without it, curves sag measurably once lags reach a few percent
//! of the record length. Error bars are Poissonian per raw bin (plus a
//! multiple-pairing factor for wide log-lag bins); bin-to-bin correlations
//! are ignored, a documented limitation.

use std::collections::VecDeque;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{ps_to_ns, Tag, TimeTagStream};

/// Lag-grid layout of a correlation curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LagScheme {
    Linear,
    Log,
}

/// Rates, duration and bin widths behind a curve's normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Channel 0 rate (counts per ns).
    pub rate0: f64,
    /// Channel 1 rate (counts per ns).
    pub rate1: f64,
    /// Record length (ns).
    pub duration_ns: f64,
    /// Width used in each bin's normalization (ns); for log-lag curves this
    /// is the total folded window, covering both delay signs.
    pub bin_widths_ns: Vec<f64>,
}

/// A sampled correlation curve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct G2Curve {
    /// Bin centers (ns); negative lags mean channel 1 fired first.
    pub lags: Vec<f64>,
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    /// Raw coincidence count behind each bin.
    pub counts: Vec<u64>,
    pub scheme: LagScheme,
    pub norm: NormalizationRecord,
}

impl G2Curve {
    pub fn validate(&self) -> Result<()> {
        let n = self.lags.len();
        if self.values.len() != n
            || self.errors.len() != n
            || self.counts.len() != n
            || self.norm.bin_widths_ns.len() != n
        {
            return Err(Error::invalid("curve", "field lengths disagree"));
        }
        if self.lags.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("lags", "must be strictly increasing"));
        }
        if self.errors.iter().any(|&e| !e.is_finite() || e < 0.0) {
            return Err(Error::invalid("errors", "must be finite and >= 0"));
        }
        if !self.norm.duration_ns.is_finite() || self.norm.duration_ns <= 0.0 {
            return Err(Error::invalid("duration", "must be finite and > 0"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.lags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lags.is_empty()
    }
}

/// Delay-from-sync histogram for pulsed lifetime runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TcspcHistogram {
    /// Delay bin edges (ns), length one more than `counts`.
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
    pub sync_count: u64,
}

impl TcspcHistogram {
    pub fn validate(&self) -> Result<()> {
        if self.edges.len() != self.counts.len() + 1 {
            return Err(Error::invalid("edges", "must have one more entry than counts"));
        }
        if self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("edges", "must be strictly increasing"));
        }
        Ok(())
    }

    /// Midpoints of the delay bins.
    pub fn centers(&self) -> Vec<f64> {
        self.edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect()
    }
}

fn channel_i64(stream: &TimeTagStream, channel: u8) -> Vec<i64> {
    stream.tags.iter().filter(|t| t.channel == channel).map(|t| t.time_ps as i64).collect()
}

/// Histogram kernel for one slice of channel-0 tags; bins are
/// `[k w, (k+1) w)` in ps for `k` in `[-m, m)`, indexed from zero.
fn correlate_kernel(
    ch0: &[i64],
    ch1: &[i64],
    w_ps: i64,
    m: i64,
    lo_i: usize,
    hi_i: usize,
) -> Vec<u64> {
    let l = m * w_ps;
    let mut bins = vec![0u64; (2 * m) as usize];
    if lo_i >= hi_i || ch1.is_empty() {
        return bins;
    }
    let mut j_start = ch1.partition_point(|&t| t < ch0[lo_i] - l);
    for &t0 in &ch0[lo_i..hi_i] {
        let lo = t0 - l;
        let hi = t0 + l;
        while j_start < ch1.len() && ch1[j_start] < lo {
            j_start += 1;
        }
        let mut j = j_start;
        while j < ch1.len() && ch1[j] < hi {
            bins[((ch1[j] - t0 + l) / w_ps) as usize] += 1;
            j += 1;
        }
    }
    bins
}

struct LinearGrid {
    w_ps: i64,
    m: i64,
}

fn linear_grid(stream: &TimeTagStream, bin_width_ns: f64, max_lag_ns: f64) -> Result<LinearGrid> {
    if !bin_width_ns.is_finite() || bin_width_ns <= 0.0 {
        return Err(Error::invalid("bin_width", format!("must be > 0, got {bin_width_ns}")));
    }
    if !max_lag_ns.is_finite() || max_lag_ns < bin_width_ns {
        return Err(Error::invalid("max_lag", "must be at least one bin width"));
    }
    let w_ps = (bin_width_ns * 1e3).round() as i64;
    if w_ps < 1 {
        return Err(Error::invalid("bin_width", "must be at least 1 ps"));
    }
    let max_lag_ps = (max_lag_ns * 1e3).round() as i64;
    // The window is rounded up to a whole number of bins.
    let m = (max_lag_ps + w_ps - 1) / w_ps;
    let duration_ns = stream.duration_ns();
    let l_ns = (m * w_ps) as f64 * 1e-3;
    if l_ns >= duration_ns / 2.0 {
        return Err(Error::LagExceedsDuration { max_lag_ns: l_ns, duration_ns });
    }
    Ok(LinearGrid { w_ps, m })
}

fn finish_linear(bins: Vec<u64>, grid: &LinearGrid, n0: u64, n1: u64, duration_ns: f64) -> G2Curve {
    let w_ns = grid.w_ps as f64 * 1e-3;
    let rate0 = n0 as f64 / duration_ns;
    let rate1 = n1 as f64 / duration_ns;
    let n_bins = bins.len();
    let mut lags = Vec::with_capacity(n_bins);
    let mut values = Vec::with_capacity(n_bins);
    let mut errors = Vec::with_capacity(n_bins);
    for (idx, &c) in bins.iter().enumerate() {
        let k = idx as i64 - grid.m;
        let center = (k as f64 + 0.5) * w_ns;
        // Pairs at lag tau can only start in the first T - |tau| of the record.
        let t_eff = duration_ns - center.abs();
        let denom = rate0 * rate1 * t_eff * w_ns;
        lags.push(center);
        values.push(c as f64 / denom);
        errors.push((c as f64).sqrt() / denom);
    }
    G2Curve {
        lags,
        values,
        errors,
        counts: bins,
        scheme: LagScheme::Linear,
        norm: NormalizationRecord { rate0, rate1, duration_ns, bin_widths_ns: vec![w_ns; n_bins] },
    }
}

fn channels_or_err(stream: &TimeTagStream) -> Result<(Vec<i64>, Vec<i64>)> {
    let ch0 = channel_i64(stream, 0);
    let ch1 = channel_i64(stream, 1);
    if ch0.is_empty() {
        return Err(Error::EmptyChannel { channel: 0 });
    }
    if ch1.is_empty() {
        return Err(Error::EmptyChannel { channel: 1 });
    }
    Ok((ch0, ch1))
}

/// Cross-correlation histogram of channel-1 minus channel-0 delays.
pub fn cross_correlate(
    stream: &TimeTagStream,
    bin_width_ns: f64,
    max_lag_ns: f64,
) -> Result<G2Curve> {
    let grid = linear_grid(stream, bin_width_ns, max_lag_ns)?;
    let (ch0, ch1) = channels_or_err(stream)?;
    let bins = correlate_kernel(&ch0, &ch1, grid.w_ps, grid.m, 0, ch0.len());
    Ok(finish_linear(bins, &grid, ch0.len() as u64, ch1.len() as u64, stream.duration_ns()))
}

/// Same histogram as [`cross_correlate`], computed over parallel slices of
/// channel 0. Every pair is owned by its channel-0 member, so slice
/// boundaries never double-count and the output is bit-identical to the
/// sequential sweep.
pub fn cross_correlate_par(
    stream: &TimeTagStream,
    bin_width_ns: f64,
    max_lag_ns: f64,
) -> Result<G2Curve> {
    let grid = linear_grid(stream, bin_width_ns, max_lag_ns)?;
    let (ch0, ch1) = channels_or_err(stream)?;
    let chunk = (ch0.len() / (8 * rayon::current_num_threads().max(1))).max(4096);
    let starts: Vec<usize> = (0..ch0.len()).step_by(chunk).collect();
    let bins = starts
        .into_par_iter()
        .map(|lo| correlate_kernel(&ch0, &ch1, grid.w_ps, grid.m, lo, (lo + chunk).min(ch0.len())))
        .reduce(
            || vec![0u64; (2 * grid.m) as usize],
            |mut acc, part| {
                for (a, p) in acc.iter_mut().zip(part) {
                    *a += p;
                }
                acc
            },
        );
    Ok(finish_linear(bins, &grid, ch0.len() as u64, ch1.len() as u64, stream.duration_ns()))
}

/// Incremental pairwise correlator with memory bounded by the lag window.
///
/// Feed tags in global time order; the histogram it accumulates is
/// bit-identical to [`cross_correlate`] on the same stream, because both
/// count exactly the pairs with delay in `[-L, L)` into the same bins.
pub struct StreamingCorrelator {
    w_ps: i64,
    m: i64,
    l_ps: i64,
    bins: Vec<u64>,
    win0: VecDeque<i64>,
    win1: VecDeque<i64>,
    n: [u64; 2],
    last_global: i64,
    last_ch: [i64; 2],
    max_seen: i64,
}

impl StreamingCorrelator {
    pub fn new(bin_width_ns: f64, max_lag_ns: f64) -> Result<Self> {
        if !bin_width_ns.is_finite() || bin_width_ns <= 0.0 {
            return Err(Error::invalid("bin_width", format!("must be > 0, got {bin_width_ns}")));
        }
        if !max_lag_ns.is_finite() || max_lag_ns < bin_width_ns {
            return Err(Error::invalid("max_lag", "must be at least one bin width"));
        }
        let w_ps = (bin_width_ns * 1e3).round() as i64;
        if w_ps < 1 {
            return Err(Error::invalid("bin_width", "must be at least 1 ps"));
        }
        let max_lag_ps = (max_lag_ns * 1e3).round() as i64;
        let m = (max_lag_ps + w_ps - 1) / w_ps;
        Ok(StreamingCorrelator {
            w_ps,
            m,
            l_ps: m * w_ps,
            bins: vec![0; (2 * m) as usize],
            win0: VecDeque::new(),
            win1: VecDeque::new(),
            n: [0, 0],
            last_global: i64::MIN,
            last_ch: [i64::MIN, i64::MIN],
            max_seen: 0,
        })
    }

    pub fn push(&mut self, tag: Tag) -> Result<()> {
        if tag.channel > 1 {
            return Err(Error::MalformedStream(format!("channel {} out of range", tag.channel)));
        }
        let t = tag.time_ps as i64;
        if t < self.last_global {
            return Err(Error::MalformedStream("tags not globally ordered".into()));
        }
        if t <= self.last_ch[tag.channel as usize] {
            return Err(Error::MalformedStream(format!(
                "channel {} not strictly increasing at {} ps",
                tag.channel, tag.time_ps
            )));
        }
        self.last_global = t;
        self.last_ch[tag.channel as usize] = t;
        self.max_seen = self.max_seen.max(t);
        self.n[tag.channel as usize] += 1;
        let l = self.l_ps;
        if tag.channel == 0 {
            // Pairs with earlier channel-1 tags: delay in [-L, 0].
            while self.win1.front().is_some_and(|&t1| t1 < t - l) {
                self.win1.pop_front();
            }
            for &t1 in &self.win1 {
                self.bins[((t1 - t + l) / self.w_ps) as usize] += 1;
            }
            self.win0.push_back(t);
        } else {
            // Pairs with earlier channel-0 tags: delay in [0, L).
            while self.win0.front().is_some_and(|&t0| t0 <= t - l) {
                self.win0.pop_front();
            }
            for &t0 in &self.win0 {
                self.bins[((t - t0 + l) / self.w_ps) as usize] += 1;
            }
            self.win1.push_back(t);
        }
        Ok(())
    }

    /// Normalizes the accumulated histogram against the stated duration.
    pub fn finish(self, duration_ps: u64) -> Result<G2Curve> {
        if self.n[0] == 0 {
            return Err(Error::EmptyChannel { channel: 0 });
        }
        if self.n[1] == 0 {
            return Err(Error::EmptyChannel { channel: 1 });
        }
        if self.max_seen > duration_ps as i64 {
            return Err(Error::MalformedStream("tag past stated duration".into()));
        }
        let duration_ns = ps_to_ns(duration_ps);
        let l_ns = self.l_ps as f64 * 1e-3;
        if l_ns >= duration_ns / 2.0 {
            return Err(Error::LagExceedsDuration { max_lag_ns: l_ns, duration_ns });
        }
        let grid = LinearGrid { w_ps: self.w_ps, m: self.m };
        Ok(finish_linear(self.bins, &grid, self.n[0], self.n[1], duration_ns))
    }
}

/// Run-length cell counts of a sorted tag list at resolution `q` ps.
fn cell_counts(ts: &[i64], q: i64) -> Vec<(i64, u32)> {
    let mut out: Vec<(i64, u32)> = Vec::new();
    for &t in ts {
        let c = t / q;
        match out.last_mut() {
            Some((idx, n)) if *idx == c => *n += 1,
            _ => out.push((c, 1)),
        }
    }
    out
}

/// Number of pairs (ta, tb) whose cell difference cb - ca lies in [d_lo, d_hi).
fn count_cell_pairs(a: &[(i64, u32)], b: &[(i64, u32)], d_lo: i64, d_hi: i64) -> u64 {
    let mut total = 0u64;
    let mut j_start = 0usize;
    for &(ca, na) in a {
        let lo = ca + d_lo;
        let hi = ca + d_hi;
        while j_start < b.len() && b[j_start].0 < lo {
            j_start += 1;
        }
        let mut j = j_start;
        while j < b.len() && b[j].0 < hi {
            total += na as u64 * b[j].1 as u64;
            j += 1;
        }
    }
    total
}

/// Folded correlation on a logarithmic lag grid.
///
/// Each bin is estimated by multi-resolution coincidence counting: tags are
/// rebinned to cells no wider than an eighth of the lag bin, and pairs are
/// counted by cell products over both delay signs. Against the pairwise
/// estimator this blurs each bin edge by at most one cell, which is well
/// inside the bin, while keeping wide-lag bins tractable. Bin centers are
/// geometric means of the realized edges. Error bars carry a multiple-
/// pairing factor `1 + (r0 + r1) W` on top of the Poisson term, since for
/// wide windows `W` every photon takes part in many pairs.
pub fn log_correlate(
    stream: &TimeTagStream,
    min_lag_ns: f64,
    max_lag_ns: f64,
    points_per_decade: u32,
) -> Result<G2Curve> {
    let duration_ns = stream.duration_ns();
    if !min_lag_ns.is_finite() || min_lag_ns < 1.0 {
        return Err(Error::invalid("min_lag", "must be at least 1 ns"));
    }
    if !max_lag_ns.is_finite() || max_lag_ns <= min_lag_ns {
        return Err(Error::invalid("max_lag", "must exceed min_lag"));
    }
    if max_lag_ns > duration_ns / 10.0 {
        return Err(Error::LagExceedsDuration { max_lag_ns, duration_ns });
    }
    if points_per_decade == 0 {
        return Err(Error::invalid("points_per_decade", "must be >= 1"));
    }
    let (ch0, ch1) = channels_or_err(stream)?;
    let rate0 = ch0.len() as f64 / duration_ns;
    let rate1 = ch1.len() as f64 / duration_ns;

    let decades = (max_lag_ns / min_lag_ns).log10();
    let n_bins = (decades * points_per_decade as f64).ceil().max(1.0) as usize;
    let ratio = max_lag_ns / min_lag_ns;

    let mut lags = Vec::new();
    let mut values = Vec::new();
    let mut errors = Vec::new();
    let mut counts = Vec::new();
    let mut widths = Vec::new();
    for i in 0..n_bins {
        let lo_ns = min_lag_ns * ratio.powf(i as f64 / n_bins as f64);
        let hi_ns = min_lag_ns * ratio.powf((i + 1) as f64 / n_bins as f64);
        let lo_ps = (lo_ns * 1e3).round() as i64;
        let hi_ps = (hi_ns * 1e3).round() as i64;
        if hi_ps <= lo_ps {
            continue;
        }
        let q = ((hi_ps - lo_ps) / 8).max(1);
        let d_lo = ((lo_ps + q / 2) / q).max(1);
        let d_hi = ((hi_ps + q / 2) / q).max(d_lo + 1);
        let cells0 = cell_counts(&ch0, q);
        let cells1 = cell_counts(&ch1, q);
        let c = count_cell_pairs(&cells0, &cells1, d_lo, d_hi)
            + count_cell_pairs(&cells1, &cells0, d_lo, d_hi);
        let lo_real = (d_lo * q) as f64 * 1e-3;
        let hi_real = (d_hi * q) as f64 * 1e-3;
        let center = (lo_real * hi_real).sqrt();
        if lags.last().is_some_and(|&prev| center <= prev) {
            continue;
        }
        let width_total = 2.0 * (hi_real - lo_real);
        let t_eff = duration_ns - center;
        let denom = rate0 * rate1 * t_eff * width_total;
        let var_factor = 1.0 + (rate0 + rate1) * width_total;
        lags.push(center);
        values.push(c as f64 / denom);
        errors.push((c as f64 * var_factor).sqrt() / denom);
        counts.push(c);
        widths.push(width_total);
    }
    let curve = G2Curve {
        lags,
        values,
        errors,
        counts,
        scheme: LagScheme::Log,
        norm: NormalizationRecord { rate0, rate1, duration_ns, bin_widths_ns: widths },
    };
    curve.validate()?;
    Ok(curve)
}

/// Start-stop delay histogram: each channel-0 tag pairs only with the next
/// channel-1 tag. Diagnostic only; the estimator under-counts long delays
/// once lags approach the mean inter-arrival time, so quantitative work
/// should use [`cross_correlate`].
pub fn start_stop_correlate(
    stream: &TimeTagStream,
    bin_width_ns: f64,
    max_lag_ns: f64,
) -> Result<G2Curve> {
    let grid = linear_grid(stream, bin_width_ns, max_lag_ns)?;
    let (ch0, ch1) = channels_or_err(stream)?;
    let l = grid.m * grid.w_ps;
    let mut bins = vec![0u64; (2 * grid.m) as usize];
    for &t0 in &ch0 {
        let j = ch1.partition_point(|&t| t <= t0);
        if j < ch1.len() && ch1[j] - t0 < l {
            bins[((ch1[j] - t0 + l) / grid.w_ps) as usize] += 1;
        }
    }
    Ok(finish_linear(bins, &grid, ch0.len() as u64, ch1.len() as u64, stream.duration_ns()))
}

/// Counts per time bin over both channels; the trailing partial bin is kept
/// so the series always sums to the tag count.
pub fn intensity_trace(stream: &TimeTagStream, bin_ns: f64) -> Result<Vec<u64>> {
    if !bin_ns.is_finite() || bin_ns <= 0.0 {
        return Err(Error::invalid("bin", format!("must be > 0, got {bin_ns}")));
    }
    let duration_ns = stream.duration_ns();
    let n_bins = (duration_ns / bin_ns).ceil() as usize;
    let mut series = vec![0u64; n_bins];
    if n_bins == 0 {
        return Ok(series);
    }
    for tag in &stream.tags {
        let idx = ((ps_to_ns(tag.time_ps) / bin_ns) as usize).min(n_bins - 1);
        series[idx] += 1;
    }
    Ok(series)
}

/// Histogram of emission delays relative to the previous sync tag.
pub fn tcspc_histogram(
    emissions: &[f64],
    syncs: &[f64],
    bin_ns: f64,
    window_ns: f64,
) -> Result<TcspcHistogram> {
    if syncs.is_empty() {
        return Err(Error::InsufficientData("no sync tags".into()));
    }
    if !bin_ns.is_finite() || bin_ns <= 0.0 {
        return Err(Error::invalid("bin", format!("must be > 0, got {bin_ns}")));
    }
    if !window_ns.is_finite() || window_ns < bin_ns {
        return Err(Error::invalid("window", "must be at least one bin"));
    }
    if syncs.windows(2).any(|w| w[0] > w[1]) || emissions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("tags", "must be sorted"));
    }
    let n_bins = (window_ns / bin_ns).ceil() as usize;
    let mut counts = vec![0u64; n_bins];
    for &e in emissions {
        let i = syncs.partition_point(|&s| s <= e);
        if i == 0 {
            continue;
        }
        let delay = e - syncs[i - 1];
        let idx = (delay / bin_ns) as usize;
        if idx < n_bins {
            counts[idx] += 1;
        }
    }
    let edges = (0..=n_bins).map(|i| i as f64 * bin_ns).collect();
    Ok(TcspcHistogram { edges, counts, sync_count: syncs.len() as u64 })
}

/// Reads a pulsed stream (emissions on channel 0, syncs on channel 1) into
/// a delay histogram.
pub fn tcspc_from_stream(
    stream: &TimeTagStream,
    bin_ns: f64,
    window_ns: f64,
) -> Result<TcspcHistogram> {
    let emissions: Vec<f64> = stream.channel_times(0).iter().map(|&t| ps_to_ns(t)).collect();
    let syncs: Vec<f64> = stream.channel_times(1).iter().map(|&t| ps_to_ns(t)).collect();
    tcspc_histogram(&emissions, &syncs, bin_ns, window_ns)
}
