//! Stochastic photon streams from the three-level kinetics.
//!
//! Emission is realized as an exact continuous-time Markov chain: waiting
//! times are sampled per transition with no time discretization, so the
//! generated statistics carry no binning bias. Detector imperfections are a
//! separate pass (thinning, Gaussian jitter, dark counts, dead time), and a
//! balanced beamsplitter routes detections onto two channels. Timestamps
//! leave the module quantized to integer picoseconds; the generator is
//! ChaCha8, so a seed pins the stream bit-for-bit on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinetics::RateModel;

/// Detection chain parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorModel {
    /// Probability that an arriving photon is registered.
    pub efficiency: f64,
    /// Gaussian timing jitter standard deviation (ns).
    pub jitter_sigma: f64,
    /// Hold-off after each registered tag (ns).
    pub dead_time: f64,
    /// Dark count rate (counts per ns).
    pub dark_rate: f64,
}

impl DetectorModel {
    /// A detector that passes every photon through unchanged.
    pub fn ideal() -> Self {
        DetectorModel { efficiency: 1.0, jitter_sigma: 0.0, dead_time: 0.0, dark_rate: 0.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.efficiency) {
            return Err(Error::invalid(
                "efficiency",
                format!("must be in [0, 1], got {}", self.efficiency),
            ));
        }
        for (name, v) in [
            ("jitter_sigma", self.jitter_sigma),
            ("dead_time", self.dead_time),
            ("dark_rate", self.dark_rate),
        ] {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::invalid(name, format!("must be finite and >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

impl Default for DetectorModel {
    /// Plausible hardware placeholders; no published figures stand behind
    /// them, so nothing quantitative should depend on these defaults.
    fn default() -> Self {
        DetectorModel { efficiency: 1.0, jitter_sigma: 0.2, dead_time: 25.0, dark_rate: 0.0 }
    }
}

/// Pulsed excitation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulsedExcitation {
    /// Pulse repetition period (ns).
    pub rep_period: f64,
    /// Pulse width (ns); excitation lands uniformly within it.
    pub pulse_width: f64,
    /// Probability that a pulse promotes the ground state.
    pub excitation_prob: f64,
}

impl PulsedExcitation {
    pub fn validate(&self) -> Result<()> {
        if !self.rep_period.is_finite() || self.rep_period <= 0.0 {
            return Err(Error::invalid(
                "rep_period",
                format!("must be > 0, got {}", self.rep_period),
            ));
        }
        if !self.pulse_width.is_finite()
            || self.pulse_width < 0.0
            || self.pulse_width >= self.rep_period
        {
            return Err(Error::invalid("pulse_width", "must be in [0, rep_period)"));
        }
        if !(0.0..=1.0).contains(&self.excitation_prob) {
            return Err(Error::invalid("excitation_prob", "must be in [0, 1]"));
        }
        Ok(())
    }
}

/// One detection event; times are integer picoseconds from stream start.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tag {
    pub time_ps: u64,
    pub channel: u8,
}

/// Provenance carried along with a stream.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Origin {
    pub description: String,
    pub seed: Option<u64>,
}

/// An ordered two-channel time-tag record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeTagStream {
    pub tags: Vec<Tag>,
    pub duration_ps: u64,
    pub origin: Origin,
}

/// Rounds a nanosecond timestamp to integer picoseconds.
pub fn ns_to_ps(t_ns: f64) -> u64 {
    (t_ns * 1e3).round().max(0.0) as u64
}

/// Converts integer picoseconds back to nanoseconds.
pub fn ps_to_ns(t_ps: u64) -> f64 {
    t_ps as f64 * 1e-3
}

/// Quantizes one channel to ps, nudging ties forward so timestamps stay
/// strictly increasing. Input must be sorted; events past the end are cut.
fn quantize_channel(times_ns: &[f64], duration_ps: u64) -> Vec<u64> {
    let mut out = Vec::with_capacity(times_ns.len());
    let mut last: Option<u64> = None;
    for &t in times_ns {
        let mut ps = ns_to_ps(t);
        if let Some(prev) = last {
            if ps <= prev {
                ps = prev + 1;
            }
        }
        if ps > duration_ps {
            break;
        }
        out.push(ps);
        last = Some(ps);
    }
    out
}

fn merge_channels(ch0: Vec<u64>, ch1: Vec<u64>) -> Vec<Tag> {
    let mut tags = Vec::with_capacity(ch0.len() + ch1.len());
    let (mut i, mut j) = (0, 0);
    while i < ch0.len() || j < ch1.len() {
        let take0 = j >= ch1.len() || (i < ch0.len() && ch0[i] <= ch1[j]);
        if take0 {
            tags.push(Tag { time_ps: ch0[i], channel: 0 });
            i += 1;
        } else {
            tags.push(Tag { time_ps: ch1[j], channel: 1 });
            j += 1;
        }
    }
    tags
}

impl TimeTagStream {
    pub fn new(tags: Vec<Tag>, duration_ps: u64, origin: Origin) -> Result<Self> {
        let stream = TimeTagStream { tags, duration_ps, origin };
        stream.validate()?;
        Ok(stream)
    }

    /// Builds a stream from per-channel nanosecond timestamps, quantizing to
    /// ps and nudging quantization ties to keep per-channel strict order.
    pub fn from_ns_channels(
        ch0: &[f64],
        ch1: &[f64],
        duration_ns: f64,
        origin: Origin,
    ) -> Result<Self> {
        for (name, ch) in [("channel 0", ch0), ("channel 1", ch1)] {
            if ch.windows(2).any(|w| w[0] > w[1]) {
                return Err(Error::MalformedStream(format!("{name} input not sorted")));
            }
        }
        let duration_ps = ns_to_ps(duration_ns);
        let q0 = quantize_channel(ch0, duration_ps);
        let q1 = quantize_channel(ch1, duration_ps);
        TimeTagStream::new(merge_channels(q0, q1), duration_ps, origin)
    }

    /// Builds a stream from already quantized per-channel timestamps.
    pub fn from_ps_channels(
        ch0: Vec<u64>,
        ch1: Vec<u64>,
        duration_ps: u64,
        origin: Origin,
    ) -> Result<Self> {
        TimeTagStream::new(merge_channels(ch0, ch1), duration_ps, origin)
    }

    /// Checks ordering, channel labels and the duration bound.
    pub fn validate(&self) -> Result<()> {
        let mut last: [Option<u64>; 2] = [None, None];
        let mut prev_global: Option<u64> = None;
        for tag in &self.tags {
            if tag.channel > 1 {
                return Err(Error::MalformedStream(format!(
                    "channel {} out of range",
                    tag.channel
                )));
            }
            if tag.time_ps > self.duration_ps {
                return Err(Error::MalformedStream(format!(
                    "tag at {} ps past duration {} ps",
                    tag.time_ps, self.duration_ps
                )));
            }
            if let Some(p) = prev_global {
                if tag.time_ps < p {
                    return Err(Error::MalformedStream("tags not globally ordered".into()));
                }
            }
            prev_global = Some(tag.time_ps);
            let slot = &mut last[tag.channel as usize];
            if let Some(p) = *slot {
                if tag.time_ps <= p {
                    return Err(Error::MalformedStream(format!(
                        "channel {} not strictly increasing at {} ps",
                        tag.channel, tag.time_ps
                    )));
                }
            }
            *slot = Some(tag.time_ps);
        }
        Ok(())
    }

    /// Timestamps of one channel, in order.
    pub fn channel_times(&self, channel: u8) -> Vec<u64> {
        self.tags.iter().filter(|t| t.channel == channel).map(|t| t.time_ps).collect()
    }

    pub fn channel_len(&self, channel: u8) -> usize {
        self.tags.iter().filter(|t| t.channel == channel).count()
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn duration_ns(&self) -> f64 {
        ps_to_ns(self.duration_ps)
    }
}

/// Mixes a pipeline seed with a stage salt so the per-stage generators are
/// decorrelated but still fully determined by one seed.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Continuous-wave emission timestamps (ns) over `[0, duration_ns)`.
///
/// Next-event sampling over the instantaneous rates at `power`; a photon is
/// recorded at every radiative |2> -> |1> transition. A zero pump rate gives
/// an empty stream, and a shelved chain with no deshelving path simply goes
/// dark for the rest of the run.
pub fn simulate_cw(
    model: &RateModel<f64>,
    power: f64,
    duration_ns: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    model.validate()?;
    if !duration_ns.is_finite() || duration_ns < 0.0 {
        return Err(Error::invalid(
            "duration",
            format!("must be finite and >= 0, got {duration_ns}"),
        ));
    }
    let rates = model.rates_at_power(power)?;
    let mut out = Vec::new();
    if rates.k12 <= 0.0 || duration_ns == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pump = Exp::new(rates.k12).expect("validated rate");
    let decay_total = rates.k21 + rates.k23;
    let decay = Exp::new(decay_total).expect("validated rate");
    let emit_prob = rates.k21 / decay_total;
    let deshelve = (rates.k31 > 0.0).then(|| Exp::new(rates.k31).expect("validated rate"));
    out.reserve((duration_ns * rates.k21 * 0.25) as usize);

    let mut t = 0.0_f64;
    let mut state = 1_u8;
    while t < duration_ns {
        match state {
            1 => {
                t += pump.sample(&mut rng);
                state = 2;
            }
            2 => {
                t += decay.sample(&mut rng);
                if rng.random::<f64>() < emit_prob {
                    if t < duration_ns {
                        out.push(t);
                    }
                    state = 1;
                } else {
                    state = 3;
                }
            }
            _ => match &deshelve {
                Some(d) => {
                    t += d.sample(&mut rng);
                    state = 1;
                }
                None => break,
            },
        }
    }
    Ok(out)
}

/// Pulsed-excitation run: returns (emission times, sync times) in ns.
///
/// Every pulse emits a sync tag; a pulse that finds the emitter in the
/// ground state promotes it with the configured probability, after which
/// the decay chain follows the zero-power rates (deshelving at `k31_0`).
pub fn simulate_pulsed(
    model: &RateModel<f64>,
    pulsed: &PulsedExcitation,
    duration_ns: f64,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    model.validate()?;
    pulsed.validate()?;
    if !duration_ns.is_finite() || duration_ns < 0.0 {
        return Err(Error::invalid(
            "duration",
            format!("must be finite and >= 0, got {duration_ns}"),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let decay_total = model.k21 + model.k23;
    let decay = Exp::new(decay_total).expect("validated rate");
    let emit_prob = model.k21 / decay_total;
    let deshelve = (model.k31_0 > 0.0).then(|| Exp::new(model.k31_0).expect("validated rate"));

    let mut emissions = Vec::new();
    let mut syncs = Vec::new();
    // Time at which the emitter is back in the ground state.
    let mut idle_from = 0.0_f64;
    let mut k = 0_u64;
    loop {
        let t_sync = k as f64 * pulsed.rep_period;
        if t_sync >= duration_ns {
            break;
        }
        syncs.push(t_sync);
        k += 1;
        if t_sync < idle_from || rng.random::<f64>() >= pulsed.excitation_prob {
            continue;
        }
        let t_exc = t_sync
            + if pulsed.pulse_width > 0.0 { rng.random::<f64>() * pulsed.pulse_width } else { 0.0 };
        let t_decay = t_exc + decay.sample(&mut rng);
        if rng.random::<f64>() < emit_prob {
            if t_decay < duration_ns {
                emissions.push(t_decay);
            }
            idle_from = t_decay;
        } else {
            idle_from = match &deshelve {
                Some(d) => t_decay + d.sample(&mut rng),
                None => f64::INFINITY,
            };
        }
    }
    Ok((emissions, syncs))
}

/// Runs sorted emission times through the detector chain: Bernoulli
/// thinning, Gaussian jitter, Poisson dark counts, then dead-time pruning.
pub fn apply_detector(
    emissions: &[f64],
    det: &DetectorModel,
    duration_ns: f64,
    seed: u64,
) -> Result<Vec<f64>> {
    det.validate()?;
    if emissions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("emissions", "must be sorted"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kept: Vec<f64> = if det.efficiency >= 1.0 {
        emissions.to_vec()
    } else {
        emissions.iter().copied().filter(|_| rng.random::<f64>() < det.efficiency).collect()
    };
    let mut needs_sort = false;
    if det.jitter_sigma > 0.0 {
        let jitter = Normal::new(0.0, det.jitter_sigma).expect("validated sigma");
        for t in kept.iter_mut() {
            *t += jitter.sample(&mut rng);
        }
        kept.retain(|&t| (0.0..=duration_ns).contains(&t));
        needs_sort = true;
    }
    if det.dark_rate > 0.0 {
        let gap = Exp::new(det.dark_rate).expect("validated rate");
        let mut t = gap.sample(&mut rng);
        while t < duration_ns {
            kept.push(t);
            t += gap.sample(&mut rng);
        }
        needs_sort = true;
    }
    if needs_sort {
        kept.sort_unstable_by(f64::total_cmp);
    }
    if det.dead_time > 0.0 {
        let mut out = Vec::with_capacity(kept.len());
        let mut last = f64::NEG_INFINITY;
        for &t in &kept {
            if t - last >= det.dead_time {
                out.push(t);
                last = t;
            }
        }
        kept = out;
    }
    Ok(kept)
}

/// Routes detections through a balanced beamsplitter onto channels 0 and 1.
pub fn split_hbt(
    detected: &[f64],
    duration_ns: f64,
    seed: u64,
    origin: Origin,
) -> Result<TimeTagStream> {
    if detected.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::invalid("detected", "must be sorted"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ch0 = Vec::with_capacity(detected.len() / 2 + 1);
    let mut ch1 = Vec::with_capacity(detected.len() / 2 + 1);
    for &t in detected {
        if rng.random_bool(0.5) {
            ch1.push(t);
        } else {
            ch0.push(t);
        }
    }
    TimeTagStream::from_ns_channels(&ch0, &ch1, duration_ns, origin)
}

/// Full continuous-wave pipeline: emitter, detector, beamsplitter.
pub fn simulate_hbt_cw(
    model: &RateModel<f64>,
    power: f64,
    duration_ns: f64,
    det: &DetectorModel,
    seed: u64,
) -> Result<TimeTagStream> {
    let emissions = simulate_cw(model, power, duration_ns, derive_seed(seed, 1))?;
    let detected = apply_detector(&emissions, det, duration_ns, derive_seed(seed, 2))?;
    let origin = Origin { description: format!("cw simulation at {power} uW"), seed: Some(seed) };
    split_hbt(&detected, duration_ns, derive_seed(seed, 3), origin)
}

/// Full pulsed pipeline; emissions go to channel 0, syncs to channel 1.
pub fn simulate_pulsed_stream(
    model: &RateModel<f64>,
    pulsed: &PulsedExcitation,
    det: &DetectorModel,
    duration_ns: f64,
    seed: u64,
) -> Result<TimeTagStream> {
    let (emissions, syncs) = simulate_pulsed(model, pulsed, duration_ns, derive_seed(seed, 1))?;
    let detected = apply_detector(&emissions, det, duration_ns, derive_seed(seed, 2))?;
    let origin = Origin {
        description: format!("pulsed simulation, period {} ns", pulsed.rep_period),
        seed: Some(seed),
    };
    TimeTagStream::from_ns_channels(&detected, &syncs, duration_ns, origin)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> RateModel<f64> {
        RateModel::new(0.678, 0.127, 0.024, 9.27e-4, 0.0).unwrap()
    }

    #[test]
    fn zero_duration_is_empty() {
        assert!(simulate_cw(&model(), 500.0, 0.0, 7).unwrap().is_empty());
    }

    #[test]
    fn zero_power_is_empty() {
        assert!(simulate_cw(&model(), 0.0, 1e5, 7).unwrap().is_empty());
    }

    #[test]
    fn emissions_sorted_and_in_range() {
        let e = simulate_cw(&model(), 500.0, 1e5, 42).unwrap();
        assert!(!e.is_empty());
        assert!(e.windows(2).all(|w| w[0] <= w[1]));
        assert!(e.iter().all(|&t| (0.0..1e5).contains(&t)));
    }

    #[test]
    fn same_seed_same_stream() {
        let a = simulate_cw(&model(), 500.0, 1e5, 9).unwrap();
        let b = simulate_cw(&model(), 500.0, 1e5, 9).unwrap();
        let c = simulate_cw(&model(), 500.0, 1e5, 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ideal_detector_is_identity() {
        let e = simulate_cw(&model(), 500.0, 1e5, 3).unwrap();
        let d = apply_detector(&e, &DetectorModel::ideal(), 1e5, 11).unwrap();
        assert_eq!(e, d);
    }

    #[test]
    fn dead_time_enforced() {
        let det =
            DetectorModel { efficiency: 1.0, jitter_sigma: 0.0, dead_time: 30.0, dark_rate: 0.0 };
        let e = simulate_cw(&model(), 2000.0, 1e5, 5).unwrap();
        let d = apply_detector(&e, &det, 1e5, 11).unwrap();
        assert!(!d.is_empty());
        assert!(d.windows(2).all(|w| w[1] - w[0] >= 30.0));
    }

    #[test]
    fn split_preserves_tags_and_order() {
        let e = simulate_cw(&model(), 500.0, 1e5, 3).unwrap();
        let stream = split_hbt(&e, 1e5, 21, Origin::default()).unwrap();
        stream.validate().unwrap();
        assert_eq!(stream.len(), e.len());
        assert!(stream.channel_len(0) > 0 && stream.channel_len(1) > 0);
    }

    #[test]
    fn split_empty_is_empty() {
        let stream = split_hbt(&[], 1e3, 21, Origin::default()).unwrap();
        assert!(stream.is_empty());
        assert_eq!(stream.duration_ps, 1_000_000);
    }

    #[test]
    fn quantization_ties_are_nudged() {
        let stream =
            TimeTagStream::from_ns_channels(&[1.0000001, 1.0000004], &[], 10.0, Origin::default())
                .unwrap();
        assert_eq!(stream.channel_times(0), vec![1000, 1001]);
    }

    #[test]
    fn pulsed_without_excitation_only_syncs() {
        let pulsed =
            PulsedExcitation { rep_period: 100.0, pulse_width: 0.032, excitation_prob: 0.0 };
        let (em, sy) = simulate_pulsed(&model(), &pulsed, 1e4, 1).unwrap();
        assert!(em.is_empty());
        assert_eq!(sy.len(), 100);
    }

    #[test]
    fn pulsed_emissions_follow_syncs() {
        let pulsed =
            PulsedExcitation { rep_period: 100.0, pulse_width: 0.032, excitation_prob: 0.9 };
        let (em, sy) = simulate_pulsed(&model(), &pulsed, 1e5, 2).unwrap();
        assert!(!em.is_empty());
        assert!(em.windows(2).all(|w| w[0] <= w[1]));
        assert_eq!(sy.len(), 1000);
    }

    #[test]
    fn malformed_streams_rejected() {
        let bad = vec![Tag { time_ps: 10, channel: 0 }, Tag { time_ps: 10, channel: 0 }];
        assert!(TimeTagStream::new(bad, 100, Origin::default()).is_err());
        let late = vec![Tag { time_ps: 200, channel: 0 }];
        assert!(TimeTagStream::new(late, 100, Origin::default()).is_err());
    }
}
