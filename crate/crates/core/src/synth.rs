//! Synthetic paired PPG/ECG with exact ground truth.
//!
//! The ECG is a sum of Gaussian bumps per beat (P, Q, R, S, T) with the R
//! bump centred exactly on an integer sample. The PPG is a smooth systolic
//! pulse plus a dicrotic wave, starting a fixed delay after each R-peak.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{PairedWindow, PreprocessConfig, Signal};
use crate::error::{Error, Result};
use crate::qrs::RPeakSet;

/// Offset (s), amplitude and width (s) of one ECG wave relative to its R-peak.
struct Wave {
    offset: f64,
    amp: f64,
    width: f64,
}

const P: Wave = Wave { offset: -0.2, amp: 0.12, width: 0.025 };
const Q: Wave = Wave { offset: -0.025, amp: -0.12, width: 0.01 };
const R: Wave = Wave { offset: 0.0, amp: 1.0, width: 0.01 };
const S: Wave = Wave { offset: 0.025, amp: -0.25, width: 0.01 };
/// T-wave offset scales with `sqrt(RR)`.
const T_WAVE: Wave = Wave { offset: 0.3, amp: 0.3, width: 0.06 };

const PULSE_PEAK_S: f64 = 0.15;
const DICROTIC_DELAY_S: f64 = 0.3;
const DICROTIC_AMP: f64 = 0.35;
const DICROTIC_WIDTH_S: f64 = 0.05;
/// Support of one PPG pulse after its onset.
const PULSE_SPAN_S: f64 = 1.5;

pub const DEFAULT_PPG_DELAY_MS: f64 = 200.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub hr_bpm: f64,
    /// Each RR interval is scaled by `1 + u * rr_jitter`, `u` uniform in [-1, 1].
    pub rr_jitter: f64,
    pub duration_s: f64,
    pub rate_hz: f64,
    pub noise_std: f64,
    pub seed: u64,
    /// Time of the first R-peak.
    #[serde(default)]
    pub first_beat_s: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            hr_bpm: 60.0,
            rr_jitter: 0.0,
            duration_s: 8.0,
            rate_hz: 128.0,
            noise_std: 0.0,
            seed: 0,
            first_beat_s: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(30.0..=220.0).contains(&self.hr_bpm) {
            return Err(Error::invalid(format!("hr_bpm {} outside [30, 220]", self.hr_bpm)));
        }
        if !(0.0..=0.2).contains(&self.rr_jitter) {
            return Err(Error::invalid(format!("rr_jitter {} outside [0, 0.2]", self.rr_jitter)));
        }
        if !(self.duration_s > 0.0 && self.rate_hz > 0.0 && self.duration_s.is_finite() && self.rate_hz.is_finite()) {
            return Err(Error::invalid("duration_s and rate_hz must be positive"));
        }
        if !(self.noise_std >= 0.0) || !self.first_beat_s.is_finite() {
            return Err(Error::invalid("noise_std must be non-negative"));
        }
        Ok(())
    }

    fn samples(&self) -> usize {
        (self.duration_s * self.rate_hz).round() as usize
    }
}

fn gauss(t: f64, w: &Wave, center: f64) -> f64 {
    let d = (t - center - w.offset) / w.width;
    w.amp * (-0.5 * d * d).exp()
}

/// Beat positions in samples, including beats just outside the span whose
/// waves reach into it. Only in-span positions are true R-peaks.
fn beat_positions(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<i64> {
    let rr = 60.0 / spec.hr_bpm;
    let first = (spec.first_beat_s * spec.rate_hz).round() as i64;
    let n = spec.samples() as i64;
    let lead = (1.5 * spec.rate_hz) as i64;
    let draw = |rng: &mut ChaCha8Rng| {
        let u: f64 = if spec.rr_jitter > 0.0 { rng.random_range(-1.0..=1.0) } else { 0.0 };
        ((rr * (1.0 + u * spec.rr_jitter)) * spec.rate_hz).round().max(1.0) as i64
    };
    let mut before = Vec::new();
    let mut p = first;
    while p > -lead {
        p -= draw(rng);
        before.push(p);
    }
    before.reverse();
    let mut beats = before;
    p = first;
    while p < n + lead {
        beats.push(p);
        p += draw(rng);
    }
    beats
}

fn ecg_from_beats(beats: &[i64], n: usize, rate: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for (k, &b) in beats.iter().enumerate() {
        let rr = match (k.checked_sub(1).map(|j| beats[j]), beats.get(k + 1)) {
            (_, Some(&next)) => (next - b) as f64 / rate,
            (Some(prev), None) => (b - prev) as f64 / rate,
            (None, None) => 1.0,
        };
        let center = b as f64 / rate;
        let t_wave = Wave {
            offset: T_WAVE.offset * rr.sqrt(),
            ..T_WAVE
        };
        let lo = ((center - 0.4) * rate).floor().max(0.0) as usize;
        let hi = (((center + 0.7) * rate).ceil().max(0.0) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            let t = i as f64 / rate;
            *v += gauss(t, &P, center) + gauss(t, &Q, center) + gauss(t, &R, center) + gauss(t, &S, center) + gauss(t, &t_wave, center);
        }
    }
    x
}

/// One PPG pulse `tau` seconds after its onset.
fn pulse(tau: f64) -> f64 {
    if tau <= 0.0 {
        return 0.0;
    }
    let r = tau / PULSE_PEAK_S;
    let systolic = r * r * (2.0 * (1.0 - r)).exp();
    let d = (tau - DICROTIC_DELAY_S) / DICROTIC_WIDTH_S;
    systolic + DICROTIC_AMP * (-0.5 * d * d).exp() * smooth_onset(tau)
}

/// Keeps the dicrotic wave from leaking before the pulse onset.
fn smooth_onset(tau: f64) -> f64 {
    let r = (tau / PULSE_PEAK_S).min(1.0);
    r * r * (3.0 - 2.0 * r)
}

fn ppg_from_beats(beats: &[i64], n: usize, rate: f64, delay_s: f64) -> Vec<f64> {
    let mut x = vec![0.0; n];
    for &b in beats {
        let onset = b as f64 / rate + delay_s;
        let lo = (onset * rate).floor().max(0.0) as usize;
        let hi = (((onset + PULSE_SPAN_S) * rate).ceil().max(0.0) as usize).min(n);
        for (i, v) in x.iter_mut().enumerate().take(hi).skip(lo) {
            *v += pulse(i as f64 / rate - onset);
        }
    }
    x
}

fn add_noise(x: &mut [f64], std: f64, rng: &mut ChaCha8Rng) {
    if std > 0.0 {
        for v in x {
            let e: f64 = rng.sample(StandardNormal);
            *v += std * e;
        }
    }
}

fn in_span(beats: &[i64], n: usize) -> Vec<usize> {
    beats.iter().filter(|&&b| b >= 0 && (b as usize) < n).map(|&b| b as usize).collect()
}

/// Gaussian-bump ECG and its exact R-peak indices.
pub fn gen_ecg(spec: &SynthSpec) -> Result<(Signal, RPeakSet)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.samples();
    let beats = beat_positions(spec, &mut rng);
    let mut x = ecg_from_beats(&beats, n, spec.rate_hz);
    add_noise(&mut x, spec.noise_std, &mut rng);
    let peaks = RPeakSet::new(in_span(&beats, n), spec.rate_hz)?;
    Ok((Signal::ecg(x, spec.rate_hz)?, peaks))
}

/// One PPG pulse per R-peak with onset `delay_ms` after it. Beats just
/// before and after the span are extrapolated at the mean RR so pulse tails
/// stay continuous at the edges.
pub fn gen_ppg_from_ecg(ecg: &Signal, peaks: &RPeakSet, delay_ms: f64) -> Result<Signal> {
    if !(delay_ms >= 0.0 && delay_ms.is_finite()) {
        return Err(Error::invalid(format!("delay_ms {delay_ms} must be non-negative")));
    }
    let rate = ecg.rate_hz();
    let n = ecg.len();
    let mut beats: Vec<i64> = peaks.indices().iter().map(|&i| i as i64).collect();
    if beats.len() >= 2 {
        let rr = (beats[beats.len() - 1] - beats[0]) / (beats.len() as i64 - 1);
        let reach = ((PULSE_SPAN_S + delay_ms / 1e3) * rate) as i64;
        let mut extra = Vec::new();
        let mut p = beats[0] - rr;
        while p + reach > 0 && rr > 0 {
            extra.push(p);
            p -= rr;
        }
        extra.reverse();
        extra.extend_from_slice(&beats);
        beats = extra;
    }
    Signal::ppg(ppg_from_beats(&beats, n, rate, delay_ms / 1e3), rate)
}

/// Ranges for [`make_dataset`]; each pair draws uniformly from them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRanges {
    pub hr_bpm: (f64, f64),
    pub rr_jitter: (f64, f64),
    pub noise_std: (f64, f64),
    pub delay_ms: (f64, f64),
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl Default for DatasetRanges {
    fn default() -> Self {
        DatasetRanges {
            hr_bpm: (50.0, 120.0),
            rr_jitter: (0.0, 0.05),
            noise_std: (0.0, 0.02),
            delay_ms: (DEFAULT_PPG_DELAY_MS, DEFAULT_PPG_DELAY_MS),
            duration_s: 5.0,
            rate_hz: 128.0,
        }
    }
}

impl DatasetRanges {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [
            ("hr_bpm", self.hr_bpm),
            ("rr_jitter", self.rr_jitter),
            ("noise_std", self.noise_std),
            ("delay_ms", self.delay_ms),
        ] {
            if !(lo <= hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::invalid(format!("{name} range ({lo}, {hi}) is empty")));
            }
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// A generated recording cut into windows, with truth in window coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthPair {
    pub spec: SynthSpec,
    pub delay_ms: f64,
    pub windows: Vec<PairedWindow>,
    /// R-peaks of each window, indices relative to the window start.
    pub window_peaks: Vec<RPeakSet>,
    /// R-peaks of the raw recording.
    pub truth_peaks: RPeakSet,
    pub truth_hr: f64,
}

/// The raw PPG that accompanies `gen_ecg(spec)`, with its own noise stream.
pub fn gen_raw_ppg(spec: &SynthSpec, delay_ms: f64) -> Result<Signal> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(1);
    let beats = beat_positions(spec, &mut ChaCha8Rng::seed_from_u64(spec.seed));
    let n = spec.samples();
    let mut ppg = ppg_from_beats(&beats, n, spec.rate_hz, delay_ms / 1e3);
    add_noise(&mut ppg, spec.noise_std, &mut rng);
    Signal::ppg(ppg, spec.rate_hz)
}

/// Generates one recording and runs it through preprocessing.
pub fn gen_pair(spec: &SynthSpec, delay_ms: f64, subject_id: &str) -> Result<SynthPair> {
    let (ecg, peaks) = gen_ecg(spec)?;
    let ppg = gen_raw_ppg(spec, delay_ms)?;
    let cfg = PreprocessConfig::default();
    let windows = cfg.preprocess_pair(&ecg, &ppg, subject_id)?;
    let ratio = cfg.target_hz / spec.rate_hz;
    let n_target = (ecg.len() as f64 * ratio).round() as usize;
    let offset = cfg.window_offset(n_target);
    let wl = crate::WINDOW_LEN;
    let window_peaks = (0..windows.len())
        .map(|w| {
            let start = offset + w * wl;
            let idx: Vec<usize> = peaks
                .indices()
                .iter()
                .map(|&i| (i as f64 * ratio).round() as usize)
                .filter(|&i| i >= start && i < start + wl)
                .map(|i| i - start)
                .collect();
            RPeakSet::new(idx, cfg.target_hz)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthPair {
        spec: spec.clone(),
        delay_ms,
        windows,
        window_peaks,
        truth_peaks: peaks,
        truth_hr: spec.hr_bpm,
    })
}

/// `n_pairs` recordings with parameters drawn from `ranges`; pair `i` uses
/// RNG stream `i` of `seed`, so any prefix of a dataset is itself stable.
pub fn make_dataset(n_pairs: usize, ranges: &DatasetRanges, seed: u64) -> Result<Vec<SynthPair>> {
    if n_pairs == 0 {
        return Err(Error::invalid("n_pairs must be at least 1"));
    }
    ranges.validate()?;
    (0..n_pairs)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let hr_bpm = uniform(&mut rng, ranges.hr_bpm);
            let spec = SynthSpec {
                hr_bpm,
                rr_jitter: uniform(&mut rng, ranges.rr_jitter),
                duration_s: ranges.duration_s,
                rate_hz: ranges.rate_hz,
                noise_std: uniform(&mut rng, ranges.noise_std),
                seed: rng.random(),
                first_beat_s: rng.random_range(0.0..60.0 / hr_bpm),
            };
            let delay = uniform(&mut rng, ranges.delay_ms);
            gen_pair(&spec, delay, &format!("synth-{seed}-{i}"))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn peaks_at_whole_seconds() {
        let (ecg, peaks) = gen_ecg(&SynthSpec::default()).unwrap();
        assert_eq!(ecg.len(), 1024);
        assert_eq!(peaks.indices(), &[0, 128, 256, 384, 512, 640, 768, 896]);
    }

    #[test]
    fn r_wave_dominates() {
        let (ecg, peaks) = gen_ecg(&SynthSpec::default()).unwrap();
        let x = ecg.samples();
        let i = peaks.indices()[3];
        assert!(x[i] > 0.95 && x[i] <= 1.0);
        assert!(x[i] > x[i - 1] && x[i] > x[i + 1]);
    }

    #[test]
    fn no_peaks_means_flat_ppg() {
        let ecg = Signal::ecg(vec![0.0; 256], 128.0).unwrap();
        let ppg = gen_ppg_from_ecg(&ecg, &RPeakSet::empty(128.0), 200.0).unwrap();
        assert!(ppg.samples().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn invalid_specs_rejected() {
        for spec in [
            SynthSpec { hr_bpm: 20.0, ..Default::default() },
            SynthSpec { rr_jitter: 0.3, ..Default::default() },
            SynthSpec { duration_s: 0.0, ..Default::default() },
        ] {
            assert!(gen_ecg(&spec).is_err());
        }
    }
}
