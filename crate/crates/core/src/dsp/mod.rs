//! Signal preprocessing: resampling, zero-phase Butterworth filtering,
//! normalization and windowing.
//!
//! Every function here is pure: the same input always produces bit-identical
//! output, and no operation mutates its argument.

pub mod butterworth;

use serde::{Deserialize, Serialize};

use crate::{Error, Result, WINDOW_LEN, WINDOW_RATE_HZ, WINDOW_SECONDS};
pub use butterworth::{FilterBand, Sos};

/// Standard deviation / range below which a signal is treated as flat.
pub const FLAT_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SignalKind {
    Ecg,
    Ppg,
}

/// A uniformly sampled waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    samples: Vec<f64>,
    rate_hz: f64,
    kind: SignalKind,
}

impl Signal {
    pub fn new(samples: Vec<f64>, rate_hz: f64, kind: SignalKind) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("signal has no samples"));
        }
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::invalid(format!("sampling rate {rate_hz} must be positive")));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("sample {i} is not finite")));
        }
        Ok(Signal {
            samples,
            rate_hz,
            kind,
        })
    }

    pub fn ecg(samples: Vec<f64>, rate_hz: f64) -> Result<Self> {
        Self::new(samples, rate_hz, SignalKind::Ecg)
    }

    pub fn ppg(samples: Vec<f64>, rate_hz: f64) -> Result<Self> {
        Self::new(samples, rate_hz, SignalKind::Ppg)
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.rate_hz
    }

    /// Same rate and kind, new samples. Only for outputs of pure transforms
    /// that preserve the invariants.
    fn with_samples(&self, samples: Vec<f64>) -> Signal {
        debug_assert!(!samples.is_empty());
        debug_assert!(samples.iter().all(|v| v.is_finite()));
        Signal {
            samples,
            rate_hz: self.rate_hz,
            kind: self.kind,
        }
    }
}

/// An aligned 4 s PPG/ECG pair at 128 Hz, both channels scaled into [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct PairedWindow {
    ppg: Vec<f64>,
    ecg: Vec<f64>,
    subject_id: String,
}

impl PairedWindow {
    pub fn new(ppg: Vec<f64>, ecg: Vec<f64>, subject_id: impl Into<String>) -> Result<Self> {
        for (name, ch) in [("ppg", &ppg), ("ecg", &ecg)] {
            if ch.len() != WINDOW_LEN {
                return Err(Error::invalid(format!(
                    "{name} window has {} samples, expected {WINDOW_LEN}",
                    ch.len()
                )));
            }
            if let Some(v) = ch.iter().find(|v| !v.is_finite() || v.abs() > 1.0 + 1e-9) {
                return Err(Error::invalid(format!("{name} value {v} outside [-1, 1]")));
            }
        }
        Ok(PairedWindow {
            ppg,
            ecg,
            subject_id: subject_id.into(),
        })
    }

    pub fn ppg(&self) -> &[f64] {
        &self.ppg
    }

    pub fn ecg(&self) -> &[f64] {
        &self.ecg
    }

    pub fn subject_id(&self) -> &str {
        &self.subject_id
    }

    pub fn rate_hz(&self) -> f64 {
        WINDOW_RATE_HZ
    }
}

/// Resamples onto a uniform grid at `target_hz` by linear interpolation.
///
/// Downsampling first applies an order-8 zero-phase low-pass at
/// `0.45 * target_hz`.
pub fn resample(signal: &Signal, target_hz: f64) -> Result<Signal> {
    if !(target_hz > 0.0) || !target_hz.is_finite() {
        return Err(Error::invalid(format!("target rate {target_hz} must be positive")));
    }
    let rate = signal.rate_hz;
    if target_hz == rate {
        return Ok(signal.clone());
    }
    let src: Vec<f64> = if target_hz < rate && 0.45 * target_hz < rate / 2.0 {
        Sos::butterworth(8, FilterBand::Lowpass(0.45 * target_hz), rate)?.filtfilt(&signal.samples)
    } else {
        signal.samples.clone()
    };

    let n_in = src.len();
    let n_out = ((n_in as f64) * target_hz / rate).round().max(1.0) as usize;
    let step = rate / target_hz;
    let out = (0..n_out)
        .map(|j| {
            let pos = j as f64 * step;
            let i = pos.floor() as usize;
            if i + 1 >= n_in {
                src[n_in - 1]
            } else {
                let frac = pos - i as f64;
                src[i] + (src[i + 1] - src[i]) * frac
            }
        })
        .collect();
    Ok(Signal {
        samples: out,
        rate_hz: target_hz,
        kind: signal.kind,
    })
}

pub fn butterworth_highpass(signal: &Signal, cutoff_hz: f64, order: usize) -> Result<Signal> {
    let sos = Sos::butterworth(order, FilterBand::Highpass(cutoff_hz), signal.rate_hz)?;
    Ok(signal.with_samples(sos.filtfilt(&signal.samples)))
}

pub fn butterworth_bandpass(
    signal: &Signal,
    low_hz: f64,
    high_hz: f64,
    order: usize,
) -> Result<Signal> {
    let sos = Sos::butterworth(order, FilterBand::Bandpass(low_hz, high_hz), signal.rate_hz)?;
    Ok(signal.with_samples(sos.filtfilt(&signal.samples)))
}

pub fn butterworth_lowpass(signal: &Signal, cutoff_hz: f64, order: usize) -> Result<Signal> {
    let sos = Sos::butterworth(order, FilterBand::Lowpass(cutoff_hz), signal.rate_hz)?;
    Ok(signal.with_samples(sos.filtfilt(&signal.samples)))
}

/// Zero mean, unit population standard deviation. Flat input maps to zeros.
pub fn zscore(signal: &Signal) -> Signal {
    signal.with_samples(zscore_slice(&signal.samples))
}

pub fn zscore_slice(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < FLAT_EPS {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Rescales into [-1, 1] with min -> -1 and max -> +1. Flat input maps to zeros.
pub fn minmax(signal: &Signal) -> Signal {
    signal.with_samples(minmax_slice(&signal.samples))
}

pub fn minmax_slice(x: &[f64]) -> Vec<f64> {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range >= FLAT_EPS) {
        return vec![0.0; x.len()];
    }
    x.iter().map(|&v| 2.0 * (v - lo) / range - 1.0).collect()
}

fn seconds_to_samples(seconds: f64, rate_hz: f64, what: &str) -> Result<usize> {
    let n = seconds * rate_hz;
    let r = n.round();
    if !(r >= 1.0) || (n - r).abs() > 1e-9 {
        return Err(Error::invalid(format!(
            "{what} of {seconds} s is not a whole number of samples at {rate_hz} Hz"
        )));
    }
    Ok(r as usize)
}

/// Cuts fixed-length segments starting at sample 0; a trailing partial
/// segment is dropped.
pub fn window(signal: &Signal, seconds: f64, stride_seconds: f64) -> Result<Vec<Signal>> {
    let len = seconds_to_samples(seconds, signal.rate_hz, "window")?;
    let stride = seconds_to_samples(stride_seconds, signal.rate_hz, "stride")?;
    let n = signal.samples.len();
    if len > n {
        return Ok(Vec::new());
    }
    Ok((0..=(n - len))
        .step_by(stride)
        .map(|start| signal.with_samples(signal.samples[start..start + len].to_vec()))
        .collect())
}

/// Parameters of the paired preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    pub target_hz: f64,
    pub ecg_highpass_hz: f64,
    pub ppg_band_hz: (f64, f64),
    pub filter_order: usize,
    pub window_seconds: f64,
    /// Filter-transient margin dropped at each recording end, taken only out
    /// of the samples that do not fit a whole window.
    pub edge_margin_seconds: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            target_hz: WINDOW_RATE_HZ,
            ecg_highpass_hz: 0.5,
            ppg_band_hz: (0.5, 8.0),
            filter_order: 4,
            window_seconds: WINDOW_SECONDS,
            edge_margin_seconds: 0.5,
        }
    }
}

impl PreprocessConfig {
    /// Sample offset of the first window for a recording of `n` samples.
    pub fn window_offset(&self, n: usize) -> usize {
        let w = (self.window_seconds * self.target_hz).round() as usize;
        if w == 0 || n < w {
            return 0;
        }
        let spare = n - (n / w) * w;
        let margin = (self.edge_margin_seconds * self.target_hz).round() as usize;
        margin.min(spare / 2)
    }

    /// Resample, filter, z-score the whole recording, then min-max scale each
    /// window.
    pub fn preprocess_pair(
        &self,
        ecg_raw: &Signal,
        ppg_raw: &Signal,
        subject_id: &str,
    ) -> Result<Vec<PairedWindow>> {
        if ecg_raw.kind != SignalKind::Ecg || ppg_raw.kind != SignalKind::Ppg {
            return Err(Error::invalid("preprocess_pair expects (ECG, PPG) signals"));
        }
        let ecg = resample(ecg_raw, self.target_hz)?;
        let ppg = resample(ppg_raw, self.target_hz)?;
        let (ne, np) = (ecg.len(), ppg.len());
        if ne.abs_diff(np) > 1 {
            return Err(Error::Alignment(format!(
                "ECG spans {ne} samples and PPG {np} samples at {} Hz",
                self.target_hz
            )));
        }
        let n = ne.min(np);
        let ecg = Signal::ecg(ecg.samples[..n].to_vec(), self.target_hz)?;
        let ppg = Signal::ppg(ppg.samples[..n].to_vec(), self.target_hz)?;

        let ecg = zscore(&butterworth_highpass(&ecg, self.ecg_highpass_hz, self.filter_order)?);
        let (lo, hi) = self.ppg_band_hz;
        let ppg = zscore(&butterworth_bandpass(&ppg, lo, hi, self.filter_order)?);

        let w = seconds_to_samples(self.window_seconds, self.target_hz, "window")?;
        let offset = self.window_offset(n);
        let count = (n - offset) / w;
        (0..count)
            .map(|k| {
                let r = offset + k * w..offset + (k + 1) * w;
                PairedWindow::new_unchecked_len(
                    minmax_slice(&ppg.samples[r.clone()]),
                    minmax_slice(&ecg.samples[r]),
                    subject_id,
                    w,
                )
            })
            .collect()
    }
}

impl PairedWindow {
    /// Like [`PairedWindow::new`] but for the configured window length, which
    /// differs from 512 only for non-default preprocessing configs.
    fn new_unchecked_len(
        ppg: Vec<f64>,
        ecg: Vec<f64>,
        subject_id: &str,
        len: usize,
    ) -> Result<Self> {
        if len == WINDOW_LEN {
            return PairedWindow::new(ppg, ecg, subject_id);
        }
        Ok(PairedWindow {
            ppg,
            ecg,
            subject_id: subject_id.to_string(),
        })
    }
}

/// The default pipeline: 128 Hz, ECG high-pass 0.5 Hz, PPG band-pass
/// 0.5-8 Hz (both order 4), 4 s windows.
pub fn preprocess_pair(ecg_raw: &Signal, ppg_raw: &Signal) -> Result<Vec<PairedWindow>> {
    PreprocessConfig::default().preprocess_pair(ecg_raw, ppg_raw, "")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: f64, seconds: f64) -> Vec<f64> {
        let n = (rate * seconds).round() as usize;
        (0..n).map(|i| (2.0 * PI * freq * i as f64 / rate).sin()).collect()
    }

    fn peak_abs(x: &[f64]) -> f64 {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    #[test]
    fn resample_lengths_and_identity() {
        let s = Signal::ppg(sine(2.0, 64.0, 4.0), 64.0).unwrap();
        let up = resample(&s, 128.0).unwrap();
        assert_eq!(up.len(), 512);
        assert_eq!(up.rate_hz(), 128.0);
        let same = resample(&s, 64.0).unwrap();
        assert_eq!(same.samples(), s.samples());
        assert!(resample(&s, 0.0).is_err());
    }

    #[test]
    fn resample_sine_upsampling_tracks_analytic() {
        let s = Signal::ppg(sine(2.0, 64.0, 4.0), 64.0).unwrap();
        let up = resample(&s, 128.0).unwrap();
        let n = up.len();
        for (j, v) in up.samples().iter().enumerate().take(n - 16).skip(16) {
            let want = (2.0 * PI * 2.0 * j as f64 / 128.0).sin();
            assert!((v - want).abs() < 0.01, "j={j}: {v} vs {want}");
        }
    }

    #[test]
    fn resample_downsampling_removes_out_of_band_tone() {
        // 3 Hz keeps, 100 Hz must be suppressed before decimating 700 -> 128 Hz
        let n = 700 * 6;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / 700.0;
                (2.0 * PI * 3.0 * t).sin() + (2.0 * PI * 100.0 * t).sin()
            })
            .collect();
        let down = resample(&Signal::ecg(x, 700.0).unwrap(), 128.0).unwrap();
        assert_eq!(down.len(), 768);
        for (j, v) in down.samples().iter().enumerate().take(700).skip(68) {
            let want = (2.0 * PI * 3.0 * j as f64 / 128.0).sin();
            assert!((v - want).abs() < 0.02, "j={j}");
        }
    }

    #[test]
    fn highpass_kills_dc_and_keeps_4hz() {
        let flat = Signal::ecg(vec![1.0; 1280], 128.0).unwrap();
        let y = butterworth_highpass(&flat, 0.5, 4).unwrap();
        assert!(peak_abs(&y.samples()[128..1152]) < 0.05);

        let s = Signal::ecg(sine(4.0, 128.0, 10.0), 128.0).unwrap();
        let y = butterworth_highpass(&s, 0.5, 4).unwrap();
        let amp = peak_abs(&y.samples()[256..1024]);
        assert!((amp - 1.0).abs() < 0.05, "amp {amp}");

        let zero = Signal::ecg(vec![0.0; 512], 128.0).unwrap();
        assert!(butterworth_highpass(&zero, 0.5, 4).unwrap().samples().iter().all(|&v| v == 0.0));
        assert!(butterworth_highpass(&zero, 64.0, 4).is_err());
    }

    #[test]
    fn bandpass_passes_2hz_rejects_30hz() {
        let s = Signal::ppg(sine(2.0, 128.0, 10.0), 128.0).unwrap();
        let amp = peak_abs(&butterworth_bandpass(&s, 0.5, 8.0, 4).unwrap().samples()[256..1024]);
        assert!((amp - 1.0).abs() < 0.1, "amp {amp}");
        let s = Signal::ppg(sine(30.0, 128.0, 10.0), 128.0).unwrap();
        let amp = peak_abs(&butterworth_bandpass(&s, 0.5, 8.0, 4).unwrap().samples()[256..1024]);
        assert!(amp < 0.1, "amp {amp}");
        let zero = Signal::ppg(vec![0.0; 512], 128.0).unwrap();
        assert!(butterworth_bandpass(&zero, 0.5, 8.0, 4).unwrap().samples().iter().all(|&v| v == 0.0));
        assert!(butterworth_bandpass(&zero, 8.0, 0.5, 4).is_err());
        assert!(butterworth_bandpass(&zero, 0.5, 70.0, 4).is_err());
    }

    #[test]
    fn zero_phase_filter_has_no_lag() {
        let s = Signal::ppg(sine(2.0, 128.0, 10.0), 128.0).unwrap();
        let y = butterworth_bandpass(&s, 0.5, 8.0, 4).unwrap();
        let mid = 256..1024;
        let xc = |lag: i64| -> f64 {
            mid.clone()
                .map(|i| s.samples()[i] * y.samples()[(i as i64 + lag) as usize])
                .sum()
        };
        let best = (-20..=20).max_by(|a, b| xc(*a).partial_cmp(&xc(*b)).unwrap()).unwrap();
        assert_eq!(best, 0);
    }

    #[test]
    fn zscore_examples() {
        let z = zscore_slice(&[2.0, 4.0]);
        assert_eq!(z, vec![-1.0, 1.0]);
        assert_eq!(zscore_slice(&[5.0, 5.0, 5.0]), vec![0.0; 3]);
    }

    #[test]
    fn minmax_examples() {
        assert_eq!(minmax_slice(&[0.0, 5.0, 10.0]), vec![-1.0, 0.0, 1.0]);
        assert_eq!(minmax_slice(&[-1.0, 1.0]), vec![-1.0, 1.0]);
        assert_eq!(minmax_slice(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn window_counts() {
        let s = Signal::ecg(vec![0.0; 1280], 128.0).unwrap();
        let w = window(&s, 4.0, 4.0).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|x| x.len() == 512));
        let s4 = Signal::ecg(vec![0.0; 512], 128.0).unwrap();
        assert_eq!(window(&s4, 4.0, 4.0).unwrap().len(), 1);
        let s8 = Signal::ecg(vec![0.0; 1024], 128.0).unwrap();
        let w8 = window(&s8, 8.0, 8.0).unwrap();
        assert_eq!((w8.len(), w8[0].len()), (1, 1024));
        assert!(window(&s4, 8.0, 8.0).unwrap().is_empty());
        assert!(window(&s4, 1.0 / 256.0, 1.0).is_err());
    }

    #[test]
    fn preprocess_sixty_seconds() {
        let ecg = Signal::ecg(sine(1.2, 256.0, 60.0), 256.0).unwrap();
        let ppg = Signal::ppg(sine(1.2, 64.0, 60.0), 64.0).unwrap();
        let out = preprocess_pair(&ecg, &ppg).unwrap();
        assert_eq!(out.len(), 15);
        for w in &out {
            assert_eq!((w.ecg().len(), w.ppg().len()), (512, 512));
            assert!(w.ecg().iter().chain(w.ppg()).all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn preprocess_constant_inputs_give_zero_windows() {
        let ecg = Signal::ecg(vec![2.5; 640], 128.0).unwrap();
        let ppg = Signal::ppg(vec![-1.0; 640], 128.0).unwrap();
        let out = preprocess_pair(&ecg, &ppg).unwrap();
        assert_eq!(out.len(), 1);
        assert!(out[0].ecg().iter().chain(out[0].ppg()).all(|&v| v == 0.0));
    }

    #[test]
    fn preprocess_rejects_misaligned_and_swapped() {
        let ecg = Signal::ecg(vec![0.0; 1280], 128.0).unwrap();
        let ppg = Signal::ppg(vec![0.0; 1000], 128.0).unwrap();
        assert!(matches!(preprocess_pair(&ecg, &ppg), Err(Error::Alignment(_))));
        let ppg = Signal::ppg(vec![0.0; 1280], 128.0).unwrap();
        assert!(preprocess_pair(&ppg, &ecg).is_err());
    }

    #[test]
    fn signal_rejects_bad_inputs() {
        assert!(Signal::ecg(vec![], 128.0).is_err());
        assert!(Signal::ecg(vec![1.0], 0.0).is_err());
        assert!(Signal::ecg(vec![f64::NAN], 128.0).is_err());
    }
}
