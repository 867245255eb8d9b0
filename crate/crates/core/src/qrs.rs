//! R-peak detection, ROI masks and heart-rate estimation.
//!
//! The detector follows the Pan-Tompkins chain: 5-15 Hz band-pass,
//! five-point derivative, squaring, moving-window integration and an adaptive
//! signal/noise threshold with search-back. Filtering is zero-phase and the
//! integrator is centred, so fiducial points carry no group delay; each one
//! is then snapped to the raw-ECG maximum within +/-50 ms.

use crate::dsp::{FilterBand, Signal, SignalKind, Sos};
use crate::{Error, Result};

/// Minimum spacing between two R-peaks.
pub const REFRACTORY_S: f64 = 0.25;
/// Half-width of the raw-ECG search around a fiducial point.
pub const REFINE_S: f64 = 0.05;
/// Shortest signal the detector accepts.
pub const MIN_DETECT_S: f64 = 2.0;
const MWI_S: f64 = 0.15;

/// Sorted R-peak sample indices of one signal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RPeakSet {
    indices: Vec<usize>,
    rate_hz_bits: u64,
}

impl RPeakSet {
    /// Builds a set from indices that must be strictly increasing.
    pub fn new(indices: Vec<usize>, rate_hz: f64) -> Result<Self> {
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("R-peak indices must be strictly increasing"));
        }
        Ok(RPeakSet {
            indices,
            rate_hz_bits: rate_hz.to_bits(),
        })
    }

    pub fn empty(rate_hz: f64) -> Self {
        RPeakSet {
            indices: Vec::new(),
            rate_hz_bits: rate_hz.to_bits(),
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn rate_hz(&self) -> f64 {
        f64::from_bits(self.rate_hz_bits)
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Peaks in `[start, start + len)`, re-indexed relative to `start`.
    pub fn slice(&self, start: usize, len: usize) -> RPeakSet {
        RPeakSet {
            indices: self
                .indices
                .iter()
                .filter(|&&i| i >= start && i < start + len)
                .map(|&i| i - start)
                .collect(),
            rate_hz_bits: self.rate_hz_bits,
        }
    }
}

/// Binary region-of-interest mask around R-peaks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    bits: Vec<u8>,
    gamma: usize,
}

impl RoiMask {
    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn popcount(&self) -> usize {
        self.bits.iter().filter(|&&b| b == 1).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| b as f64).collect()
    }

    pub fn as_f32(&self) -> Vec<f32> {
        self.bits.iter().map(|&b| b as f32).collect()
    }
}

/// Sets `mask[i] = 1` for every `i` with `i_r - gamma/2 <= i <= i_r + gamma/2`
/// for some peak `i_r`, clipped to `[0, length)`.
pub fn build_roi_mask(peaks: &RPeakSet, length: usize, gamma: usize) -> Result<RoiMask> {
    if gamma < 2 || gamma % 2 != 0 {
        return Err(Error::invalid(format!("gamma {gamma} must be even and at least 2")));
    }
    if length == 0 {
        return Err(Error::invalid("mask length must be positive"));
    }
    let half = gamma / 2;
    let mut bits = vec![0u8; length];
    for &r in &peaks.indices {
        let lo = r.saturating_sub(half);
        let hi = (r + half).min(length - 1);
        if lo > hi {
            continue;
        }
        bits[lo..=hi].fill(1);
    }
    Ok(RoiMask { bits, gamma })
}

/// Five-point derivative, centred.
fn derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| x[i.clamp(0, n as isize - 1) as usize];
    (0..n as isize)
        .map(|i| (2.0 * at(i + 1) + at(i + 2) - at(i - 1) - 2.0 * at(i - 2)) / 8.0)
        .collect()
}

/// Centred moving average of width `w`, shrinking at the ends.
fn moving_window(x: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let mut prefix = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + x[i];
    }
    let half = w / 2;
    (0..n)
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + w - half).min(n);
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// Strict local maxima; a rising end counts, so beats cut by the signal
/// boundary are still found.
fn local_maxima(x: &[f64]) -> Vec<usize> {
    let n = x.len();
    let mut out = Vec::new();
    if n >= 2 && x[0] > x[1] {
        out.push(0);
    }
    let mut i = 1;
    while i < n {
        if x[i] > x[i - 1] {
            // walk a plateau to its end
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 == n || x[j + 1] < x[i] {
                out.push((i + j) / 2);
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    out
}

/// Pan-Tompkins-style R-peak detector.
pub fn detect_rpeaks(ecg: &Signal) -> Result<RPeakSet> {
    if ecg.kind() != SignalKind::Ecg {
        return Err(Error::invalid("R-peak detection needs an ECG signal"));
    }
    let rate = ecg.rate_hz();
    if rate < 100.0 {
        return Err(Error::invalid(format!("ECG rate {rate} Hz is below 100 Hz")));
    }
    let x = ecg.samples();
    let needed = (MIN_DETECT_S * rate).ceil() as usize;
    if x.len() < needed {
        return Err(Error::InsufficientData {
            needed,
            got: x.len(),
        });
    }

    let band = Sos::butterworth(2, FilterBand::Bandpass(5.0, 15.0), rate)?.filtfilt(x);
    let energy: Vec<f64> = derivative(&band).into_iter().map(|d| d * d).collect();
    let mwi = moving_window(&energy, ((MWI_S * rate).round() as usize).max(1));

    let global_max = mwi.iter().cloned().fold(0.0, f64::max);
    if !(global_max > 0.0) {
        return Ok(RPeakSet::empty(rate));
    }
    // Energies far below the strongest beat are numerical dust, not QRS.
    let floor = global_max * 1e-6;

    let refractory = (REFRACTORY_S * rate).round() as usize;
    let candidates: Vec<usize> = local_maxima(&mwi).into_iter().filter(|&i| mwi[i] > floor).collect();

    let learn = needed.min(mwi.len());
    let mut spk = mwi[..learn].iter().cloned().fold(0.0, f64::max);
    let mut npk = mwi[..learn].iter().sum::<f64>() / learn as f64;
    let threshold = |spk: f64, npk: f64| npk + 0.25 * (spk - npk);

    let mut qrs: Vec<usize> = Vec::new();
    let mut rejected: Vec<usize> = Vec::new();
    for &c in &candidates {
        let v = mwi[c];
        if v > threshold(spk, npk) {
            match qrs.last() {
                Some(&last) if c - last < refractory => {
                    if v > mwi[last] {
                        *qrs.last_mut().unwrap() = c;
                    }
                }
                _ => qrs.push(c),
            }
            spk = 0.125 * v + 0.875 * spk;
        } else {
            rejected.push(c);
            npk = 0.125 * v + 0.875 * npk;
        }

        // Search-back: a gap far longer than the running RR hides a beat.
        if qrs.len() >= 3 {
            let k = qrs.len();
            let rr_mean = (qrs[k - 2] - qrs[0]) as f64 / (k - 2) as f64;
            let gap = qrs[k - 1] - qrs[k - 2];
            if gap as f64 > 1.66 * rr_mean {
                let (a, b) = (qrs[k - 2] + refractory, qrs[k - 1].saturating_sub(refractory));
                let best = rejected
                    .iter()
                    .copied()
                    .filter(|&r| r >= a && r <= b && mwi[r] > 0.5 * threshold(spk, npk))
                    .max_by(|&p, &q| mwi[p].partial_cmp(&mwi[q]).unwrap());
                if let Some(r) = best {
                    qrs.insert(k - 1, r);
                    spk = 0.25 * mwi[r] + 0.75 * spk;
                }
            }
        }
    }

    // Snap to raw-ECG maxima, then re-apply the refractory rule keeping the taller peak.
    let half = (REFINE_S * rate).round() as usize;
    let mut snapped: Vec<usize> = qrs
        .iter()
        .map(|&f| {
            let lo = f.saturating_sub(half);
            let hi = (f + half).min(x.len() - 1);
            (lo..=hi).fold(lo, |best, i| if x[i] > x[best] { i } else { best })
        })
        .collect();
    snapped.sort_unstable();
    let mut peaks: Vec<usize> = Vec::with_capacity(snapped.len());
    for p in snapped {
        match peaks.last_mut() {
            Some(last) if p - *last < refractory => {
                if x[p] > x[*last] {
                    *last = p;
                }
            }
            _ => peaks.push(p),
        }
    }
    RPeakSet::new(peaks, rate)
}

/// Mean heart rate in bpm from the mean RR interval of the detected peaks.
pub fn estimate_hr(ecg: &Signal) -> Result<f64> {
    let peaks = detect_rpeaks(ecg)?;
    hr_from_peaks(&peaks)
}

pub fn hr_from_peaks(peaks: &RPeakSet) -> Result<f64> {
    let idx = peaks.indices();
    if idx.len() < 2 {
        return Err(Error::UndetectableRhythm { peaks: idx.len() });
    }
    let mean_rr = (idx[idx.len() - 1] - idx[0]) as f64 / (idx.len() - 1) as f64;
    Ok(60.0 * peaks.rate_hz() / mean_rr)
}
