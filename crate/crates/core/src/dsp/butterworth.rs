//! Digital Butterworth design as cascaded second-order sections.
//!
//! Design goes analog prototype -> frequency transform -> bilinear transform
//! with pre-warping, so the -3 dB points land exactly on the requested edges.
//! Filtering is forward-backward (zero phase) with odd-extension padding and
//! steady-state initial conditions.

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::{Error, Result};

/// One biquad: `b0 + b1 z^-1 + b2 z^-2` over `1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Transposed direct form II state after an infinite run of unit input.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let z2 = self.b[2] - self.a[2] * g;
        let z1 = g - self.b[0];
        [z1, z2]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FilterBand {
    Lowpass(f64),
    Highpass(f64),
    Bandpass(f64, f64),
}

/// A designed Butterworth filter.
#[derive(Debug, Clone)]
pub struct Sos {
    pub sections: Vec<Biquad>,
    /// Lowest band edge in Hz, used to size the edge padding.
    lowest_edge_hz: f64,
    rate_hz: f64,
}

impl Sos {
    /// Designs an order-`order` Butterworth filter for sampling rate `rate_hz`.
    ///
    /// Band-pass follows the usual convention that `order` is the prototype
    /// order, so the resulting filter has `2 * order` poles.
    pub fn butterworth(order: usize, band: FilterBand, rate_hz: f64) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("filter order must be at least 1"));
        }
        if !(rate_hz > 0.0) || !rate_hz.is_finite() {
            return Err(Error::invalid(format!("sampling rate {rate_hz} must be positive")));
        }
        let nyq = rate_hz / 2.0;
        let check = |f: f64, what: &str| -> Result<()> {
            if !(f > 0.0 && f < nyq) {
                return Err(Error::invalid(format!(
                    "{what} {f} Hz must lie strictly between 0 and Nyquist ({nyq} Hz)"
                )));
            }
            Ok(())
        };
        let warp = |f: f64| 2.0 * rate_hz * (PI * f / rate_hz).tan();

        // Unit-cutoff analog prototype: no zeros, poles on the left unit semicircle.
        let proto: Vec<Complex64> = (0..order)
            .map(|k| {
                let m = -(order as f64) + 1.0 + 2.0 * k as f64;
                -Complex64::from_polar(1.0, PI * m / (2.0 * order as f64))
            })
            .collect();

        let (zeros, poles, gain, lowest) = match band {
            FilterBand::Lowpass(fc) => {
                check(fc, "cutoff")?;
                let wo = warp(fc);
                let poles: Vec<_> = proto.iter().map(|p| p * wo).collect();
                (Vec::new(), poles, wo.powi(order as i32), fc)
            }
            FilterBand::Highpass(fc) => {
                check(fc, "cutoff")?;
                let wo = warp(fc);
                let poles: Vec<_> = proto.iter().map(|p| wo / p).collect();
                let prod: Complex64 = proto.iter().map(|p| -p).product();
                let gain = (Complex64::new(1.0, 0.0) / prod).re;
                (vec![Complex64::new(0.0, 0.0); order], poles, gain, fc)
            }
            FilterBand::Bandpass(lo, hi) => {
                check(lo, "low edge")?;
                check(hi, "high edge")?;
                if lo >= hi {
                    return Err(Error::invalid(format!(
                        "band-pass low edge {lo} Hz must be below high edge {hi} Hz"
                    )));
                }
                let (w1, w2) = (warp(lo), warp(hi));
                let wo = (w1 * w2).sqrt();
                let bw = w2 - w1;
                let mut poles = Vec::with_capacity(2 * order);
                for p in &proto {
                    let pl = p * (bw / 2.0);
                    let root = (pl * pl - wo * wo).sqrt();
                    poles.push(pl + root);
                    poles.push(pl - root);
                }
                (vec![Complex64::new(0.0, 0.0); order], poles, bw.powi(order as i32), lo)
            }
        };

        // Bilinear transform; missing zeros go to Nyquist.
        let fs2 = 2.0 * rate_hz;
        let bz = |s: Complex64| (fs2 + s) / (fs2 - s);
        let mut zd: Vec<Complex64> = zeros.iter().map(|&z| bz(z)).collect();
        let pd: Vec<Complex64> = poles.iter().map(|&p| bz(p)).collect();
        let num: Complex64 = zeros.iter().map(|&z| fs2 - z).product();
        let den: Complex64 = poles.iter().map(|&p| fs2 - p).product();
        let gain = gain * (num / den).re;
        while zd.len() < pd.len() {
            zd.push(Complex64::new(-1.0, 0.0));
        }

        Ok(Sos {
            sections: pair_sections(zd, pd, gain),
            lowest_edge_hz: lowest,
            rate_hz,
        })
    }

    /// Magnitude of the frequency response at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.rate_hz;
        let zinv = Complex64::from_polar(1.0, -w);
        self.sections
            .iter()
            .map(|s| {
                let num = s.b[0] + s.b[1] * zinv + s.b[2] * zinv * zinv;
                let den = s.a[0] + s.a[1] * zinv + s.a[2] * zinv * zinv;
                (num / den).norm()
            })
            .product()
    }

    /// Causal filtering with explicit per-section initial state.
    fn filter_in_place(&self, x: &mut [f64], init: Option<f64>) {
        let mut scale = 1.0;
        for sec in &self.sections {
            let [mut z1, mut z2] = match init {
                Some(x0) => {
                    let st = sec.step_state();
                    [st[0] * scale * x0, st[1] * scale * x0]
                }
                None => [0.0, 0.0],
            };
            scale *= sec.dc_gain();
            let [b0, b1, b2] = sec.b;
            let [_, a1, a2] = sec.a;
            for v in x.iter_mut() {
                let xin = *v;
                let y = b0 * xin + z1;
                z1 = b1 * xin - a1 * y + z2;
                z2 = b2 * xin - a2 * y;
                *v = y;
            }
        }
    }

    /// Single forward pass starting from rest.
    pub fn filter(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        self.filter_in_place(&mut y, None);
        y
    }

    /// Zero-phase forward-backward filtering.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let default_pad = 3 * (2 * self.sections.len() + 1);
        let settle = (self.rate_hz / self.lowest_edge_hz).ceil() as usize;
        let pad = default_pad.max(settle).min(n - 1);

        let mut ext = Vec::with_capacity(n + 2 * pad);
        let (first, last) = (x[0], x[n - 1]);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * last - x[n - 1 - i]));

        let x0 = ext[0];
        self.filter_in_place(&mut ext, Some(x0));
        ext.reverse();
        let y0 = ext[0];
        self.filter_in_place(&mut ext, Some(y0));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Groups digital zeros and poles into real-coefficient biquads.
fn pair_sections(mut zeros: Vec<Complex64>, poles: Vec<Complex64>, gain: f64) -> Vec<Biquad> {
    const IMAG_EPS: f64 = 1e-10;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > IMAG_EPS).collect();
    let mut real: Vec<f64> = poles.iter().filter(|p| p.im.abs() <= IMAG_EPS).map(|p| p.re).collect();
    // poles nearest the unit circle last, as is customary for cascade ordering
    complex.sort_by(|a, b| a.norm().partial_cmp(&b.norm()).unwrap());
    real.sort_by(|a, b| a.abs().partial_cmp(&b.abs()).unwrap());

    // Interleave zeros at +1 and -1 so each band-pass section gets one of each.
    zeros.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
    let (pos, neg): (Vec<f64>, Vec<f64>) = zeros.iter().map(|z| z.re).partition(|&r| r >= 0.0);
    let mut zs = Vec::with_capacity(zeros.len());
    let (mut pi, mut ni) = (pos.into_iter(), neg.into_iter());
    loop {
        match (pi.next(), ni.next()) {
            (None, None) => break,
            (a, b) => {
                zs.extend(a);
                zs.extend(b);
            }
        }
    }
    let mut zs = zs.into_iter();

    let mut sections = Vec::new();
    for p in complex {
        let z1 = zs.next().unwrap_or(0.0);
        let z2 = zs.next().unwrap_or(0.0);
        sections.push(Biquad {
            b: [1.0, -(z1 + z2), z1 * z2],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        });
    }
    let mut rp = real.into_iter();
    while let Some(p1) = rp.next() {
        match rp.next() {
            Some(p2) => {
                let z1 = zs.next().unwrap_or(0.0);
                let z2 = zs.next().unwrap_or(0.0);
                sections.push(Biquad {
                    b: [1.0, -(z1 + z2), z1 * z2],
                    a: [1.0, -(p1 + p2), p1 * p2],
                });
            }
            None => {
                let z1 = zs.next().unwrap_or(0.0);
                sections.push(Biquad {
                    b: [1.0, -z1, 0.0],
                    a: [1.0, -p1, 0.0],
                });
            }
        }
    }
    if let Some(first) = sections.first_mut() {
        for b in first.b.iter_mut() {
            *b *= gain;
        }
    }
    sections
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Squared magnitude of an analog Butterworth response evaluated on the
    /// pre-warped frequency axis; the digital design must match it exactly.
    fn analytic_gain(band: FilterBand, order: usize, f: f64, fs: f64) -> f64 {
        let w = |x: f64| (PI * x / fs).tan();
        let n2 = 2 * order as i32;
        match band {
            FilterBand::Lowpass(c) => (1.0 / (1.0 + (w(f) / w(c)).powi(n2))).sqrt(),
            FilterBand::Highpass(c) => (1.0 / (1.0 + (w(c) / w(f)).powi(n2))).sqrt(),
            FilterBand::Bandpass(lo, hi) => {
                let (w1, w2) = (w(lo), w(hi));
                let wo2 = w1 * w2;
                let x = (w(f) * w(f) - wo2) / (w(f) * (w2 - w1));
                (1.0 / (1.0 + x.powi(n2))).sqrt()
            }
        }
    }

    #[test]
    fn responses_match_analytic_butterworth() {
        let fs = 128.0;
        for (band, order) in [
            (FilterBand::Highpass(0.5), 4),
            (FilterBand::Lowpass(20.0), 3),
            (FilterBand::Lowpass(57.6), 8),
            (FilterBand::Bandpass(0.5, 8.0), 4),
            (FilterBand::Bandpass(5.0, 15.0), 2),
        ] {
            let sos = Sos::butterworth(order, band, fs).unwrap();
            for f in [0.1, 0.3, 0.5, 1.0, 2.0, 4.0, 8.0, 10.0, 15.0, 30.0, 50.0, 63.0] {
                let got = sos.magnitude(f);
                let want = analytic_gain(band, order, f, fs);
                assert!((got - want).abs() < 1e-9, "{band:?} f={f}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn rejects_bad_edges() {
        assert!(Sos::butterworth(4, FilterBand::Highpass(64.0), 128.0).is_err());
        assert!(Sos::butterworth(4, FilterBand::Bandpass(8.0, 0.5), 128.0).is_err());
        assert!(Sos::butterworth(0, FilterBand::Lowpass(10.0), 128.0).is_err());
    }

    #[test]
    fn step_state_is_a_fixed_point() {
        let sos = Sos::butterworth(4, FilterBand::Lowpass(10.0), 128.0).unwrap();
        let y = {
            let mut x = vec![3.0; 200];
            sos.filter_in_place(&mut x, Some(3.0));
            x
        };
        for v in y {
            assert!((v - 3.0).abs() < 1e-9);
        }
    }
}
