//! Variance schedule and the closed-form forward processes.
//!
//! Steps are 1-based throughout: `t` runs over `1..=T`, and the tables are
//! stored 0-based so `beta(t)` reads `beta[t - 1]`. `alpha_bar(0)` is 1.

use serde::{Deserialize, Serialize};

use crate::qrs::RoiMask;
use crate::{Error, Result};

/// Precomputed per-step coefficients of a fixed variance schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    beta: Vec<f64>,
    alpha: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

impl NoiseSchedule {
    /// Linear betas from `beta_min` to `beta_max` over `steps` steps.
    pub fn linear(steps: usize, beta_min: f64, beta_max: f64) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return Err(Error::invalid(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            )));
        }
        let beta: Vec<f64> = if steps == 1 {
            vec![beta_min]
        } else {
            let span = (beta_max - beta_min) / (steps - 1) as f64;
            (0..steps).map(|i| beta_min + i as f64 * span).collect()
        };
        Ok(Self::from_betas(beta))
    }

    fn from_betas(beta: Vec<f64>) -> Self {
        let alpha: Vec<f64> = beta.iter().map(|b| 1.0 - b).collect();
        let mut alpha_bar = Vec::with_capacity(alpha.len());
        let mut acc = 1.0;
        for a in &alpha {
            acc *= a;
            alpha_bar.push(acc);
        }
        let sigma = beta.iter().map(|b| b.sqrt()).collect();
        NoiseSchedule {
            beta,
            alpha,
            alpha_bar,
            sigma,
        }
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_t(&self, t: usize) -> Result<usize> {
        if t == 0 || t > self.steps() {
            return Err(Error::invalid(format!("timestep {t} outside 1..={}", self.steps())));
        }
        Ok(t - 1)
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alpha[t - 1]
    }

    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alpha
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// `(1/sqrt(alpha_t), (1 - alpha_t)/sqrt(1 - alpha_bar_t), sigma_t)`.
    pub fn reverse_step_coeffs(&self, t: usize) -> Result<ReverseCoeffs> {
        let i = self.check_t(t)?;
        Ok(ReverseCoeffs::new(self.alpha[i], self.alpha_bar[i], self.sigma[i]))
    }

    /// A `steps`-step schedule tracing the same `log(alpha_bar)` curve,
    /// linearly interpolated between integer steps. Start and end noise
    /// levels are kept, so `respaced(T)` reproduces `self`.
    pub fn respaced(&self, steps: usize) -> Result<Self> {
        if steps == 0 {
            return Err(Error::invalid("schedule needs at least one step"));
        }
        if steps == self.steps() {
            return Ok(self.clone());
        }
        let total = self.steps() as f64;
        let log_ab = |tau: f64| {
            let lo = tau.floor() as usize;
            let frac = tau - lo as f64;
            let a = self.alpha_bar(lo).ln();
            if frac == 0.0 {
                return a;
            }
            a + frac * (self.alpha_bar(lo + 1).ln() - a)
        };
        let mut beta = Vec::with_capacity(steps);
        let mut prev = 0.0;
        for s in 1..=steps {
            let cur = log_ab(s as f64 * total / steps as f64);
            beta.push(1.0 - (cur - prev).exp());
            prev = cur;
        }
        Ok(Self::from_betas(beta))
    }

    /// For every step of `self`, the step of `trained` whose cumulative signal
    /// level `alpha_bar` is closest in log space. Identity when the two
    /// schedules are equal.
    pub fn timestep_map(&self, trained: &NoiseSchedule) -> Vec<usize> {
        self.alpha_bar
            .iter()
            .map(|&ab| {
                let target = ab.ln();
                (1..=trained.steps())
                    .min_by(|&a, &b| {
                        let da = (trained.alpha_bar(a).ln() - target).abs();
                        let db = (trained.alpha_bar(b).ln() - target).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
            })
            .collect()
    }

    /// `sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * eps`.
    pub fn forward_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<DiffusionState> {
        let i = self.check_t(t)?;
        same_len(x0.len(), eps.len(), "noise")?;
        let (a, b) = (self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt());
        let x_t = x0.iter().zip(eps).map(|(&x, &e)| a * x + b * e).collect();
        Ok(DiffusionState { x_t, t })
    }

    /// ROI-guided forward sample: noise only where the mask is set. Masked-out
    /// coordinates equal `sqrt(alpha_bar_t) * x0` exactly.
    pub fn roi_forward_sample(
        &self,
        x0: &[f64],
        t: usize,
        eps: &[f64],
        mask: &RoiMask,
    ) -> Result<DiffusionState> {
        let i = self.check_t(t)?;
        same_len(x0.len(), eps.len(), "noise")?;
        same_len(x0.len(), mask.len(), "mask")?;
        let (a, b) = (self.alpha_bar[i].sqrt(), (1.0 - self.alpha_bar[i]).sqrt());
        let x_t = x0
            .iter()
            .zip(eps)
            .zip(mask.bits())
            .map(|((&x, &e), &m)| if m == 1 { a * x + b * e } else { a * x })
            .collect();
        Ok(DiffusionState { x_t, t })
    }
}

fn same_len(expected: usize, got: usize, what: &str) -> Result<()> {
    if expected != got {
        return Err(Error::invalid(format!("{what} length {got} does not match signal length {expected}")));
    }
    Ok(())
}

/// Scalars of one ancestral reverse step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReverseCoeffs {
    /// `1 / sqrt(alpha_t)`
    pub c1: f64,
    /// `(1 - alpha_t) / sqrt(1 - alpha_bar_t)`
    pub c2: f64,
    pub sigma: f64,
}

impl ReverseCoeffs {
    pub fn new(alpha: f64, alpha_bar: f64, sigma: f64) -> Self {
        let one_minus = 1.0 - alpha_bar;
        ReverseCoeffs {
            c1: 1.0 / alpha.sqrt(),
            c2: if one_minus > 0.0 {
                (1.0 - alpha) / one_minus.sqrt()
            } else {
                0.0
            },
            sigma,
        }
    }
}

/// A noised signal at step `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionState {
    pub x_t: Vec<f64>,
    pub t: usize,
}
