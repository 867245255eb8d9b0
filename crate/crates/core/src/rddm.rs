//! Training objectives, optimizer and samplers for RDDM and the conditional
//! DDPM baseline.
//!
//! RDDM trains two networks on the same draw `(t, eps)`:
//!
//! - `eps_theta` sees the ROI-noised signal `x_m = sqrt(ab) x0 + sqrt(1-ab) mu*eps`
//!   and predicts `mu*eps`;
//! - `rho_phi` sees the fully noised `x_t` and predicts `x_m`.
//!
//! Losses are means over batch and coordinates. Sampling chains `rho_phi`
//! and `eps_theta` once per step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dsp::{PairedWindow, Signal};
use crate::error::{Error, Result};
use crate::net::{Denoiser, LossEval, NetConfig, NetInput, Real};
use crate::qrs::{build_roi_mask, detect_rpeaks};
use crate::schedule::NoiseSchedule;
use crate::WINDOW_RATE_HZ;

pub const DEFAULT_GAMMA: usize = 32;
pub const DEFAULT_STEPS: usize = 10;
pub const DEFAULT_BETA_MIN: f64 = 1e-4;
pub const DEFAULT_BETA_MAX: f64 = 0.2;

/// Weights of the ROI noise term and the region term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Lambdas {
    pub roi: f64,
    pub region: f64,
}

impl Default for Lambdas {
    fn default() -> Self {
        Lambdas {
            roi: 100.0,
            region: 1.0,
        }
    }
}

/// Anything that maps `(x, cond, t)` windows to output windows.
pub trait Network<T: Real> {
    fn predict(&self, inp: &NetInput<'_, T>) -> Result<Vec<T>>;
}

impl<T: Real> Network<T> for Denoiser<T> {
    fn predict(&self, inp: &NetInput<'_, T>) -> Result<Vec<T>> {
        self.forward(inp)
    }
}

impl<T: Real, F> Network<T> for F
where
    F: Fn(&NetInput<'_, T>) -> Vec<T>,
{
    fn predict(&self, inp: &NetInput<'_, T>) -> Result<Vec<T>> {
        Ok(self(inp))
    }
}

/// A clean window ready for training: ECG target, PPG condition, ROI mask.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub ecg: Vec<f64>,
    pub ppg: Vec<f64>,
    pub mask: Vec<f64>,
}

impl TrainingExample {
    /// Builds the ROI mask from R-peaks detected on the clean ECG.
    pub fn from_window(w: &PairedWindow, gamma: usize) -> Result<Self> {
        let ecg = Signal::ecg(w.ecg().to_vec(), WINDOW_RATE_HZ)?;
        let peaks = detect_rpeaks(&ecg)?;
        let mask = build_roi_mask(&peaks, w.ecg().len(), gamma)?;
        Ok(TrainingExample {
            ecg: w.ecg().to_vec(),
            ppg: w.ppg().to_vec(),
            mask: mask.as_f64(),
        })
    }
}

/// Everything random about one training step, drawn up front: per window a
/// step `t` uniform in `1..=T`, then `len` standard normals.
#[derive(Debug, Clone)]
pub struct DiffusionBatch<T> {
    pub len: usize,
    pub x0: Vec<T>,
    pub cond: Vec<T>,
    pub mask: Vec<T>,
    pub t: Vec<usize>,
    pub eps: Vec<T>,
}

impl<T: Real> DiffusionBatch<T> {
    pub fn draw<R: Rng + ?Sized>(examples: &[&TrainingExample], sched: &NoiseSchedule, rng: &mut R) -> Result<Self> {
        let first = examples.first().ok_or_else(|| Error::invalid("empty batch"))?;
        let len = first.ecg.len();
        let mut b = DiffusionBatch {
            len,
            x0: Vec::with_capacity(examples.len() * len),
            cond: Vec::with_capacity(examples.len() * len),
            mask: Vec::with_capacity(examples.len() * len),
            t: Vec::with_capacity(examples.len()),
            eps: Vec::with_capacity(examples.len() * len),
        };
        for ex in examples {
            if ex.ecg.len() != len || ex.ppg.len() != len || ex.mask.len() != len {
                return Err(Error::invalid("training examples differ in length"));
            }
            b.x0.extend(ex.ecg.iter().map(|&v| T::lit(v)));
            b.cond.extend(ex.ppg.iter().map(|&v| T::lit(v)));
            b.mask.extend(ex.mask.iter().map(|&v| T::lit(v)));
            b.t.push(rng.random_range(1..=sched.steps()));
            for _ in 0..len {
                let e: f64 = rng.sample(StandardNormal);
                b.eps.push(T::lit(e));
            }
        }
        Ok(b)
    }

    pub fn windows(&self) -> usize {
        self.t.len()
    }

    /// Windows `range` as a standalone batch.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Self {
        let r = range.start * self.len..range.end * self.len;
        DiffusionBatch {
            len: self.len,
            x0: self.x0[r.clone()].to_vec(),
            cond: self.cond[r.clone()].to_vec(),
            mask: self.mask[r.clone()].to_vec(),
            t: self.t[range].to_vec(),
            eps: self.eps[r].to_vec(),
        }
    }

    fn coeffs(&self, sched: &NoiseSchedule, w: usize) -> (T, T) {
        let ab = sched.alpha_bar(self.t[w]);
        (T::lit(ab.sqrt()), T::lit((1.0 - ab).sqrt()))
    }

    /// Fully noised `x_t`.
    pub fn noised(&self, sched: &NoiseSchedule) -> Vec<T> {
        let mut out = Vec::with_capacity(self.x0.len());
        for w in 0..self.windows() {
            let (a, b) = self.coeffs(sched, w);
            let r = w * self.len..(w + 1) * self.len;
            out.extend(self.x0[r.clone()].iter().zip(&self.eps[r]).map(|(&x, &e)| a * x + b * e));
        }
        out
    }

    /// `mu * eps`, the ROI noise target.
    pub fn masked_noise(&self) -> Vec<T> {
        self.mask.iter().zip(&self.eps).map(|(&m, &e)| m * e).collect()
    }

    /// ROI-noised `x_m`: noise only where the mask is set.
    pub fn roi_noised(&self, sched: &NoiseSchedule) -> Vec<T> {
        let me = self.masked_noise();
        let mut out = Vec::with_capacity(self.x0.len());
        for w in 0..self.windows() {
            let (a, b) = self.coeffs(sched, w);
            let r = w * self.len..(w + 1) * self.len;
            out.extend(self.x0[r.clone()].iter().zip(&me[r]).map(|(&x, &e)| a * x + b * e));
        }
        out
    }

    fn input<'a>(&'a self, x: &'a [T]) -> NetInput<'a, T> {
        NetInput {
            x,
            cond: &self.cond,
            t: &self.t,
            len: self.len,
        }
    }
}

/// Raw (unweighted) loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub roi: f64,
    pub region: f64,
}

impl LossTerms {
    pub fn total(&self, l: Lambdas) -> f64 {
        l.roi * self.roi + l.region * self.region
    }
}

fn sq_err<T: Real>(a: &[T], b: &[T]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = (x - y).to_f64().unwrap();
            d * d
        })
        .sum()
}

/// Mean squared error against `target` with weight `w`, normalised by
/// `norm` coordinates, plus its output gradient.
fn weighted_mse<T: Real>(out: &[T], target: &[T], w: f64, norm: usize) -> LossEval<T> {
    let raw = sq_err(out, target) / norm as f64;
    let k = T::lit(2.0 * w / norm as f64);
    LossEval {
        value: T::lit(raw),
        d_output: out.iter().zip(target).map(|(&o, &t)| k * (o - t)).collect(),
        d_params: None,
    }
}

/// Both loss terms of the RDDM objective for a drawn batch.
pub fn rddm_loss<T: Real>(
    eps_theta: &impl Network<T>,
    rho_phi: &impl Network<T>,
    sched: &NoiseSchedule,
    batch: &DiffusionBatch<T>,
) -> Result<LossTerms> {
    let x_t = batch.noised(sched);
    let x_m = batch.roi_noised(sched);
    let target = batch.masked_noise();
    let n = x_t.len();
    let eps_hat = eps_theta.predict(&batch.input(&x_m))?;
    let x_p = rho_phi.predict(&batch.input(&x_t))?;
    let terms = LossTerms {
        roi: sq_err(&eps_hat, &target) / n as f64,
        region: sq_err(&x_p, &x_m) / n as f64,
    };
    if !terms.roi.is_finite() || !terms.region.is_finite() {
        return Err(Error::numeric("non-finite loss", None));
    }
    Ok(terms)
}

/// Conditional DDPM loss `mean (eps - eps_theta(x_t, c, t))^2`.
pub fn ddpm_loss<T: Real>(eps_theta: &impl Network<T>, sched: &NoiseSchedule, batch: &DiffusionBatch<T>) -> Result<f64> {
    let x_t = batch.noised(sched);
    let eps_hat = eps_theta.predict(&batch.input(&x_t))?;
    let v = sq_err(&eps_hat, &batch.eps) / x_t.len() as f64;
    if !v.is_finite() {
        return Err(Error::numeric("non-finite loss", None));
    }
    Ok(v)
}

/// Loss terms with parameter gradients of the weighted objective for both
/// networks.
#[derive(Debug, Clone)]
pub struct RddmGradients<T> {
    pub terms: LossTerms,
    pub theta: Vec<T>,
    pub phi: Vec<T>,
}

/// Gradient of `lambda_roi * roi + lambda_region * region`. Means are taken
/// over `norm` coordinates so micro-batches of a larger batch add up.
pub fn rddm_gradients<T: Real>(
    eps_theta: &Denoiser<T>,
    rho_phi: &Denoiser<T>,
    sched: &NoiseSchedule,
    batch: &DiffusionBatch<T>,
    lambdas: Lambdas,
    norm: usize,
) -> Result<RddmGradients<T>> {
    let x_t = batch.noised(sched);
    let x_m = batch.roi_noised(sched);
    let target = batch.masked_noise();
    let (roi, theta) = eps_theta.loss_gradient(&batch.input(&x_m), |out, _| weighted_mse(out, &target, lambdas.roi, norm))?;
    let (region, phi) = rho_phi.loss_gradient(&batch.input(&x_t), |out, _| weighted_mse(out, &x_m, lambdas.region, norm))?;
    Ok(RddmGradients {
        terms: LossTerms {
            roi: roi.to_f64().unwrap(),
            region: region.to_f64().unwrap(),
        },
        theta,
        phi,
    })
}

/// DDPM loss and gradient, normalised over `norm` coordinates.
pub fn ddpm_gradients<T: Real>(
    eps_theta: &Denoiser<T>,
    sched: &NoiseSchedule,
    batch: &DiffusionBatch<T>,
    norm: usize,
) -> Result<(f64, Vec<T>)> {
    let x_t = batch.noised(sched);
    let (v, g) = eps_theta.loss_gradient(&batch.input(&x_t), |out, _| weighted_mse(out, &batch.eps, 1.0, norm))?;
    Ok((v.to_f64().unwrap(), g))
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    #[serde(skip)]
    pub m: Vec<f32>,
    #[serde(skip)]
    pub v: Vec<f32>,
}

impl AdamW {
    pub fn new(n: usize, weight_decay: f64) -> Self {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            t: 0,
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32], lr: f64) {
        assert_eq!(params.len(), grads.len());
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let decay = (1.0 - lr * self.weight_decay) as f32;
        let step = (lr / bc1) as f32;
        let bc2_sqrt = bc2.sqrt() as f32;
        let eps = self.eps as f32;
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            params[i] = params[i] * decay - step * self.m[i] / (self.v[i].sqrt() / bc2_sqrt + eps);
        }
    }
}

/// Cosine decay from `base` to `floor` over `total` steps.
pub fn cosine_lr(base: f64, floor: f64, step: u64, total: u64) -> f64 {
    if total <= 1 {
        return base;
    }
    let p = (step.min(total - 1) as f64) / (total - 1) as f64;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * p).cos())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainStepReport {
    pub loss_total: f64,
    pub loss_roi: f64,
    pub loss_region: f64,
    pub grad_norm: f64,
}

fn norm_sq(g: &[f32]) -> f64 {
    g.iter().map(|&v| (v as f64) * (v as f64)).sum()
}

fn check_grads(g: &[f32]) -> Result<()> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite gradient", None));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct RddmModel {
    pub eps_theta: Denoiser<f32>,
    pub rho_phi: Denoiser<f32>,
    pub sched: NoiseSchedule,
    pub gamma: usize,
}

#[derive(Debug, Clone)]
pub struct DdpmModel {
    pub eps_theta: Denoiser<f32>,
    pub sched: NoiseSchedule,
}

impl RddmModel {
    /// Two independently initialised networks sharing `config`.
    pub fn new(config: NetConfig, sched: NoiseSchedule, gamma: usize, seed: u64) -> Result<Self> {
        if gamma == 0 {
            return Err(Error::invalid("gamma must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps_theta = Denoiser::new(config.clone(), &mut rng)?;
        let rho_phi = Denoiser::new(config, &mut rng)?;
        Ok(RddmModel {
            eps_theta,
            rho_phi,
            sched,
            gamma,
        })
    }
}

impl DdpmModel {
    pub fn new(config: NetConfig, sched: NoiseSchedule, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(DdpmModel {
            eps_theta: Denoiser::new(config, &mut rng)?,
            sched,
        })
    }
}

/// Windows per gradient evaluation; bounds activation memory.
pub const DEFAULT_MICRO_BATCH: usize = 16;

/// One step: draw `(t, eps)` for the batch, take the gradient of the
/// weighted objective in micro-batches, then update both networks.
pub fn rddm_train_step<R: Rng + ?Sized>(
    model: &mut RddmModel,
    opt: &mut [AdamW; 2],
    examples: &[&TrainingExample],
    rng: &mut R,
    lambdas: Lambdas,
    lr: f64,
) -> Result<TrainStepReport> {
    let batch = DiffusionBatch::<f32>::draw(examples, &model.sched, rng)?;
    let norm = batch.x0.len();
    let mut theta = vec![0f32; model.eps_theta.param_count()];
    let mut phi = vec![0f32; model.rho_phi.param_count()];
    let mut terms = LossTerms { roi: 0.0, region: 0.0 };
    let n = batch.windows();
    let mut start = 0;
    while start < n {
        let end = (start + DEFAULT_MICRO_BATCH).min(n);
        let mb = batch.slice(start..end);
        let g = rddm_gradients(&model.eps_theta, &model.rho_phi, &model.sched, &mb, lambdas, norm)?;
        terms.roi += g.terms.roi;
        terms.region += g.terms.region;
        for (a, b) in theta.iter_mut().zip(&g.theta) {
            *a += b;
        }
        for (a, b) in phi.iter_mut().zip(&g.phi) {
            *a += b;
        }
        start = end;
    }
    let total = terms.total(lambdas);
    if !total.is_finite() {
        return Err(Error::numeric("non-finite loss", None));
    }
    check_grads(&theta)?;
    check_grads(&phi)?;
    opt[0].step(model.eps_theta.params_mut(), &theta, lr);
    opt[1].step(model.rho_phi.params_mut(), &phi, lr);
    Ok(TrainStepReport {
        loss_total: total,
        loss_roi: terms.roi,
        loss_region: terms.region,
        grad_norm: (norm_sq(&theta) + norm_sq(&phi)).sqrt(),
    })
}

/// DDPM counterpart of [`rddm_train_step`]; draws consume the RNG identically.
pub fn ddpm_train_step<R: Rng + ?Sized>(
    model: &mut DdpmModel,
    opt: &mut AdamW,
    examples: &[&TrainingExample],
    rng: &mut R,
    lr: f64,
) -> Result<TrainStepReport> {
    let batch = DiffusionBatch::<f32>::draw(examples, &model.sched, rng)?;
    let norm = batch.x0.len();
    let mut grads = vec![0f32; model.eps_theta.param_count()];
    let mut loss = 0.0;
    let n = batch.windows();
    let mut start = 0;
    while start < n {
        let end = (start + DEFAULT_MICRO_BATCH).min(n);
        let (v, g) = ddpm_gradients(&model.eps_theta, &model.sched, &batch.slice(start..end), norm)?;
        loss += v;
        for (a, b) in grads.iter_mut().zip(&g) {
            *a += b;
        }
        start = end;
    }
    if !loss.is_finite() {
        return Err(Error::numeric("non-finite loss", None));
    }
    check_grads(&grads)?;
    opt.step(model.eps_theta.params_mut(), &grads, lr);
    Ok(TrainStepReport {
        loss_total: loss,
        loss_roi: loss,
        loss_region: 0.0,
        grad_norm: norm_sq(&grads).sqrt(),
    })
}

/// How to run a sampler over a set of condition windows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleOptions {
    /// Reverse steps; 0 means the trained step count.
    pub steps: usize,
    pub seed: u64,
    /// RNG stream of the first window. Window `i` always uses stream
    /// `first_window + i`, so results do not depend on chunking.
    pub first_window: u64,
    /// Windows per network call.
    pub chunk: usize,
}

impl Default for SampleOptions {
    fn default() -> Self {
        SampleOptions {
            steps: 0,
            seed: 0,
            first_window: 0,
            chunk: 32,
        }
    }
}

fn window_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn fill_normal(rng: &mut ChaCha8Rng, out: &mut [f32]) {
    for v in out {
        let e: f64 = rng.sample(StandardNormal);
        *v = e as f32;
    }
}

/// Shared reverse-process driver; `rddm` switches on the region generator.
fn reverse_process(
    eps_theta: &impl Network<f32>,
    rho_phi: Option<&dyn Fn(&NetInput<'_, f32>) -> Result<Vec<f32>>>,
    trained: &NoiseSchedule,
    conds: &[f32],
    len: usize,
    opts: SampleOptions,
) -> Result<Vec<f32>> {
    if len == 0 || conds.len() % len != 0 {
        return Err(Error::invalid(format!(
            "condition buffer of {} samples is not a whole number of {len}-sample windows",
            conds.len()
        )));
    }
    if conds.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite condition", None));
    }
    let steps = if opts.steps == 0 { trained.steps() } else { opts.steps };
    let sched = trained.respaced(steps)?;
    let tmap = sched.timestep_map(trained);
    let n = conds.len() / len;
    let chunk = opts.chunk.max(1);
    let mut out = vec![0f32; conds.len()];
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let b = end - start;
        let cond = &conds[start * len..end * len];
        let mut rngs: Vec<ChaCha8Rng> = (start..end).map(|w| window_rng(opts.seed, opts.first_window + w as u64)).collect();
        let mut x = vec![0f32; b * len];
        for (w, rng) in rngs.iter_mut().enumerate() {
            fill_normal(rng, &mut x[w * len..(w + 1) * len]);
        }
        let mut z = vec![0f32; b * len];
        for s in (1..=steps).rev() {
            let t = vec![tmap[s - 1]; b];
            let xp = match rho_phi {
                Some(rho) => rho(&NetInput { x: &x, cond, t: &t, len })?,
                None => x.clone(),
            };
            let e = eps_theta.predict(&NetInput { x: &xp, cond, t: &t, len })?;
            let c = sched.reverse_step_coeffs(s)?;
            if s > 1 {
                for (w, rng) in rngs.iter_mut().enumerate() {
                    fill_normal(rng, &mut z[w * len..(w + 1) * len]);
                }
            } else {
                z.fill(0.0);
            }
            for i in 0..x.len() {
                let v = c.c1 * (xp[i] as f64 - c.c2 * e[i] as f64) + c.sigma * z[i] as f64;
                x[i] = v as f32;
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::numeric("non-finite sample", Some(s)));
            }
        }
        out[start * len..end * len].copy_from_slice(&x);
        start = end;
    }
    Ok(out)
}

/// RDDM sampling: per step `x_p = rho_phi(x_t)`, then an ancestral step on
/// `x_p` with `eps_theta(x_p)`.
pub fn rddm_sample(
    eps_theta: &impl Network<f32>,
    rho_phi: &impl Network<f32>,
    trained: &NoiseSchedule,
    conds: &[f32],
    len: usize,
    opts: SampleOptions,
) -> Result<Vec<f32>> {
    let rho = |inp: &NetInput<'_, f32>| rho_phi.predict(inp);
    reverse_process(eps_theta, Some(&rho), trained, conds, len, opts)
}

/// Conditional DDPM ancestral sampling.
pub fn ddpm_sample(
    eps_theta: &impl Network<f32>,
    trained: &NoiseSchedule,
    conds: &[f32],
    len: usize,
    opts: SampleOptions,
) -> Result<Vec<f32>> {
    reverse_process(eps_theta, None, trained, conds, len, opts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Rddm,
    Ddpm,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Rddm => "rddm",
            ModelKind::Ddpm => "ddpm",
        })
    }
}

/// Either model, as stored in a checkpoint.
#[derive(Debug, Clone)]
pub enum Model {
    Rddm(RddmModel),
    Ddpm(DdpmModel),
}

impl Model {
    pub fn new(kind: ModelKind, config: NetConfig, sched: NoiseSchedule, gamma: usize, seed: u64) -> Result<Self> {
        Ok(match kind {
            ModelKind::Rddm => Model::Rddm(RddmModel::new(config, sched, gamma, seed)?),
            ModelKind::Ddpm => Model::Ddpm(DdpmModel::new(config, sched, seed)?),
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Rddm(_) => ModelKind::Rddm,
            Model::Ddpm(_) => ModelKind::Ddpm,
        }
    }

    pub fn sched(&self) -> &NoiseSchedule {
        match self {
            Model::Rddm(m) => &m.sched,
            Model::Ddpm(m) => &m.sched,
        }
    }

    pub fn config(&self) -> &NetConfig {
        self.nets()[0].config()
    }

    pub fn gamma(&self) -> Option<usize> {
        match self {
            Model::Rddm(m) => Some(m.gamma),
            Model::Ddpm(_) => None,
        }
    }

    /// Networks in checkpoint order: `eps_theta` then, for RDDM, `rho_phi`.
    pub fn nets(&self) -> Vec<&Denoiser<f32>> {
        match self {
            Model::Rddm(m) => vec![&m.eps_theta, &m.rho_phi],
            Model::Ddpm(m) => vec![&m.eps_theta],
        }
    }

    pub fn nets_mut(&mut self) -> Vec<&mut Denoiser<f32>> {
        match self {
            Model::Rddm(m) => vec![&mut m.eps_theta, &mut m.rho_phi],
            Model::Ddpm(m) => vec![&mut m.eps_theta],
        }
    }

    pub fn net_roles(&self) -> &'static [&'static str] {
        match self {
            Model::Rddm(_) => &["eps_theta", "rho_phi"],
            Model::Ddpm(_) => &["eps_theta"],
        }
    }

    /// Network evaluations per reverse step.
    pub fn nets_per_step(&self) -> u64 {
        self.nets().len() as u64
    }

    /// Windows evaluated by all networks since the last reset.
    pub fn net_calls(&self) -> u64 {
        self.nets().iter().map(|n| n.calls()).sum()
    }

    pub fn reset_calls(&self) {
        for n in self.nets() {
            n.reset_calls();
        }
    }

    pub fn sample(&self, conds: &[f32], len: usize, opts: SampleOptions) -> Result<Vec<f32>> {
        match self {
            Model::Rddm(m) => rddm_sample(&m.eps_theta, &m.rho_phi, &m.sched, conds, len, opts),
            Model::Ddpm(m) => ddpm_sample(&m.eps_theta, &m.sched, conds, len, opts),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub lr_min: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
    pub lambdas: Lambdas,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            lr_min: 1e-6,
            batch: 16,
            epochs: 200,
            seed: 0,
            weight_decay: 0.01,
            lambdas: Lambdas::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::invalid("train.lr must be positive"));
        }
        if !(self.lr_min >= 0.0 && self.lr_min <= self.lr) {
            return Err(Error::invalid("train.lr_min must lie in [0, lr]"));
        }
        if self.batch == 0 {
            return Err(Error::invalid("train.batch must be positive"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::invalid("train.weight_decay must be non-negative"));
        }
        if !(self.lambdas.roi >= 0.0 && self.lambdas.region >= 0.0) {
            return Err(Error::invalid("rddm lambdas must be non-negative"));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_examples: usize) -> u64 {
        n_examples.div_ceil(self.batch) as u64
    }
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub epoch: usize,
    pub loss_total: f64,
    pub loss_roi: f64,
    pub loss_region: f64,
    pub lr: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub wall_ms: Option<f64>,
}

/// Model plus optimizer state; resumable at epoch boundaries.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: Model,
    pub opt: Vec<AdamW>,
    pub config: TrainConfig,
    /// Epochs completed.
    pub epoch: usize,
    pub step: u64,
}

impl Trainer {
    pub fn new(model: Model, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let opt = model
            .nets()
            .iter()
            .map(|n| AdamW::new(n.param_count(), config.weight_decay))
            .collect();
        Ok(Trainer {
            model,
            opt,
            config,
            epoch: 0,
            step: 0,
        })
    }

    /// Epoch `e` draws from its own RNG stream, so a resumed run replays the
    /// same batches as an uninterrupted one.
    pub fn epoch_rng(&self, epoch: usize) -> ChaCha8Rng {
        window_rng(self.config.seed, epoch as u64)
    }

    pub fn run_epoch(&mut self, data: &[TrainingExample], on_step: &mut dyn FnMut(&StepLog)) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("training set is empty"));
        }
        let total_steps = self.config.steps_per_epoch(data.len()) * self.config.epochs.max(1) as u64;
        let mut rng = self.epoch_rng(self.epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut sum = 0.0;
        let mut count = 0usize;
        for idx in order.chunks(self.config.batch) {
            let examples: Vec<&TrainingExample> = idx.iter().map(|&i| &data[i]).collect();
            let lr = cosine_lr(self.config.lr, self.config.lr_min, self.step, total_steps);
            let started = std::time::Instant::now();
            let report = match &mut self.model {
                Model::Rddm(m) => {
                    let opt: &mut [AdamW; 2] = (&mut self.opt[..]).try_into().expect("two optimizers");
                    rddm_train_step(m, opt, &examples, &mut rng, self.config.lambdas, lr)
                }
                Model::Ddpm(m) => ddpm_train_step(m, &mut self.opt[0], &examples, &mut rng, lr),
            }
            .map_err(|e| match e {
                Error::Numeric { msg, .. } => Error::numeric(msg, Some(self.step as usize)),
                other => other,
            })?;
            on_step(&StepLog {
                step: self.step,
                epoch: self.epoch,
                loss_total: report.loss_total,
                loss_roi: report.loss_roi,
                loss_region: report.loss_region,
                lr,
                wall_ms: Some(started.elapsed().as_secs_f64() * 1e3),
            });
            self.step += 1;
            sum += report.loss_total;
            count += 1;
        }
        self.epoch += 1;
        Ok(sum / count as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(cosine_lr(1e-4, 1e-6, 0, 100), 1e-4);
        assert!((cosine_lr(1e-4, 1e-6, 99, 100) - 1e-6).abs() < 1e-18);
        let mid = cosine_lr(1e-4, 1e-6, 50, 101);
        assert!((mid - (1e-4 + 1e-6) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn adamw_first_step_moves_by_lr() {
        let mut opt = AdamW::new(2, 0.0);
        let mut p = vec![1.0f32, -1.0];
        opt.step(&mut p, &[0.5, -2.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled() {
        let mut opt = AdamW::new(1, 0.5);
        let mut p = vec![2.0f32];
        opt.step(&mut p, &[0.0], 0.1);
        assert!((p[0] - 1.9).abs() < 1e-6);
    }
}
