//! Region-disentangled diffusion for conditional 1D signal translation.
//!
//! The crate turns a PPG window into an ECG window with a pair of conditioned
//! 1D UNet denoisers. One network (`rho_phi`) restores everything outside the
//! QRS regions, the other (`eps_theta`) predicts the noise left inside them.
//! A plain conditional DDPM with the same backbone is included as a baseline.
//!
//! Module map:
//!
//! - [`dsp`]: resampling, zero-phase Butterworth filtering, normalization, windowing
//! - [`qrs`]: R-peak detection, ROI masks, heart-rate estimation
//! - [`schedule`]: variance schedule and the closed-form forward processes
//! - [`net`]: the conditioned UNet with hand-written reverse-mode gradients
//! - [`rddm`]: training objectives, optimizer, samplers
//! - [`synth`]: synthetic paired PPG/ECG generator with exact ground truth
//! - [`metrics`]: RMSE, discrete Fréchet distance, HR MAE, inference timing
//! - [`io`]: recording and window-set file formats

pub mod dsp;
pub mod error;
pub mod io;
pub mod metrics;
pub mod net;
pub mod qrs;
pub mod rddm;
pub mod schedule;
pub mod synth;

pub use error::{Error, Result};

/// Sampling rate every window is expressed at.
pub const WINDOW_RATE_HZ: f64 = 128.0;
/// Window length in seconds.
pub const WINDOW_SECONDS: f64 = 4.0;
/// Window length in samples (4 s at 128 Hz).
pub const WINDOW_LEN: usize = 512;
