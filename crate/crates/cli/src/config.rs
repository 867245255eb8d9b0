//! Run configuration: TOML file with every field defaulted, overridden by
//! command-line flags.

use std::path::{Path, PathBuf};

use rddm_core::io::ScheduleSpec;
use rddm_core::net::NetConfig;
use rddm_core::rddm::{Lambdas, ModelKind, TrainConfig, DEFAULT_BETA_MAX, DEFAULT_BETA_MIN, DEFAULT_GAMMA, DEFAULT_STEPS};
use rddm_core::synth::DatasetRanges;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSection {
    #[serde(rename = "T")]
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            steps: DEFAULT_STEPS,
            beta_min: DEFAULT_BETA_MIN,
            beta_max: DEFAULT_BETA_MAX,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub depth: usize,
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub attention_stages: Vec<usize>,
    pub embed_dim: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        let n = NetConfig::desk();
        ModelSection {
            kind: ModelKind::Rddm,
            depth: n.depth,
            base_channels: n.base_channels,
            channel_multipliers: n.channel_multipliers,
            attention_stages: n.attention_stages,
            embed_dim: n.embed_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RddmSection {
    pub gamma: usize,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for RddmSection {
    fn default() -> Self {
        let l = Lambdas::default();
        RddmSection {
            gamma: DEFAULT_GAMMA,
            lambda1: l.roi,
            lambda2: l.region,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub lr_min: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub weight_decay: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lr: t.lr,
            lr_min: t.lr_min,
            batch: t.batch,
            epochs: t.epochs,
            seed: t.seed,
            weight_decay: t.weight_decay,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataSource {
    Synth,
    Files,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSection {
    pub source: DataSource,
    /// Window-set files, used when `source = "files"`.
    pub paths: Vec<PathBuf>,
    pub n_pairs: usize,
    pub seed: u64,
    pub hr_bpm: (f64, f64),
    pub rr_jitter: (f64, f64),
    pub noise_std: (f64, f64),
    pub delay_ms: (f64, f64),
    pub duration_s: f64,
    pub rate_hz: f64,
}

impl Default for DataSection {
    fn default() -> Self {
        let r = DatasetRanges::default();
        DataSection {
            source: DataSource::Synth,
            paths: Vec::new(),
            n_pairs: 512,
            seed: 1,
            hr_bpm: r.hr_bpm,
            rr_jitter: r.rr_jitter,
            noise_std: r.noise_std,
            delay_ms: r.delay_ms,
            duration_s: r.duration_s,
            rate_hz: r.rate_hz,
        }
    }
}

impl DataSection {
    pub fn ranges(&self) -> DatasetRanges {
        DatasetRanges {
            hr_bpm: self.hr_bpm,
            rr_jitter: self.rr_jitter,
            noise_std: self.noise_std,
            delay_ms: self.delay_ms,
            duration_s: self.duration_s,
            rate_hz: self.rate_hz,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schedule: ScheduleSection,
    pub model: ModelSection,
    pub rddm: RddmSection,
    pub train: TrainSection,
    pub data: DataSection,
}

fn field(name: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Usage(format!("config field `{name}`: {msg}"))
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(RunConfig::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("config {}: {}", path.display(), e.message())))
    }

    pub fn net_config(&self) -> NetConfig {
        NetConfig {
            depth: self.model.depth,
            base_channels: self.model.base_channels,
            channel_multipliers: self.model.channel_multipliers.clone(),
            attention_stages: self.model.attention_stages.clone(),
            embed_dim: self.model.embed_dim,
        }
    }

    pub fn schedule_spec(&self) -> ScheduleSpec {
        ScheduleSpec {
            steps: self.schedule.steps,
            beta_min: self.schedule.beta_min,
            beta_max: self.schedule.beta_max,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.train.lr,
            lr_min: self.train.lr_min,
            batch: self.train.batch,
            epochs: self.train.epochs,
            seed: self.train.seed,
            weight_decay: self.train.weight_decay,
            lambdas: Lambdas {
                roi: self.rddm.lambda1,
                region: self.rddm.lambda2,
            },
        }
    }

    /// Checks every section before any work starts; errors name the field.
    pub fn validate(&self) -> Result<(), CliError> {
        let s = &self.schedule;
        if s.steps == 0 {
            return Err(field("schedule.T", "must be at least 1"));
        }
        if !(s.beta_min > 0.0 && s.beta_min < 1.0) {
            return Err(field("schedule.beta_min", "must lie in (0, 1)"));
        }
        if !(s.beta_max >= s.beta_min && s.beta_max < 1.0) {
            return Err(field("schedule.beta_max", "must lie in [beta_min, 1)"));
        }
        let m = &self.model;
        if m.depth == 0 {
            return Err(field("model.depth", "must be at least 1"));
        }
        if m.channel_multipliers.len() != m.depth {
            return Err(field("model.channel_multipliers", format!("needs {} entries (one per stage)", m.depth)));
        }
        if m.base_channels == 0 || m.base_channels % 8 != 0 {
            return Err(field("model.base_channels", "must be a positive multiple of 8"));
        }
        if m.channel_multipliers.contains(&0) {
            return Err(field("model.channel_multipliers", "entries must be positive"));
        }
        if let Some(s) = m.attention_stages.iter().find(|&&s| s >= m.depth) {
            return Err(field("model.attention_stages", format!("stage {s} does not exist")));
        }
        if m.embed_dim == 0 || m.embed_dim % 2 != 0 {
            return Err(field("model.embed_dim", "must be even and positive"));
        }
        self.net_config().validate().map_err(|e| field("model", e))?;
        let r = &self.rddm;
        if r.gamma == 0 {
            return Err(field("rddm.gamma", "must be positive"));
        }
        if !(r.lambda1 >= 0.0 && r.lambda1.is_finite()) {
            return Err(field("rddm.lambda1", "must be non-negative"));
        }
        if !(r.lambda2 >= 0.0 && r.lambda2.is_finite()) {
            return Err(field("rddm.lambda2", "must be non-negative"));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(field("train.lr", "must be positive"));
        }
        if !(t.lr_min >= 0.0 && t.lr_min <= t.lr) {
            return Err(field("train.lr_min", "must lie in [0, lr]"));
        }
        if t.batch == 0 {
            return Err(field("train.batch", "must be positive"));
        }
        if t.epochs == 0 {
            return Err(field("train.epochs", "must be positive"));
        }
        if !(t.weight_decay >= 0.0) {
            return Err(field("train.weight_decay", "must be non-negative"));
        }
        let d = &self.data;
        match d.source {
            DataSource::Files => {
                if d.paths.is_empty() {
                    return Err(field("data.paths", "is empty but data.source = \"files\""));
                }
                for p in &d.paths {
                    if !p.exists() {
                        return Err(field("data.paths", format!("{} does not exist", p.display())));
                    }
                }
            }
            DataSource::Synth => {
                if d.n_pairs == 0 {
                    return Err(field("data.n_pairs", "must be positive"));
                }
                d.ranges().validate().map_err(|e| field("data", e))?;
                if !(30.0..=220.0).contains(&d.hr_bpm.0) || !(30.0..=220.0).contains(&d.hr_bpm.1) {
                    return Err(field("data.hr_bpm", "must lie within [30, 220]"));
                }
                if d.rr_jitter.0 < 0.0 || d.rr_jitter.1 > 0.2 {
                    return Err(field("data.rr_jitter", "must lie within [0, 0.2]"));
                }
                if d.duration_s < rddm_core::WINDOW_SECONDS {
                    return Err(field("data.duration_s", "must cover at least one 4 s window"));
                }
                if !(d.rate_hz >= 100.0) {
                    return Err(field("data.rate_hz", "must be at least 100 Hz"));
                }
            }
        }
        Ok(())
    }
}
