//! File formats: recordings, window sets, checkpoints.
//!
//! Text files start with a `# rddm-schema: 1` line. Binary payloads are
//! little-endian `f32` with a JSON sidecar at `<path>.json` that carries
//! `schema_version`. See `docs/formats.md` for the layouts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dsp::{PairedWindow, Signal};
use crate::error::{Error, Result};
use crate::net::{Denoiser, NetConfig};
use crate::rddm::{AdamW, DdpmModel, Model, ModelKind, RddmModel, TrainConfig, Trainer};
use crate::schedule::NoiseSchedule;

pub const SCHEMA_VERSION: u32 = 1;
pub const SCHEMA_LINE: &str = "# rddm-schema: 1";

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// `<path>.json`, next to a binary payload.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn check_schema(v: u32, what: &str) -> Result<()> {
    if v != SCHEMA_VERSION {
        return Err(Error::Version(format!(
            "{what} has schema version {v}, this build reads {SCHEMA_VERSION}"
        )));
    }
    Ok(())
}

/// Lines of a CSV file after the schema line, without comments or blanks.
fn csv_body(text: &str, what: &str) -> Result<Vec<String>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(l) if l.trim() == SCHEMA_LINE => {}
        Some(l) if l.starts_with("# rddm-schema:") => {
            return Err(Error::Version(format!("{what}: unsupported header {l:?}")));
        }
        _ => return Err(Error::Format(format!("{what}: missing '{SCHEMA_LINE}' header"))),
    }
    Ok(lines
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(String::from)
        .collect())
}

fn parse_f64(s: &str, what: &str, line: usize) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::Format(format!("{what}: line {line}: bad number {s:?}")))
}

fn write_f32s(path: &Path, data: &[f32]) -> Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

fn read_f32s(path: &Path) -> Result<Vec<f32>> {
    let bytes = fs::read(path)?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Format(format!("{}: length is not a multiple of 4", path.display())));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// A raw PPG/ECG recording on one time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub rate_hz: f64,
    pub ppg: Vec<f64>,
    pub ecg: Vec<f64>,
}

impl Recording {
    pub fn signals(&self) -> Result<(Signal, Signal)> {
        Ok((
            Signal::ecg(self.ecg.clone(), self.rate_hz)?,
            Signal::ppg(self.ppg.clone(), self.rate_hz)?,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RecordingSidecar {
    schema_version: u32,
    rate_hz: f64,
    channels: Vec<String>,
    samples: usize,
}

/// CSV `t,ppg,ecg` or interleaved binary, chosen by extension.
pub fn write_recording(path: &Path, rec: &Recording) -> Result<()> {
    if rec.ppg.len() != rec.ecg.len() {
        return Err(Error::Alignment("recording channels differ in length".into()));
    }
    if is_csv(path) {
        let mut s = format!("{SCHEMA_LINE}\n# rate_hz: {}\nt,ppg,ecg\n", rec.rate_hz);
        for (i, (p, e)) in rec.ppg.iter().zip(&rec.ecg).enumerate() {
            s.push_str(&format!("{},{},{}\n", i as f64 / rec.rate_hz, p, e));
        }
        fs::write(path, s)?;
    } else {
        let data: Vec<f32> = rec.ppg.iter().zip(&rec.ecg).flat_map(|(&p, &e)| [p as f32, e as f32]).collect();
        write_f32s(path, &data)?;
        write_json(
            &sidecar_path(path),
            &RecordingSidecar {
                schema_version: SCHEMA_VERSION,
                rate_hz: rec.rate_hz,
                channels: vec!["ppg".into(), "ecg".into()],
                samples: rec.ppg.len(),
            },
        )?;
    }
    Ok(())
}

pub fn read_recording(path: &Path) -> Result<Recording> {
    let what = path.display().to_string();
    if is_csv(path) {
        let text = fs::read_to_string(path)?;
        let rate_line = text.lines().find_map(|l| l.strip_prefix("# rate_hz:").map(str::trim).map(String::from));
        let body = csv_body(&text, &what)?;
        let (header, rows) = body.split_first().ok_or_else(|| Error::Format(format!("{what}: empty")))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        let find = |name: &str| {
            cols.iter()
                .position(|c| *c == name)
                .ok_or_else(|| Error::Format(format!("{what}: missing column {name:?}")))
        };
        let (ti, pi, ei) = (find("t")?, find("ppg")?, find("ecg")?);
        let (mut t, mut ppg, mut ecg) = (Vec::new(), Vec::new(), Vec::new());
        for (k, row) in rows.iter().enumerate() {
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Format(format!("{what}: line {}: expected {} fields", k + 1, cols.len())));
            }
            t.push(parse_f64(f[ti], &what, k + 1)?);
            ppg.push(parse_f64(f[pi], &what, k + 1)?);
            ecg.push(parse_f64(f[ei], &what, k + 1)?);
        }
        let rate_hz = match rate_line {
            Some(r) => r.parse().map_err(|_| Error::Format(format!("{what}: bad rate_hz {r:?}")))?,
            None if t.len() >= 2 && t[1] > t[0] => 1.0 / (t[1] - t[0]),
            None => return Err(Error::Format(format!("{what}: cannot infer sampling rate"))),
        };
        Ok(Recording { rate_hz, ppg, ecg })
    } else {
        let side: RecordingSidecar = read_json(&sidecar_path(path))?;
        check_schema(side.schema_version, &what)?;
        let data = read_f32s(path)?;
        let pi = side.channels.iter().position(|c| c == "ppg");
        let ei = side.channels.iter().position(|c| c == "ecg");
        let (Some(pi), Some(ei)) = (pi, ei) else {
            return Err(Error::Format(format!("{what}: sidecar must list ppg and ecg channels")));
        };
        let nc = side.channels.len();
        if data.len() != side.samples * nc {
            return Err(Error::Format(format!("{what}: payload does not match sidecar sample count")));
        }
        Ok(Recording {
            rate_hz: side.rate_hz,
            ppg: data.chunks(nc).map(|c| c[pi] as f64).collect(),
            ecg: data.chunks(nc).map(|c| c[ei] as f64).collect(),
        })
    }
}

/// Equal-length windows with named channels, stored window-major then
/// channel-major: `data[(w * channels + c) * window_len + i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    pub rate_hz: f64,
    pub window_len: usize,
    pub channels: Vec<String>,
    pub subject_ids: Vec<String>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WindowSidecar {
    schema_version: u32,
    rate_hz: f64,
    window_len: usize,
    n_windows: usize,
    channels: Vec<String>,
    subject_ids: Vec<String>,
}

impl WindowSet {
    pub fn from_pairs(pairs: &[PairedWindow]) -> Self {
        let window_len = pairs.first().map_or(crate::WINDOW_LEN, |p| p.ecg().len());
        let mut data = Vec::with_capacity(pairs.len() * 2 * window_len);
        for p in pairs {
            data.extend(p.ppg().iter().map(|&v| v as f32));
            data.extend(p.ecg().iter().map(|&v| v as f32));
        }
        WindowSet {
            rate_hz: crate::WINDOW_RATE_HZ,
            window_len,
            channels: vec!["ppg".into(), "ecg".into()],
            subject_ids: pairs.iter().map(|p| p.subject_id().to_string()).collect(),
            data,
        }
    }

    /// Single-channel set from concatenated windows.
    pub fn single(channel: &str, window_len: usize, data: Vec<f32>, subject_ids: Vec<String>) -> Result<Self> {
        if window_len == 0 || data.len() % window_len != 0 {
            return Err(Error::invalid("data is not a whole number of windows"));
        }
        let n = data.len() / window_len;
        let subject_ids = if subject_ids.len() == n { subject_ids } else { vec![String::new(); n] };
        Ok(WindowSet {
            rate_hz: crate::WINDOW_RATE_HZ,
            window_len,
            channels: vec![channel.to_string()],
            subject_ids,
            data,
        })
    }

    pub fn n_windows(&self) -> usize {
        let per = self.channels.len() * self.window_len;
        if per == 0 {
            0
        } else {
            self.data.len() / per
        }
    }

    /// All windows of one channel, concatenated.
    pub fn channel(&self, name: &str) -> Result<Vec<f32>> {
        let c = self
            .channels
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Format(format!("window set has no {name:?} channel")))?;
        let (nc, l) = (self.channels.len(), self.window_len);
        Ok((0..self.n_windows())
            .flat_map(|w| self.data[(w * nc + c) * l..(w * nc + c + 1) * l].iter().copied())
            .collect())
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.channels.is_empty() || self.window_len == 0 {
            return Err(Error::Format(format!("{what}: no channels or zero window length")));
        }
        if self.data.len() % (self.channels.len() * self.window_len) != 0 {
            return Err(Error::Format(format!("{what}: payload is not a whole number of windows")));
        }
        if self.subject_ids.len() != self.n_windows() {
            return Err(Error::Format(format!("{what}: subject_ids does not match window count")));
        }
        Ok(())
    }
}

/// CSV long form `window,i,<channels>` or binary with sidecar.
pub fn write_windows(path: &Path, set: &WindowSet) -> Result<()> {
    set.validate(&path.display().to_string())?;
    if is_csv(path) {
        let (nc, l) = (set.channels.len(), set.window_len);
        let mut s = format!(
            "{SCHEMA_LINE}\n# rate_hz: {}\n# subject_ids: {}\nwindow,i,{}\n",
            set.rate_hz,
            set.subject_ids.join(";"),
            set.channels.join(",")
        );
        for w in 0..set.n_windows() {
            for i in 0..l {
                s.push_str(&format!("{w},{i}"));
                for c in 0..nc {
                    s.push_str(&format!(",{}", set.data[(w * nc + c) * l + i]));
                }
                s.push('\n');
            }
        }
        let mut f = fs::File::create(path)?;
        f.write_all(s.as_bytes())?;
    } else {
        write_f32s(path, &set.data)?;
        write_json(
            &sidecar_path(path),
            &WindowSidecar {
                schema_version: SCHEMA_VERSION,
                rate_hz: set.rate_hz,
                window_len: set.window_len,
                n_windows: set.n_windows(),
                channels: set.channels.clone(),
                subject_ids: set.subject_ids.clone(),
            },
        )?;
    }
    Ok(())
}

pub fn read_windows(path: &Path) -> Result<WindowSet> {
    let what = path.display().to_string();
    let set = if is_csv(path) {
        let text = fs::read_to_string(path)?;
        let meta = |key: &str| {
            text.lines()
                .take_while(|l| l.starts_with('#'))
                .find_map(|l| l.strip_prefix(&format!("# {key}:")).map(|v| v.trim().to_string()))
        };
        let body = csv_body(&text, &what)?;
        let (header, rows) = body.split_first().ok_or_else(|| Error::Format(format!("{what}: empty")))?;
        let cols: Vec<String> = header.split(',').map(|c| c.trim().to_string()).collect();
        if cols.len() < 3 || cols[0] != "window" || cols[1] != "i" {
            return Err(Error::Format(format!("{what}: header must start with window,i")));
        }
        let channels = cols[2..].to_vec();
        let nc = channels.len();
        let mut per_window: Vec<Vec<Vec<f32>>> = Vec::new();
        for (k, row) in rows.iter().enumerate() {
            let f: Vec<&str> = row.split(',').collect();
            if f.len() != cols.len() {
                return Err(Error::Format(format!("{what}: line {}: expected {} fields", k + 1, cols.len())));
            }
            let w = parse_f64(f[0], &what, k + 1)? as usize;
            if w == per_window.len() {
                per_window.push(vec![Vec::new(); nc]);
            } else if w + 1 != per_window.len() {
                return Err(Error::Format(format!("{what}: line {}: windows must be contiguous", k + 1)));
            }
            for c in 0..nc {
                per_window[w][c].push(parse_f64(f[2 + c], &what, k + 1)? as f32);
            }
        }
        let window_len = per_window.first().map_or(0, |w| w[0].len());
        if per_window.iter().any(|w| w[0].len() != window_len) {
            return Err(Error::Format(format!("{what}: windows differ in length")));
        }
        let n = per_window.len();
        let subject_ids = match meta("subject_ids") {
            Some(s) if n > 0 && s.split(';').count() == n => s.split(';').map(String::from).collect(),
            _ => vec![String::new(); n],
        };
        let rate_hz = match meta("rate_hz") {
            Some(r) => r.parse().map_err(|_| Error::Format(format!("{what}: bad rate_hz")))?,
            None => crate::WINDOW_RATE_HZ,
        };
        WindowSet {
            rate_hz,
            window_len,
            channels,
            subject_ids,
            data: per_window.into_iter().flatten().flatten().collect(),
        }
    } else {
        let side: WindowSidecar = read_json(&sidecar_path(path))?;
        check_schema(side.schema_version, &what)?;
        let data = read_f32s(path)?;
        if data.len() != side.n_windows * side.channels.len() * side.window_len {
            return Err(Error::Format(format!("{what}: payload does not match sidecar")));
        }
        WindowSet {
            rate_hz: side.rate_hz,
            window_len: side.window_len,
            channels: side.channels,
            subject_ids: side.subject_ids,
            data,
        }
    };
    set.validate(&what)?;
    Ok(set)
}

/// Schedule as stored in checkpoints and configs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub steps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.steps, self.beta_min, self.beta_max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct SegmentEntry {
    name: String,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NetEntry {
    role: String,
    offset: usize,
    len: usize,
    segments: Vec<SegmentEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrainEntry {
    config: TrainConfig,
    epoch: usize,
    step: u64,
    /// Per network: Adam step count; moments follow the parameters in the blob.
    adam_steps: Vec<u64>,
    moments_offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    kind: ModelKind,
    net: NetConfig,
    schedule: ScheduleSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    gamma: Option<usize>,
    blob: String,
    nets: Vec<NetEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train: Option<TrainEntry>,
}

fn blob_path(manifest: &Path) -> PathBuf {
    manifest.with_extension("bin")
}

/// Everything a checkpoint holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub schedule: ScheduleSpec,
    pub train: Option<TrainState>,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub epoch: usize,
    pub step: u64,
    pub opt: Vec<AdamW>,
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer, schedule: ScheduleSpec) -> Self {
        Checkpoint {
            model: t.model.clone(),
            schedule,
            train: Some(TrainState {
                config: t.config.clone(),
                epoch: t.epoch,
                step: t.step,
                opt: t.opt.clone(),
            }),
        }
    }

    pub fn into_trainer(self, config: TrainConfig) -> Result<Trainer> {
        let mut t = Trainer::new(self.model, config)?;
        if let Some(st) = self.train {
            t.epoch = st.epoch;
            t.step = st.step;
            for (dst, mut src) in t.opt.iter_mut().zip(st.opt) {
                src.weight_decay = dst.weight_decay;
                *dst = src;
            }
        }
        Ok(t)
    }
}

/// Writes `<path>` (JSON manifest) and `<path minus extension>.bin`.
pub fn save_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let model = &ck.model;
    let blob = blob_path(path);
    let mut data: Vec<f32> = Vec::new();
    let mut nets = Vec::new();
    for (net, role) in model.nets().iter().zip(model.net_roles()) {
        nets.push(NetEntry {
            role: role.to_string(),
            offset: data.len(),
            len: net.param_count(),
            segments: net
                .segments()
                .iter()
                .map(|s| SegmentEntry {
                    name: s.name.clone(),
                    offset: s.offset,
                    len: s.len,
                })
                .collect(),
        });
        data.extend_from_slice(net.params());
    }
    let train = ck.train.as_ref().map(|st| {
        let moments_offset = data.len();
        for o in &st.opt {
            data.extend_from_slice(&o.m);
            data.extend_from_slice(&o.v);
        }
        TrainEntry {
            config: st.config.clone(),
            epoch: st.epoch,
            step: st.step,
            adam_steps: st.opt.iter().map(|o| o.t).collect(),
            moments_offset,
        }
    });
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        kind: model.kind(),
        net: model.config().clone(),
        schedule: ck.schedule,
        gamma: model.gamma(),
        blob: blob
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        nets,
        train,
    };
    write_f32s(&blob, &data)?;
    write_json(path, &manifest)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let what = path.display().to_string();
    let m: Manifest = read_json(path)?;
    check_schema(m.schema_version, &what)?;
    let blob = path.with_file_name(&m.blob);
    let data = read_f32s(&blob)?;
    let sched = m.schedule.build()?;
    let expected_roles: &[&str] = match m.kind {
        ModelKind::Rddm => &["eps_theta", "rho_phi"],
        ModelKind::Ddpm => &["eps_theta"],
    };
    let roles: Vec<&str> = m.nets.iter().map(|n| n.role.as_str()).collect();
    if roles != expected_roles {
        return Err(Error::Format(format!("{what}: networks {roles:?} do not fit a {} model", m.kind)));
    }
    let mut nets = Vec::new();
    for entry in &m.nets {
        let end = entry.offset + entry.len;
        if end > data.len() {
            return Err(Error::Format(format!("{what}: blob too short for {}", entry.role)));
        }
        let net = Denoiser::from_params(m.net.clone(), data[entry.offset..end].to_vec())?;
        let same_layout = net.segments().len() == entry.segments.len()
            && net
                .segments()
                .iter()
                .zip(&entry.segments)
                .all(|(a, b)| a.name == b.name && a.offset == b.offset && a.len == b.len);
        if !same_layout {
            return Err(Error::Version(format!(
                "{what}: parameter layout of {} does not match this build",
                entry.role
            )));
        }
        nets.push(net);
    }
    let model = match m.kind {
        ModelKind::Rddm => {
            let rho_phi = nets.pop().unwrap();
            let eps_theta = nets.pop().unwrap();
            Model::Rddm(RddmModel {
                eps_theta,
                rho_phi,
                sched,
                gamma: m.gamma.ok_or_else(|| Error::Format(format!("{what}: rddm checkpoint without gamma")))?,
            })
        }
        ModelKind::Ddpm => Model::Ddpm(DdpmModel {
            eps_theta: nets.pop().unwrap(),
            sched,
        }),
    };
    let train = match m.train {
        None => None,
        Some(te) => {
            let mut opt = Vec::new();
            let mut off = te.moments_offset;
            for (net, &t) in model.nets().iter().zip(&te.adam_steps) {
                let n = net.param_count();
                if off + 2 * n > data.len() {
                    return Err(Error::Format(format!("{what}: blob too short for optimizer state")));
                }
                let mut o = AdamW::new(n, te.config.weight_decay);
                o.t = t;
                o.m = data[off..off + n].to_vec();
                o.v = data[off + n..off + 2 * n].to_vec();
                off += 2 * n;
                opt.push(o);
            }
            if opt.len() != model.nets().len() {
                return Err(Error::Format(format!("{what}: optimizer state count mismatch")));
            }
            Some(TrainState {
                config: te.config,
                epoch: te.epoch,
                step: te.step,
                opt,
            })
        }
    };
    Ok(Checkpoint {
        model,
        schedule: m.schedule,
        train,
    })
}
