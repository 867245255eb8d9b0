use std::collections::BTreeMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rddm_core::dsp::{PairedWindow, PreprocessConfig, Signal};
use rddm_core::io::{
    load_checkpoint, read_recording, read_windows, save_checkpoint, write_recording, write_windows, Checkpoint,
    Recording, ScheduleSpec, WindowSet, SCHEMA_LINE, SCHEMA_VERSION,
};
use rddm_core::metrics::{bench_with_outputs, evaluate, hr_mae, timing_svg, ReportRow, REPORT_HEADER};
use rddm_core::qrs::{build_roi_mask, detect_rpeaks, estimate_hr, RPeakSet};
use rddm_core::rddm::{Model, ModelKind, SampleOptions, StepLog, Trainer, TrainingExample};
use rddm_core::synth::{make_dataset, DatasetRanges};
use rddm_core::{Error, WINDOW_LEN, WINDOW_RATE_HZ};
use serde::{Deserialize, Serialize};

use crate::config::{DataSource, RunConfig};
use crate::{CliError, ConfigArgs, KindArg, SweepParam};

type CliResult = Result<(), CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

/// Missing or unreadable inputs are usage errors; everything else is runtime.
fn input_error(path: &Path, e: Error) -> CliError {
    match e {
        Error::Io(_) | Error::Format(_) | Error::Json(_) | Error::Version(_) => {
            usage(format!("{}: {e}", path.display()))
        }
        other => other.into(),
    }
}

fn require_file(path: &Path, what: &str) -> CliResult {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} {} does not exist", path.display())))
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// Writes `text` to `out`, or to stdout when no path is given.
fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => {
            let mut w = create(p)?;
            w.write_all(text.as_bytes())?;
            w.flush()?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

/// Ground truth written next to a synthetic window set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub seed: u64,
    pub pairs: Vec<TruthPair>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TruthPair {
    pub subject_id: String,
    pub hr_bpm: f64,
    pub rr_jitter: f64,
    pub noise_std: f64,
    pub delay_ms: f64,
    pub first_beat_s: f64,
    /// R-peak indices of each window, relative to the window start.
    pub window_peaks: Vec<Vec<usize>>,
}

pub fn truth_path(windows: &Path) -> PathBuf {
    let mut s = windows.as_os_str().to_owned();
    s.push(".truth.json");
    PathBuf::from(s)
}

fn read_truth(path: &Path) -> Result<TruthFile, CliError> {
    require_file(path, "truth file")?;
    let text = fs::read_to_string(path)?;
    let t: TruthFile = serde_json::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    if t.schema_version != SCHEMA_VERSION {
        return Err(usage(format!(
            "{}: schema version {} (expected {SCHEMA_VERSION})",
            path.display(),
            t.schema_version
        )));
    }
    Ok(t)
}

pub struct SynthArgs {
    pub out: PathBuf,
    pub pairs: usize,
    pub seed: u64,
    pub duration: f64,
    pub hr: (f64, f64),
    pub jitter_max: f64,
    pub noise_max: f64,
    pub rate: f64,
    pub raw_dir: Option<PathBuf>,
}

pub fn synth(a: SynthArgs) -> CliResult {
    if a.pairs == 0 {
        return Err(usage("--pairs must be at least 1"));
    }
    let ranges = DatasetRanges {
        hr_bpm: a.hr,
        rr_jitter: (0.0, a.jitter_max),
        noise_std: (0.0, a.noise_max),
        duration_s: a.duration,
        rate_hz: a.rate,
        ..DatasetRanges::default()
    };
    if a.duration < rddm_core::WINDOW_SECONDS {
        return Err(usage("--duration must cover at least one 4 s window"));
    }
    ranges.validate().map_err(|e| usage(e.to_string()))?;
    let data = make_dataset(a.pairs, &ranges, a.seed).map_err(|e| usage(e.to_string()))?;
    let windows: Vec<PairedWindow> = data.iter().flat_map(|p| p.windows.iter().cloned()).collect();
    write_windows(&a.out, &WindowSet::from_pairs(&windows))?;
    let truth = TruthFile {
        schema_version: SCHEMA_VERSION,
        seed: a.seed,
        pairs: data
            .iter()
            .zip(&windows_subjects(&data))
            .map(|(p, id)| TruthPair {
                subject_id: id.clone(),
                hr_bpm: p.truth_hr,
                rr_jitter: p.spec.rr_jitter,
                noise_std: p.spec.noise_std,
                delay_ms: p.delay_ms,
                first_beat_s: p.spec.first_beat_s,
                window_peaks: p.window_peaks.iter().map(|r| r.indices().to_vec()).collect(),
            })
            .collect(),
    };
    let mut w = create(&truth_path(&a.out))?;
    serde_json::to_writer_pretty(&mut w, &truth).map_err(|e| CliError::Runtime(e.to_string()))?;
    w.write_all(b"\n")?;
    w.flush()?;
    if let Some(dir) = &a.raw_dir {
        fs::create_dir_all(dir)?;
        for (p, id) in data.iter().zip(windows_subjects(&data)) {
            let ranges_rate = p.spec.rate_hz;
            let (ecg, ppg) = raw_signals(p)?;
            write_recording(
                &dir.join(format!("{id}.csv")),
                &Recording {
                    rate_hz: ranges_rate,
                    ppg,
                    ecg,
                },
            )?;
        }
    }
    println!("wrote {} windows from {} pairs to {}", windows.len(), data.len(), a.out.display());
    Ok(())
}

fn windows_subjects(data: &[rddm_core::synth::SynthPair]) -> Vec<String> {
    data.iter()
        .map(|p| p.windows.first().map(|w| w.subject_id().to_string()).unwrap_or_default())
        .collect()
}

fn raw_signals(p: &rddm_core::synth::SynthPair) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let (ecg, _) = rddm_core::synth::gen_ecg(&p.spec)?;
    let raw = rddm_core::synth::gen_raw_ppg(&p.spec, p.delay_ms)?;
    Ok((ecg.into_samples(), raw.into_samples()))
}

pub fn preprocess(inputs: &[PathBuf], out: &Path) -> CliResult {
    let cfg = PreprocessConfig::default();
    let mut windows = Vec::new();
    for path in inputs {
        require_file(path, "input")?;
        let rec = read_recording(path).map_err(|e| input_error(path, e))?;
        let (ecg, ppg) = rec.signals()?;
        let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let w = cfg.preprocess_pair(&ecg, &ppg, &id)?;
        windows.extend(w);
    }
    if windows.is_empty() {
        return Err(CliError::Runtime("no complete 4 s window in any input".into()));
    }
    write_windows(out, &WindowSet::from_pairs(&windows))?;
    println!("wrote {} windows to {}", windows.len(), out.display());
    Ok(())
}

pub fn mask(
    peaks: Option<Vec<usize>>,
    length: usize,
    gamma: usize,
    windows: Option<PathBuf>,
    out: Option<PathBuf>,
) -> CliResult {
    let (peak_sets, len): (Vec<RPeakSet>, usize) = match (peaks, windows) {
        (Some(p), None) => (
            vec![RPeakSet::new(p, WINDOW_RATE_HZ).map_err(|e| usage(e.to_string()))?],
            if length == 0 { WINDOW_LEN } else { length },
        ),
        (None, Some(path)) => {
            require_file(&path, "window set")?;
            let set = read_windows(&path).map_err(|e| input_error(&path, e))?;
            let ecg = set.channel("ecg").map_err(|e| input_error(&path, e))?;
            let sets = ecg
                .chunks(set.window_len)
                .map(|w| {
                    let s = Signal::ecg(w.iter().map(|&v| v as f64).collect(), set.rate_hz)?;
                    detect_rpeaks(&s)
                })
                .collect::<Result<_, _>>()?;
            (sets, set.window_len)
        }
        _ => return Err(usage("give exactly one of --peaks or --windows")),
    };
    let mut text = format!("{SCHEMA_LINE}\n");
    for p in &peak_sets {
        let m = build_roi_mask(p, len, gamma).map_err(|e| usage(e.to_string()))?;
        let row: Vec<&str> = m.bits().iter().map(|&b| if b == 1 { "1" } else { "0" }).collect();
        text.push_str(&row.join(","));
        text.push('\n');
    }
    emit(out.as_deref(), &text)
}

/// Applies flag overrides to the loaded config, then validates it.
fn resolve(cfg: &ConfigArgs) -> Result<RunConfig, CliError> {
    let mut rc = RunConfig::load(cfg.config.as_deref())?;
    if let Some(v) = cfg.seed {
        rc.train.seed = v;
    }
    if let Some(v) = cfg.epochs {
        rc.train.epochs = v;
    }
    if let Some(v) = cfg.batch {
        rc.train.batch = v;
    }
    if let Some(v) = cfg.lr {
        rc.train.lr = v;
        rc.train.lr_min = rc.train.lr_min.min(v);
    }
    if let Some(v) = cfg.steps {
        rc.schedule.steps = v;
    }
    if let Some(v) = cfg.gamma {
        rc.rddm.gamma = v;
    }
    if let Some(k) = cfg.kind {
        rc.model.kind = match k {
            KindArg::Rddm => ModelKind::Rddm,
            KindArg::Ddpm => ModelKind::Ddpm,
        };
    }
    if !cfg.data.is_empty() {
        rc.data.source = DataSource::Files;
        rc.data.paths = cfg.data.clone();
    }
    rc.validate()?;
    Ok(rc)
}

fn training_windows(rc: &RunConfig) -> Result<Vec<PairedWindow>, CliError> {
    match rc.data.source {
        DataSource::Synth => Ok(make_dataset(rc.data.n_pairs, &rc.data.ranges(), rc.data.seed)?
            .into_iter()
            .flat_map(|p| p.windows)
            .collect()),
        DataSource::Files => {
            let mut out = Vec::new();
            for path in &rc.data.paths {
                let set = read_windows(path).map_err(|e| input_error(path, e))?;
                out.extend(paired_windows(&set).map_err(|e| input_error(path, e))?);
            }
            Ok(out)
        }
    }
}

fn paired_windows(set: &WindowSet) -> Result<Vec<PairedWindow>, Error> {
    let ppg = set.channel("ppg")?;
    let ecg = set.channel("ecg")?;
    let l = set.window_len;
    ppg.chunks(l)
        .zip(ecg.chunks(l))
        .zip(&set.subject_ids)
        .map(|((p, e), id)| {
            PairedWindow::new(
                p.iter().map(|&v| v as f64).collect(),
                e.iter().map(|&v| v as f64).collect(),
                id.clone(),
            )
        })
        .collect()
}

fn training_examples(rc: &RunConfig) -> Result<Vec<TrainingExample>, CliError> {
    let windows = training_windows(rc)?;
    if windows.is_empty() {
        return Err(usage("config field `data`: no training windows"));
    }
    Ok(windows
        .iter()
        .map(|w| TrainingExample::from_window(w, rc.rddm.gamma))
        .collect::<Result<_, _>>()?)
}

fn fresh_trainer(rc: &RunConfig) -> Result<Trainer, CliError> {
    let model = Model::new(
        rc.model.kind,
        rc.net_config(),
        rc.schedule_spec().build()?,
        rc.rddm.gamma,
        rc.train.seed,
    )?;
    Ok(Trainer::new(model, rc.train_config())?)
}

/// Checks that a checkpoint was produced by the same model setup as `rc`.
fn check_compatible(ck: &Checkpoint, rc: &RunConfig, path: &Path) -> CliResult {
    let mismatch = |what: &str| {
        usage(format!(
            "{}: checkpoint {what} does not match the run config",
            path.display()
        ))
    };
    if ck.model.kind() != rc.model.kind {
        return Err(mismatch("model.kind"));
    }
    if *ck.model.config() != rc.net_config() {
        return Err(mismatch("model"));
    }
    if ck.schedule != rc.schedule_spec() {
        return Err(mismatch("schedule"));
    }
    if ck.model.kind() == ModelKind::Rddm && ck.model.gamma() != Some(rc.rddm.gamma) {
        return Err(mismatch("rddm.gamma"));
    }
    Ok(())
}

#[derive(Serialize)]
struct LogHeader<'a> {
    schema_version: u32,
    kind: ModelKind,
    seed: u64,
    epochs: usize,
    batch: usize,
    config: &'a RunConfig,
}

pub struct TrainArgs {
    pub cfg: ConfigArgs,
    pub out: PathBuf,
    pub log: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
    pub log_wall_time: bool,
    pub quiet: bool,
}

pub fn log_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".log.jsonl");
    PathBuf::from(s)
}

/// `<dir>/<stem>.epoch-<n>.json` next to the final checkpoint.
pub fn periodic_path(out: &Path, epoch: usize) -> PathBuf {
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    out.with_file_name(format!("{stem}.epoch-{epoch}.json"))
}

/// Trains to `rc.train.epochs` epochs, appending to `log`.
fn run_training(
    rc: &RunConfig,
    mut trainer: Trainer,
    data: &[TrainingExample],
    log: &mut dyn Write,
    wall: bool,
    every: Option<(usize, &Path)>,
    quiet: bool,
) -> Result<Trainer, CliError> {
    let schedule = rc.schedule_spec();
    while trainer.epoch < rc.train.epochs {
        let mut err = None;
        let mean = trainer.run_epoch(data, &mut |s: &StepLog| {
            let mut s = s.clone();
            if !wall {
                s.wall_ms = None;
            }
            if err.is_none() {
                if let Err(e) = serde_json::to_writer(&mut *log, &s)
                    .map_err(std::io::Error::from)
                    .and_then(|_| log.write_all(b"\n"))
                {
                    err = Some(e);
                }
            }
        })?;
        if let Some(e) = err {
            return Err(e.into());
        }
        if !quiet {
            println!("epoch {:>4}  loss {:.6}", trainer.epoch, mean);
        }
        if let Some((n, path)) = every {
            if n > 0 && trainer.epoch % n == 0 && trainer.epoch < rc.train.epochs {
                save_checkpoint(&periodic_path(path, trainer.epoch), &Checkpoint::from_trainer(&trainer, schedule))?;
            }
        }
    }
    log.flush()?;
    Ok(trainer)
}

pub fn train(a: TrainArgs) -> CliResult {
    let rc = resolve(&a.cfg)?;
    let log_file = a.log.clone().unwrap_or_else(|| log_path(&a.out));
    let (trainer, mut log) = match &a.resume {
        Some(path) => {
            require_file(path, "checkpoint")?;
            let ck = load_checkpoint(path).map_err(|e| input_error(path, e))?;
            check_compatible(&ck, &rc, path)?;
            if ck.train.is_none() {
                return Err(usage(format!("{}: checkpoint has no optimizer state", path.display())));
            }
            let t = ck.into_trainer(rc.train_config())?;
            let log = OpenOptions::new().create(true).append(true).open(&log_file)?;
            (t, BufWriter::new(log))
        }
        None => {
            let mut log = create(&log_file)?;
            let header = LogHeader {
                schema_version: SCHEMA_VERSION,
                kind: rc.model.kind,
                seed: rc.train.seed,
                epochs: rc.train.epochs,
                batch: rc.train.batch,
                config: &rc,
            };
            serde_json::to_writer(&mut log, &serde_json::json!({ "rddm_schema": header }))
                .map_err(|e| CliError::Runtime(e.to_string()))?;
            log.write_all(b"\n")?;
            (fresh_trainer(&rc)?, log)
        }
    };
    let data = training_examples(&rc)?;
    if !a.quiet {
        println!(
            "training {} ({} parameters per net) on {} windows for {} epochs",
            rc.model.kind,
            trainer.model.nets()[0].param_count(),
            data.len(),
            rc.train.epochs
        );
    }
    let trainer = run_training(
        &rc,
        trainer,
        &data,
        &mut log,
        a.log_wall_time,
        a.checkpoint_every.map(|n| (n, a.out.as_path())),
        a.quiet,
    )?;
    save_checkpoint(&a.out, &Checkpoint::from_trainer(&trainer, rc.schedule_spec()))?;
    if !a.quiet {
        println!("wrote checkpoint {}", a.out.display());
    }
    Ok(())
}

fn load_model(path: &Path) -> Result<Model, CliError> {
    require_file(path, "checkpoint")?;
    Ok(load_checkpoint(path).map_err(|e| input_error(path, e))?.model)
}

fn read_set(path: &Path, what: &str) -> Result<WindowSet, CliError> {
    require_file(path, what)?;
    read_windows(path).map_err(|e| input_error(path, e))
}

fn channel(set: &WindowSet, name: &str, path: &Path) -> Result<Vec<f32>, CliError> {
    set.channel(name).map_err(|e| input_error(path, e))
}

fn check_window_len(set: &WindowSet, model: &Model, path: &Path) -> CliResult {
    model
        .config()
        .check_len(set.window_len)
        .map_err(|e| usage(format!("{}: {e}", path.display())))
}

pub fn sample(ck: &Path, input: &Path, out: &Path, steps: Option<usize>, seed: u64) -> CliResult {
    let model = load_model(ck)?;
    let set = read_set(input, "input")?;
    check_window_len(&set, &model, input)?;
    let conds = channel(&set, "ppg", input)?;
    let generated = model.sample(
        &conds,
        set.window_len,
        SampleOptions {
            steps: steps.unwrap_or(0),
            seed,
            ..SampleOptions::default()
        },
    )?;
    let mut result = WindowSet::single("ecg", set.window_len, generated, set.subject_ids.clone())?;
    result.rate_hz = set.rate_hz;
    write_windows(out, &result)?;
    println!("wrote {} windows to {}", result.n_windows(), out.display());
    Ok(())
}

/// Groups window indices into HR segments of two consecutive windows from
/// the same subject; a subject with a single window forms its own segment.
pub fn hr_segments(subject_ids: &[String]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < subject_ids.len() {
        let mut end = start + 1;
        while end < subject_ids.len() && subject_ids[end] == subject_ids[start] {
            end += 1;
        }
        if end - start == 1 {
            out.push(vec![start]);
        } else {
            let mut i = start;
            while i + 1 < end {
                out.push(vec![i, i + 1]);
                i += 2;
            }
        }
        start = end;
    }
    out
}

fn to_f64(x: &[f32]) -> Vec<f64> {
    x.iter().map(|&v| v as f64).collect()
}

fn segment_signal(data: &[f32], len: usize, seg: &[usize], rate: f64) -> Result<Signal, CliError> {
    let s: Vec<f64> = seg.iter().flat_map(|&w| to_f64(&data[w * len..(w + 1) * len])).collect();
    Ok(Signal::ecg(s, rate)?)
}

/// Truth HR per segment: generator HR when a truth file is given, otherwise
/// the HR detected on the truth ECG (segments where that fails are dropped).
fn score_hr(
    generated: &[f32],
    truth_ecg: &[f32],
    set: &WindowSet,
    truth: Option<&TruthFile>,
) -> Result<(Option<f64>, usize), CliError> {
    let by_subject: BTreeMap<&str, f64> = truth
        .map(|t| t.pairs.iter().map(|p| (p.subject_id.as_str(), p.hr_bpm)).collect())
        .unwrap_or_default();
    let (mut gens, mut hrs) = (Vec::new(), Vec::new());
    let mut skipped = 0;
    for seg in hr_segments(&set.subject_ids) {
        let hr = if truth.is_some() {
            match by_subject.get(set.subject_ids[seg[0]].as_str()) {
                Some(&h) => h,
                None => {
                    return Err(usage(format!(
                        "truth file has no subject {:?}",
                        set.subject_ids[seg[0]]
                    )))
                }
            }
        } else {
            match estimate_hr(&segment_signal(truth_ecg, set.window_len, &seg, set.rate_hz)?) {
                Ok(h) => h,
                Err(_) => {
                    skipped += 1;
                    continue;
                }
            }
        };
        gens.push(segment_signal(generated, set.window_len, &seg, set.rate_hz)?);
        hrs.push(hr);
    }
    if gens.is_empty() {
        return Ok((None, skipped));
    }
    match hr_mae(&gens, &hrs) {
        Ok(r) => Ok((Some(r.mae), skipped + r.skipped)),
        Err(Error::NoValidWindows { skipped: s }) => Ok((None, skipped + s)),
        Err(e) => Err(e.into()),
    }
}

struct Scores {
    rmse: f64,
    fd: f64,
    hr_mae: Option<f64>,
    hr_skipped: usize,
}

fn score(generated: &[f32], truth_set: &WindowSet, truth: Option<&TruthFile>, truth_path: &Path) -> Result<Scores, CliError> {
    let truth_ecg = channel(truth_set, "ecg", truth_path)?;
    if truth_ecg.len() != generated.len() {
        return Err(usage(format!(
            "generated set has {} windows but truth has {}",
            generated.len() / truth_set.window_len.max(1),
            truth_set.n_windows()
        )));
    }
    let ev = evaluate(&to_f64(generated), &to_f64(&truth_ecg), truth_set.window_len)?;
    let (hr, skipped) = score_hr(generated, &truth_ecg, truth_set, truth)?;
    Ok(Scores {
        rmse: ev.rmse,
        fd: ev.fd,
        hr_mae: hr,
        hr_skipped: skipped,
    })
}

fn default_truth(input: &Path, given: Option<&Path>) -> Result<Option<TruthFile>, CliError> {
    match given {
        Some(p) => Ok(Some(read_truth(p)?)),
        None => {
            let p = truth_path(input);
            if p.is_file() {
                Ok(Some(read_truth(&p)?))
            } else {
                Ok(None)
            }
        }
    }
}

pub struct EvalArgs {
    pub generated: PathBuf,
    pub truth: PathBuf,
    pub truth_json: Option<PathBuf>,
    pub dataset: String,
    pub method: String,
    pub steps: usize,
    pub out: Option<PathBuf>,
}

pub fn eval(a: EvalArgs) -> CliResult {
    let gen_set = read_set(&a.generated, "generated set")?;
    let truth_set = read_set(&a.truth, "truth set")?;
    if gen_set.window_len != truth_set.window_len {
        return Err(usage("generated and truth sets have different window lengths"));
    }
    let generated = channel(&gen_set, "ecg", &a.generated)?;
    let truth = default_truth(&a.truth, a.truth_json.as_deref())?;
    let s = score(&generated, &truth_set, truth.as_ref(), &a.truth)?;
    let row = ReportRow {
        dataset: a.dataset,
        method: a.method,
        steps: a.steps,
        rmse: s.rmse,
        fd: s.fd,
        hr_mae: s.hr_mae,
        per_window_ms: None,
    };
    emit(
        a.out.as_deref(),
        &format!("{SCHEMA_LINE}\n{REPORT_HEADER}\n{}\n", row.csv_line()),
    )
}

pub struct BenchArgs {
    pub checkpoint: PathBuf,
    pub input: PathBuf,
    pub steps: Vec<usize>,
    pub windows: Option<usize>,
    pub seed: u64,
    pub dataset: String,
    pub out: Option<PathBuf>,
    pub svg: Option<PathBuf>,
}

pub const BENCH_HEADER: &str = "dataset,method,steps,rmse,fd,hr_mae,per_window_ms,windows,net_calls,total_ms";

pub fn bench(a: BenchArgs) -> CliResult {
    if a.steps.is_empty() || a.steps.contains(&0) {
        return Err(usage("--steps needs positive step counts"));
    }
    let model = load_model(&a.checkpoint)?;
    let mut set = read_set(&a.input, "input")?;
    check_window_len(&set, &model, &a.input)?;
    if let Some(n) = a.windows {
        if n == 0 {
            return Err(usage("--windows must be positive"));
        }
        let n = n.min(set.n_windows());
        set.data.truncate(n * set.channels.len() * set.window_len);
        set.subject_ids.truncate(n);
    }
    let conds = channel(&set, "ppg", &a.input)?;
    let has_truth = set.channels.iter().any(|c| c == "ecg");
    let truth = if has_truth { default_truth(&a.input, None)? } else { None };
    let mut rows = Vec::new();
    let mut text = format!("{SCHEMA_LINE}\n{BENCH_HEADER}\n");
    for (timing, generated) in bench_with_outputs(&model, &conds, set.window_len, &a.steps, a.seed)? {
        let (rmse, fd, hr) = if has_truth {
            let s = score(&generated, &set, truth.as_ref(), &a.input)?;
            (s.rmse, s.fd, s.hr_mae)
        } else {
            (f64::NAN, f64::NAN, None)
        };
        let row = ReportRow {
            dataset: a.dataset.clone(),
            method: timing.method.clone(),
            steps: timing.steps,
            rmse,
            fd,
            hr_mae: hr,
            per_window_ms: Some(timing.per_window_ms),
        };
        text.push_str(&format!(
            "{},{},{},{:.3}\n",
            row.csv_line(),
            timing.windows,
            timing.net_calls,
            timing.total_ms
        ));
        rows.push(row);
    }
    if let Some(svg) = &a.svg {
        emit(Some(svg), &timing_svg(&rows))?;
    }
    emit(a.out.as_deref(), &text)
}

pub struct SweepArgs {
    pub param: SweepParam,
    pub values: Vec<usize>,
    pub checkpoint: Option<PathBuf>,
    pub input: PathBuf,
    pub truth_json: Option<PathBuf>,
    pub sample_seed: u64,
    pub out: Option<PathBuf>,
    pub cfg: ConfigArgs,
}

pub const SWEEP_HEADER: &str = "param,value,rmse,fd,hr_mae,hr_skipped";

pub fn sweep(a: SweepArgs) -> CliResult {
    if a.values.is_empty() {
        return Err(usage("--values is empty"));
    }
    if a.values.contains(&0) {
        return Err(usage("--values must be positive"));
    }
    let set = read_set(&a.input, "input")?;
    let conds = channel(&set, "ppg", &a.input)?;
    let truth = default_truth(&a.input, a.truth_json.as_deref())?;
    let opts = |steps| SampleOptions {
        steps,
        seed: a.sample_seed,
        ..SampleOptions::default()
    };
    let mut text = format!("{SCHEMA_LINE}\n{SWEEP_HEADER}\n");
    let mut push = |name: &str, v: usize, s: Scores| {
        let hr = s.hr_mae.map(|x| format!("{x:.6}")).unwrap_or_default();
        text.push_str(&format!("{name},{v},{:.6},{:.6},{hr},{}\n", s.rmse, s.fd, s.hr_skipped));
    };
    match a.param {
        SweepParam::Steps => {
            let ck = a
                .checkpoint
                .as_deref()
                .ok_or_else(|| usage("--param steps needs --checkpoint"))?;
            let model = load_model(ck)?;
            check_window_len(&set, &model, &a.input)?;
            for &v in &a.values {
                let generated = model.sample(&conds, set.window_len, opts(v))?;
                push("steps", v, score(&generated, &set, truth.as_ref(), &a.input)?);
            }
        }
        SweepParam::Gamma => {
            let base = resolve(&a.cfg)?;
            if base.model.kind != ModelKind::Rddm {
                return Err(usage("--param gamma needs model.kind = \"rddm\""));
            }
            for &v in &a.values {
                let mut rc = base.clone();
                rc.rddm.gamma = v;
                let data = training_examples(&rc)?;
                let trainer = run_training(&rc, fresh_trainer(&rc)?, &data, &mut std::io::sink(), false, None, true)?;
                check_window_len(&set, &trainer.model, &a.input)?;
                let generated = trainer.model.sample(&conds, set.window_len, opts(0))?;
                push("gamma", v, score(&generated, &set, truth.as_ref(), &a.input)?);
            }
        }
    }
    emit(a.out.as_deref(), &text)
}

pub fn schedule_dump(
    config: Option<PathBuf>,
    steps: Option<usize>,
    beta_min: Option<f64>,
    beta_max: Option<f64>,
    out: Option<PathBuf>,
) -> CliResult {
    let mut rc = RunConfig::load(config.as_deref())?;
    if let Some(v) = steps {
        rc.schedule.steps = v;
    }
    if let Some(v) = beta_min {
        rc.schedule.beta_min = v;
    }
    if let Some(v) = beta_max {
        rc.schedule.beta_max = v;
    }
    let spec: ScheduleSpec = rc.schedule_spec();
    let sched = spec.build().map_err(|e| usage(format!("config field `schedule`: {e}")))?;
    let mut text = format!("{SCHEMA_LINE}\nt,beta,alpha,alpha_bar,sigma\n");
    for t in 1..=sched.steps() {
        text.push_str(&format!(
            "{t},{:e},{:e},{:e},{:e}\n",
            sched.beta(t),
            sched.alpha(t),
            sched.alpha_bar(t),
            sched.sigma(t)
        ));
    }
    emit(out.as_deref(), &text)
}
