//! `rddm`: synthesize data, train, sample, evaluate and benchmark
//! region-disentangled PPG-to-ECG diffusion models.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs; exit code 2.
    Usage(String),
    /// Failure while doing the work; exit code 1.
    Runtime(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<rddm_core::Error> for CliError {
    fn from(e: rddm_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(name = "rddm", version, about = "Region-disentangled diffusion for PPG-to-ECG translation")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum KindArg {
    Rddm,
    Ddpm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Steps,
    Gamma,
}

/// Flags shared by commands that read a run config.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// TOML run config; missing fields take their defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides train.seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides train.epochs.
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Overrides train.batch.
    #[arg(long)]
    pub batch: Option<usize>,
    /// Overrides train.lr.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Overrides schedule.T.
    #[arg(long = "T")]
    pub steps: Option<usize>,
    /// Overrides rddm.gamma.
    #[arg(long)]
    pub gamma: Option<usize>,
    /// Overrides model.kind.
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Window-set files to train on; sets data.source = "files".
    #[arg(long = "data", num_args = 1..)]
    pub data: Vec<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic paired PPG/ECG windows with ground truth.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 512)]
        pairs: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Recording length before windowing, seconds.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long, default_value_t = 50.0)]
        hr_min: f64,
        #[arg(long, default_value_t = 120.0)]
        hr_max: f64,
        #[arg(long, default_value_t = 0.05)]
        jitter_max: f64,
        #[arg(long, default_value_t = 0.02)]
        noise_max: f64,
        #[arg(long, default_value_t = 128.0)]
        rate: f64,
        /// Also write each raw recording as `<dir>/<subject>.csv`.
        #[arg(long)]
        raw_dir: Option<PathBuf>,
    },
    /// Resample, filter, normalize and window raw recordings.
    Preprocess {
        #[arg(long = "input", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Build ROI masks from explicit peaks or from detected R-peaks.
    Mask {
        /// Comma-separated R-peak indices.
        #[arg(long, value_delimiter = ',', conflicts_with = "windows")]
        peaks: Option<Vec<usize>>,
        /// Mask length for `--peaks`; window sets use their own.
        #[arg(long, default_value_t = 512)]
        length: usize,
        #[arg(long, default_value_t = 32)]
        gamma: usize,
        /// Window set whose ECG channel is searched for R-peaks.
        #[arg(long)]
        windows: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train an RDDM or DDPM model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Checkpoint manifest to write.
        #[arg(long)]
        out: PathBuf,
        /// JSON-lines log; defaults to `<out>.log.jsonl`.
        #[arg(long)]
        log: Option<PathBuf>,
        /// Continue from a checkpoint that carries optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Also write `<stem>.epoch-<N>.json` every N epochs.
        #[arg(long)]
        checkpoint_every: Option<usize>,
        /// Record per-step wall time in the log (breaks byte reproducibility).
        #[arg(long)]
        log_wall_time: bool,
        #[arg(long)]
        quiet: bool,
    },
    /// Translate PPG windows into ECG windows.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Reverse steps; defaults to the trained T.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Score generated ECG windows against ground truth.
    Eval {
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        /// Truth sidecar from `synth`; gives exact heart rates.
        #[arg(long)]
        truth_json: Option<PathBuf>,
        #[arg(long, default_value = "synth")]
        dataset: String,
        #[arg(long, default_value = "rddm")]
        method: String,
        #[arg(long, default_value_t = 10)]
        steps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Time translation at several step counts.
    Bench {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10")]
        steps: Vec<usize>,
        /// Use only the first N windows.
        #[arg(long)]
        windows: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "synth")]
        dataset: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// RMSE vs time scatter.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Metric as a function of sampling steps or ROI width.
    Sweep {
        #[arg(long, value_enum)]
        param: SweepParam,
        #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
        values: Vec<usize>,
        /// Trained model, for `--param steps`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Held-out windows with ppg and ecg channels.
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        truth_json: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        sample_seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Training setup, for `--param gamma`.
        #[command(flatten)]
        cfg: ConfigArgs,
    },
    /// Print the noise schedule table.
    ScheduleDump {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "T")]
        steps: Option<usize>,
        #[arg(long)]
        beta_min: Option<f64>,
        #[arg(long)]
        beta_max: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    use commands as c;
    match cli.cmd {
        Command::Synth {
            out,
            pairs,
            seed,
            duration,
            hr_min,
            hr_max,
            jitter_max,
            noise_max,
            rate,
            raw_dir,
        } => c::synth(c::SynthArgs {
            out,
            pairs,
            seed,
            duration,
            hr: (hr_min, hr_max),
            jitter_max,
            noise_max,
            rate,
            raw_dir,
        }),
        Command::Preprocess { inputs, out } => c::preprocess(&inputs, &out),
        Command::Mask {
            peaks,
            length,
            gamma,
            windows,
            out,
        } => c::mask(peaks, length, gamma, windows, out),
        Command::Train {
            cfg,
            out,
            log,
            resume,
            checkpoint_every,
            log_wall_time,
            quiet,
        } => c::train(c::TrainArgs {
            cfg,
            out,
            log,
            resume,
            checkpoint_every,
            log_wall_time,
            quiet,
        }),
        Command::Sample {
            checkpoint,
            input,
            out,
            steps,
            seed,
        } => c::sample(&checkpoint, &input, &out, steps, seed),
        Command::Eval {
            generated,
            truth,
            truth_json,
            dataset,
            method,
            steps,
            out,
        } => c::eval(c::EvalArgs {
            generated,
            truth,
            truth_json,
            dataset,
            method,
            steps,
            out,
        }),
        Command::Bench {
            checkpoint,
            input,
            steps,
            windows,
            seed,
            dataset,
            out,
            svg,
        } => c::bench(c::BenchArgs {
            checkpoint,
            input,
            steps,
            windows,
            seed,
            dataset,
            out,
            svg,
        }),
        Command::Sweep {
            param,
            values,
            checkpoint,
            input,
            truth_json,
            sample_seed,
            out,
            cfg,
        } => c::sweep(c::SweepArgs {
            param,
            values,
            checkpoint,
            input,
            truth_json,
            sample_seed,
            out,
            cfg,
        }),
        Command::ScheduleDump {
            config,
            steps,
            beta_min,
            beta_max,
            out,
        } => c::schedule_dump(config, steps, beta_min, beta_max, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Usage(_) => 2,
                CliError::Runtime(_) => 1,
            })
        }
    }
}
