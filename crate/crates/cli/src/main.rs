//! `tdann` command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 no valid configuration.

mod commands;
mod config;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_neurons, parse_range};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
    NoValidConfiguration(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::NoValidConfiguration(_) => 3,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NoValidConfiguration(m) => f.write_str(m),
        }
    }
}

impl From<tdann::Error> for CliError {
    fn from(e: tdann::Error) -> Self {
        match e {
            tdann::Error::NoValidConfiguration(_) => CliError::NoValidConfiguration(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "tdann", version, about = "Time-delay neural network system identification")]
struct Cli {
    /// JSON file whose keys mirror long flag names; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic input/output recording with known ground truth.
    GenSynthetic(GenArgs),
    /// Exhaustive search over neuron counts and delay windows.
    Search(SearchArgs),
    /// Search and emit the full correlation grid plus a heatmap.
    Sweep(SweepArgs),
    /// Train a single network with fixed N and d.
    Train(TrainArgs),
    /// Replay a trained network over an input channel.
    Predict(PredictArgs),
    /// Score a network and a ridge baseline on the test pair.
    Eval(EvalArgs),
    /// Overlay predicted and recorded series as SVG.
    Plot(PlotArgs),
}

#[derive(Args, Debug, Clone, Default)]
pub struct DataArgs {
    /// Experiment manifest (JSON).
    #[arg(long, value_name = "FILE")]
    pub manifest: Option<PathBuf>,
    /// Experiment group inside the manifest.
    #[arg(long)]
    pub experiment: Option<String>,
}

#[derive(Debug, Clone)]
pub struct NeuronList(pub Vec<usize>);

#[derive(Args, Debug, Clone, Default)]
pub struct SpaceArgs {
    /// Hidden-layer sizes, e.g. `1-20,40,80,100` [default: 1-20,40,80,100].
    #[arg(long, value_parser = |s: &str| parse_neurons(s).map(NeuronList))]
    pub neurons: Option<NeuronList>,
    /// Largest delay window; d runs over 1..=d-max [default: 20].
    #[arg(long)]
    pub d_max: Option<usize>,
    /// Random restarts per (N, d) [default: 1].
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Base seed for weight initialization [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads [default: TDANN_JOBS, else available cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct LmArgs {
    /// Initial damping [default: 1e-3].
    #[arg(long)]
    pub lambda_init: Option<f64>,
    /// Damping increase factor after a rejected step [default: 10].
    #[arg(long)]
    pub lambda_up: Option<f64>,
    /// Damping decrease factor after an accepted step [default: 10].
    #[arg(long)]
    pub lambda_down: Option<f64>,
    /// Damping ceiling [default: 1e10].
    #[arg(long)]
    pub lambda_max: Option<f64>,
    /// Epoch budget [default: 200].
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Gradient infinity-norm tolerance [default: 1e-7].
    #[arg(long)]
    pub grad_tol: Option<f64>,
    /// Stop once training mse reaches this value; 0 disables [default: 0].
    #[arg(long)]
    pub mse_tol: Option<f64>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ScoringArgs {
    /// Delay-line priming: `from-input-head` or `zeros` [default: from-input-head].
    #[arg(long)]
    pub prime: Option<String>,
    /// Samples entering correlation: `full` or `exclude-primed` [default: full].
    #[arg(long)]
    pub corr_range: Option<String>,
    /// Detrend held-out series before prediction.
    #[arg(long)]
    pub detrend_test: bool,
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Full generator spec as JSON; replaces the generator flags below.
    #[arg(long, value_name = "FILE")]
    pub spec: Option<PathBuf>,
    /// `fir-linear`, `teacher-tdann` or `pseudo-cardiac`.
    #[arg(long)]
    pub kind: Option<String>,
    /// FIR taps, lag 0 first.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub taps: Option<Vec<f64>>,
    /// AR(1) pole of the input noise [default: 0.5].
    #[arg(long)]
    pub input_pole: Option<f64>,
    /// Teacher hidden neurons.
    #[arg(long)]
    pub n_hidden: Option<usize>,
    /// Teacher delay window.
    #[arg(long)]
    pub delay: Option<usize>,
    /// Teacher parameter range [default: 2].
    #[arg(long)]
    pub weight_scale: Option<f64>,
    /// `normal` or `flutter`.
    #[arg(long)]
    pub rhythm: Option<String>,
    /// Beat period in samples.
    #[arg(long)]
    pub beat_period: Option<usize>,
    /// Depolarization pulse width in samples [default: 2].
    #[arg(long)]
    pub pulse_width: Option<f64>,
    /// Transport delay in samples [default: 3].
    #[arg(long)]
    pub transfer_delay: Option<usize>,
    /// Moving-average length [default: 3].
    #[arg(long)]
    pub smoothing: Option<usize>,
    #[arg(long)]
    pub length: Option<usize>,
    /// Output noise standard deviation [default: 0].
    #[arg(long)]
    pub noise_rms: Option<f64>,
    /// [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Recording to write (channels `bsp`, `hsp`).
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Ground-truth JSON [default: <out>.truth.json].
    #[arg(long, value_name = "FILE")]
    pub truth: Option<PathBuf>,
    /// Also write a manifest splitting the recording into training and testing.
    #[arg(long, value_name = "FILE")]
    pub write_manifest: Option<PathBuf>,
    /// Fraction of samples used for training in the written manifest.
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
}

#[derive(Args, Debug)]
pub struct SearchArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Held-out signal that selects the winner: `test` or `validation` [default: test].
    #[arg(long)]
    pub select: Option<String>,
    /// Reuse records from an existing run log in the output directory.
    #[arg(long)]
    pub resume: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub space: SpaceArgs,
    #[command(flatten)]
    pub lm: LmArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    #[arg(long)]
    pub resume: bool,
    /// Output directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub lm: LmArgs,
    /// Hidden neurons.
    #[arg(long)]
    pub n_hidden: Option<usize>,
    /// Delay window.
    #[arg(long)]
    pub delay: Option<usize>,
    /// Initialization seed [default: 0].
    #[arg(long)]
    pub seed: Option<u64>,
    /// Model file to write.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PredictArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Recording holding the input channel.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    #[arg(long, default_value = "bsp")]
    pub channel: String,
    /// Delay-line priming: `from-input-head` or `zeros` [default: from-input-head].
    #[arg(long)]
    pub prime: Option<String>,
    /// Channel name for the prediction.
    #[arg(long, default_value = "predicted")]
    pub output_channel: String,
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub scoring: ScoringArgs,
    /// Ridge penalty of the linear baseline [default: 1e-3].
    #[arg(long)]
    pub baseline_gamma: Option<f64>,
    /// Baseline delay window [default: the model's d].
    #[arg(long)]
    pub baseline_d: Option<usize>,
    /// Report file; printed to stdout either way.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct PlotArgs {
    #[arg(long, value_name = "FILE")]
    pub prediction: PathBuf,
    #[arg(long, default_value = "predicted")]
    pub prediction_channel: String,
    #[arg(long, value_name = "FILE")]
    pub truth: PathBuf,
    #[arg(long, default_value = "hsp")]
    pub truth_channel: String,
    /// Samples to draw, `START:END`, 1-based inclusive [default: all].
    #[arg(long, value_parser = parse_range)]
    pub range: Option<(usize, usize)>,
    /// SVG file; the plotted values also go to a CSV next to it.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = config::ConfigFile::load(cli.config.as_deref()).and_then(|cfg| match cli.command {
        Command::GenSynthetic(a) => commands::gen_synthetic(a),
        Command::Search(a) => commands::search(a, &cfg),
        Command::Sweep(a) => commands::sweep(a, &cfg),
        Command::Train(a) => commands::train(a, &cfg),
        Command::Predict(a) => commands::predict(a, &cfg),
        Command::Eval(a) => commands::eval(a, &cfg),
        Command::Plot(a) => commands::plot(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
