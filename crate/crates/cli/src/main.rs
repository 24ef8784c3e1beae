//! `ptlstm`: synthesize interaction logs, decompose them with PARATUCK2,
//! forecast the latent time profiles with LSTMs and score the forecasts.
//!
//! Exit codes: 0 on success, 1 on runtime or data errors, 2 on usage errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{parse_ranks, RunConfig};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Runtime(e)
    }
}

impl From<paratuck_lstm::Error> for CliError {
    fn from(e: paratuck_lstm::Error) -> Self {
        CliError::Runtime(e.into())
    }
}

#[derive(Parser)]
#[command(
    name = "ptlstm",
    version,
    about = "PARATUCK2 + LSTM temporal interaction forecasting"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic event log with planted structure.
    Synth {
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        bins: BinArgs,
    },
    /// Bin an event log into a tensor and fit a non-negative PARATUCK2 model.
    Decompose {
        /// Event log with source, target, timestamp and value columns.
        #[arg(long)]
        events: PathBuf,
        /// Fit only the first N bins.
        #[arg(long)]
        train_bins: Option<usize>,
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        bins: BinArgs,
        #[command(flatten)]
        fit: FitArgs,
    },
    /// Extend a fitted model's latent profiles with LSTM forecasts.
    Forecast {
        /// Model written by `decompose`.
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Score forecast series against reference series.
    Evaluate {
        /// Forecast series of the D^A side.
        #[arg(long)]
        pred_a: PathBuf,
        /// Reference series of the D^A side.
        #[arg(long)]
        truth_a: PathBuf,
        /// Forecast series of the D^B side.
        #[arg(long)]
        pred_b: PathBuf,
        /// Reference series of the D^B side.
        #[arg(long)]
        truth_b: PathBuf,
        /// Match and rescale reference factors onto the forecast history
        /// before scoring.
        #[arg(long)]
        align: bool,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize (or read) a log, fit the training period and the full
    /// period, forecast, align and score.
    RunAll {
        /// Use this event log instead of a synthetic one.
        #[arg(long)]
        events: Option<PathBuf>,
        /// Bins used for training.
        #[arg(long)]
        train_bins: Option<usize>,
        #[command(flatten)]
        base: BaseArgs,
        #[command(flatten)]
        bins: BinArgs,
        #[command(flatten)]
        fit: FitArgs,
        #[command(flatten)]
        train: TrainArgs,
    },
}

#[derive(Args)]
struct BaseArgs {
    /// TOML file with run settings; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BinArgs {
    /// Scenario preset supplying sizes and the binning window.
    #[arg(long, value_parser = ["vod", "contracts"])]
    scenario: Option<String>,
    /// Number of time bins.
    #[arg(long)]
    bins: Option<usize>,
    /// Fraction of most active entities to keep.
    #[arg(long)]
    top_fraction: Option<f64>,
    /// Start of the binning window, seconds since the epoch.
    #[arg(long)]
    t_start: Option<i64>,
    /// End of the binning window (exclusive).
    #[arg(long)]
    t_end: Option<i64>,
    /// `count` or `sum`.
    #[arg(long, value_parser = ["count", "sum"])]
    aggregation: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    /// Latent ranks as P,Q.
    #[arg(long, value_parser = parse_ranks)]
    ranks: Option<(usize, usize)>,
    /// Relative residual change that stops the fit.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap of the fit.
    #[arg(long)]
    max_iters: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Forecast horizon in bins.
    #[arg(long)]
    epsilon: Option<usize>,
    /// LSTM input window length.
    #[arg(long)]
    window: Option<usize>,
    /// LSTM hidden size.
    #[arg(long)]
    hidden: Option<usize>,
    /// LSTM training epochs.
    #[arg(long)]
    epochs: Option<usize>,
    /// LSTM learning rate.
    #[arg(long)]
    lr: Option<f64>,
    /// Train one network per latent factor.
    #[arg(long)]
    per_factor: bool,
}

fn base_config(base: &BaseArgs) -> Result<RunConfig, CliError> {
    let mut cfg = match &base.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = base.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

impl BinArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(s) = &self.scenario {
            cfg.scenario = s.clone();
        }
        if self.bins.is_some() {
            cfg.bins = self.bins;
        }
        if let Some(f) = self.top_fraction {
            cfg.top_fraction = f;
        }
        if self.t_start.is_some() {
            cfg.t_start = self.t_start;
        }
        if self.t_end.is_some() {
            cfg.t_end = self.t_end;
        }
        if self.aggregation.is_some() {
            cfg.aggregation = self.aggregation.clone();
        }
    }
}

impl FitArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some((p, q)) = self.ranks {
            cfg.p = p;
            cfg.q = q;
        }
        if let Some(t) = self.tol {
            cfg.tol = t;
        }
        if let Some(m) = self.max_iters {
            cfg.max_iters = m;
        }
    }
}

impl TrainArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        if self.epsilon.is_some() {
            cfg.epsilon = self.epsilon;
        }
        if let Some(w) = self.window {
            cfg.window = w;
        }
        if let Some(h) = self.hidden {
            cfg.hidden = h;
        }
        if let Some(e) = self.epochs {
            cfg.epochs = e;
        }
        if let Some(lr) = self.lr {
            cfg.lr = lr;
        }
        if self.per_factor {
            cfg.per_factor = true;
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth { base, bins } => {
            let mut cfg = base_config(&base)?;
            bins.apply(&mut cfg);
            commands::synth(&cfg, &base.out)
        }
        Command::Decompose {
            events,
            train_bins,
            base,
            bins,
            fit,
        } => {
            let mut cfg = base_config(&base)?;
            bins.apply(&mut cfg);
            fit.apply(&mut cfg);
            if train_bins.is_some() {
                cfg.train_bins = train_bins;
            }
            commands::decompose(&cfg, &events, &base.out)
        }
        Command::Forecast { model, base, train } => {
            let mut cfg = base_config(&base)?;
            train.apply(&mut cfg);
            commands::forecast(&cfg, &model, &base.out)
        }
        Command::Evaluate {
            pred_a,
            truth_a,
            pred_b,
            truth_b,
            align,
            out,
        } => commands::evaluate([(&pred_a, &truth_a), (&pred_b, &truth_b)], align, &out),
        Command::RunAll {
            events,
            train_bins,
            base,
            bins,
            fit,
            train,
        } => {
            let mut cfg = base_config(&base)?;
            bins.apply(&mut cfg);
            fit.apply(&mut cfg);
            train.apply(&mut cfg);
            if train_bins.is_some() {
                cfg.train_bins = train_bins;
            }
            commands::run_all(&cfg, events.as_deref(), &base.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
