//! Run settings shared by all subcommands.
//!
//! Values come from built-in defaults, then an optional TOML file, then
//! command-line flags, each layer overriding the previous one.

use std::path::Path;

use anyhow::Context;
use paratuck_lstm::ingest::{Aggregation, BinningConfig, Scenario, SynthConfig};
use paratuck_lstm::lstm::TrainConfig;
use paratuck_lstm::paratuck2::FitConfig;
use paratuck_lstm::pipeline::ForecastConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Every tunable of a run. Unset optional fields fall back to the scenario
/// preset or are derived from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: String,
    pub seed: u64,
    pub p: usize,
    pub q: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub epsilon_guard: f64,
    /// Number of time bins; defaults to the scenario preset.
    pub bins: Option<usize>,
    /// Bins used for training in `run-all`; defaults to the scenario preset,
    /// or half of a custom bin count.
    pub train_bins: Option<usize>,
    /// Forecast horizon; `run-all` defaults to all held-out bins.
    pub epsilon: Option<usize>,
    pub top_fraction: f64,
    /// Binning window for external logs; defaults to the scenario preset.
    pub t_start: Option<i64>,
    pub t_end: Option<i64>,
    pub aggregation: Option<String>,
    pub window: usize,
    pub hidden: usize,
    pub epochs: usize,
    pub lr: f64,
    pub grad_clip: f64,
    pub per_factor: bool,
    /// Field delimiter of event logs.
    pub delimiter: char,
    /// Synthetic log overrides: noise level and planted group counts.
    pub noise: Option<f64>,
    pub sender_groups: Option<usize>,
    pub receiver_groups: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let fit = FitConfig::default();
        let train = TrainConfig::default();
        let forecast = ForecastConfig::default();
        Self {
            scenario: "contracts".into(),
            seed: 0,
            p: fit.p,
            q: fit.q,
            max_iters: fit.max_iters,
            tol: fit.tol,
            epsilon_guard: fit.epsilon_guard,
            bins: None,
            train_bins: None,
            epsilon: None,
            top_fraction: 1.0,
            t_start: None,
            t_end: None,
            aggregation: None,
            window: train.window_length,
            hidden: forecast.hidden_dim,
            epochs: train.epochs,
            lr: train.learning_rate,
            grad_clip: train.grad_clip,
            per_factor: forecast.per_factor,
            delimiter: ',',
            noise: None,
            sender_groups: None,
            receiver_groups: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))
            .map_err(CliError::Runtime)?;
        toml::from_str(&text)
            .map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run settings serialize")
    }

    pub fn scenario(&self) -> Result<Scenario, CliError> {
        self.scenario
            .parse()
            .map_err(|e| CliError::Usage(format!("{e}")))
    }

    pub fn delimiter(&self) -> Result<u8, CliError> {
        u8::try_from(self.delimiter)
            .ok()
            .filter(|d| d.is_ascii())
            .ok_or_else(|| {
                CliError::Usage(format!(
                    "delimiter {:?} is not a single ASCII byte",
                    self.delimiter
                ))
            })
    }

    /// Synthetic generator settings for the chosen scenario.
    pub fn synth(&self) -> Result<SynthConfig, CliError> {
        let mut cfg = SynthConfig::preset(self.scenario()?);
        cfg.binning = self.binning()?;
        cfg.train_bins = match (self.train_bins, self.bins) {
            (Some(t), _) => t,
            // a custom bin count trains on the first half
            (None, Some(k)) => (k / 2).max(1),
            (None, None) => cfg.train_bins,
        };
        if let Some(n) = self.noise {
            cfg.noise = n;
        }
        if let Some(g) = self.sender_groups {
            cfg.sender_groups = g;
        }
        if let Some(g) = self.receiver_groups {
            cfg.receiver_groups = g;
            cfg.links_per_group = g;
        }
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    /// Binning of the scenario preset with any overrides applied.
    pub fn binning(&self) -> Result<BinningConfig, CliError> {
        let mut b = SynthConfig::preset(self.scenario()?).binning;
        if let Some(k) = self.bins {
            b.k_bins = k;
        }
        if let Some(t) = self.t_start {
            b.t_start = t;
        }
        if let Some(t) = self.t_end {
            b.t_end = t;
        }
        if let Some(a) = &self.aggregation {
            b.aggregation = a
                .parse::<Aggregation>()
                .map_err(|e| CliError::Usage(e.to_string()))?;
        }
        b.top_fraction = self.top_fraction;
        b.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(b)
    }

    pub fn fit(&self) -> Result<FitConfig, CliError> {
        let cfg = FitConfig {
            p: self.p,
            q: self.q,
            max_iters: self.max_iters,
            tol: self.tol,
            seed: self.seed,
            epsilon_guard: self.epsilon_guard,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }

    pub fn forecast(&self) -> Result<ForecastConfig, CliError> {
        let cfg = ForecastConfig {
            train: TrainConfig {
                learning_rate: self.lr,
                epochs: self.epochs,
                window_length: self.window,
                grad_clip: self.grad_clip,
                seed: self.seed,
            },
            hidden_dim: self.hidden,
            per_factor: self.per_factor,
        };
        cfg.train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        if cfg.hidden_dim == 0 {
            return Err(CliError::Usage("hidden must be positive".into()));
        }
        Ok(cfg)
    }
}

/// Parses `P,Q`.
pub fn parse_ranks(text: &str) -> Result<(usize, usize), String> {
    let (p, q) = text
        .split_once(',')
        .ok_or_else(|| format!("expected P,Q, got {text:?}"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| format!("rank {v:?} is not a positive integer"))
    };
    Ok((parse(p)?, parse(q)?))
}
