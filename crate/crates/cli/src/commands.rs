//! Subcommand bodies. Data files are deterministic functions of the inputs
//! and settings; wall-clock times go to `report.txt` only.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::Context;
use ndarray::s;
use paratuck_lstm::ingest::{build_tensor, read_events, synth_with, write_events, BuiltTensor};
use paratuck_lstm::io;
use paratuck_lstm::lstm::LstmParams;
use paratuck_lstm::metrics::{score_latents, SeriesScore};
use paratuck_lstm::paratuck2::{fit_nonnegative, FitReport};
use paratuck_lstm::pipeline::{
    align_factors, apply_alignment, extend_model, extract_latent_series, forecast_with_networks,
    reconstruct_predicted_slices, run_protocol, ForecastConfig, ProtocolConfig, Side,
};
use paratuck_lstm::rng::{stream, SeedSplitter};
use paratuck_lstm::tensor::{transpose, Matrix};

use crate::config::RunConfig;
use crate::CliError;

/// Output file names.
pub mod files {
    pub const CONFIG: &str = "config.toml";
    pub const EVENTS: &str = "events.csv";
    pub const TRUTH_MODEL: &str = "truth_model.txt";
    pub const TENSOR: &str = "tensor.txt";
    pub const SOURCES: &str = "sources.csv";
    pub const TARGETS: &str = "targets.csv";
    pub const MODEL: &str = "model.txt";
    pub const RESIDUALS: &str = "residuals.csv";
    pub const TRAIN_MODEL: &str = "train_model.txt";
    pub const TRAIN_RESIDUALS: &str = "train_residuals.csv";
    pub const FULL_MODEL: &str = "full_model.txt";
    pub const FULL_RESIDUALS: &str = "full_residuals.csv";
    pub const EXTENDED_MODEL: &str = "extended_model.txt";
    pub const PREDICTED_SLICES: &str = "predicted_slices.txt";
    pub const SERIES_A: &str = "series_da.csv";
    pub const SERIES_B: &str = "series_db.csv";
    pub const REFERENCE_A: &str = "reference_da.csv";
    pub const REFERENCE_B: &str = "reference_db.csv";
    pub const ALIGNMENT: &str = "alignment.csv";
    pub const SCORES: &str = "scores.csv";
    pub const FACTOR_SCORES: &str = "factor_scores.csv";
    pub const REPORT: &str = "report.txt";

    pub fn lstm(side: &str, index: Option<usize>) -> String {
        match index {
            Some(r) => format!("lstm_{side}_{r}.txt"),
            None => format!("lstm_{side}.txt"),
        }
    }
}

fn prepare(out: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn put(out: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let path = out.join(name);
    std::fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn residuals_csv(report: &FitReport) -> String {
    let mut s = String::from("iteration,residual\n");
    for (n, r) in report.residual_history.iter().enumerate() {
        writeln!(s, "{n},{r}").unwrap();
    }
    s
}

fn fit_summary(name: &str, report: &FitReport) -> String {
    format!(
        "{name}: iterations {} converged {} final residual {} wall time {:.3} s\n",
        report.iterations_run,
        report.converged,
        report.final_residual(),
        report.wall_time.as_secs_f64()
    )
}

fn write_networks(out: &Path, side: Side, nets: &[LstmParams]) -> anyhow::Result<()> {
    let tag = side_tag(side);
    match nets {
        [one] => put(out, &files::lstm(tag, None), &io::lstm_to_string(one)),
        many => many
            .iter()
            .enumerate()
            .try_for_each(|(r, p)| put(out, &files::lstm(tag, Some(r)), &io::lstm_to_string(p))),
    }
}

fn side_tag(side: Side) -> &'static str {
    match side {
        Side::A => "da",
        Side::B => "db",
    }
}

fn load_tensor(cfg: &RunConfig, events: &Path) -> Result<BuiltTensor, CliError> {
    let binning = cfg.binning()?;
    let log = read_events(events, cfg.delimiter()?)?;
    Ok(build_tensor(&log, &binning)?)
}

fn write_built(out: &Path, built: &BuiltTensor) -> anyhow::Result<()> {
    put(out, files::TENSOR, &io::tensor_to_string(&built.tensor))?;
    put(
        out,
        files::SOURCES,
        &io::index_map_to_string(&built.sources),
    )?;
    put(
        out,
        files::TARGETS,
        &io::index_map_to_string(&built.targets),
    )
}

pub fn synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let sc = cfg.synth()?;
    prepare(out)?;
    let data = synth_with(&sc, cfg.seed)?;
    write_events(&out.join(files::EVENTS), &data.events, cfg.delimiter()?)?;
    put(out, files::TRUTH_MODEL, &io::model_to_string(&data.truth))?;
    put(
        out,
        files::SOURCES,
        &io::index_map_to_string(&data.source_ids),
    )?;
    put(
        out,
        files::TARGETS,
        &io::index_map_to_string(&data.target_ids),
    )?;
    println!(
        "wrote {} events ({} scenario, {} bins, seed {})",
        data.events.len(),
        cfg.scenario,
        sc.binning.k_bins,
        cfg.seed
    );
    Ok(())
}

pub fn decompose(cfg: &RunConfig, events: &Path, out: &Path) -> Result<(), CliError> {
    let mut fit_cfg = cfg.fit()?;
    let splitter = SeedSplitter::new(cfg.seed);
    let built = load_tensor(cfg, events)?;
    let k_all = built.tensor.dims().2;
    let x = match cfg.train_bins {
        Some(t) if t == 0 || t > k_all => {
            return Err(CliError::Usage(format!(
                "train_bins must lie in 1..={k_all}"
            )));
        }
        Some(t) => {
            fit_cfg.seed = splitter.derive(stream::FIT_TRAIN);
            built.tensor.prefix(t)?
        }
        None => {
            fit_cfg.seed = splitter.derive(stream::FIT_FULL);
            built.tensor.clone()
        }
    };
    for w in fit_cfg.rank_warnings(x.dims()) {
        eprintln!("warning: {w}");
    }
    prepare(out)?;
    let (model, report) = fit_nonnegative(&x, &fit_cfg)?;
    let model = model.canonicalized();
    put(out, files::CONFIG, &cfg.to_toml())?;
    write_built(out, &built)?;
    put(out, files::MODEL, &io::model_to_string(&model))?;
    put(out, files::RESIDUALS, &residuals_csv(&report))?;
    let k = x.dims().2;
    put(
        out,
        files::SERIES_A,
        &io::series_to_string(&extract_latent_series(&model, Side::A).e, k),
    )?;
    put(
        out,
        files::SERIES_B,
        &io::series_to_string(&extract_latent_series(&model, Side::B).e, k),
    )?;
    put(out, files::REPORT, &fit_summary("fit", &report))?;
    println!("final relative residual {}", report.final_residual());
    Ok(())
}

fn side_forecast_config(
    cfg: &RunConfig,
    splitter: &SeedSplitter,
    side: Side,
) -> Result<ForecastConfig, CliError> {
    let mut f = cfg.forecast()?;
    f.train.seed = splitter.derive(match side {
        Side::A => stream::LSTM_A,
        Side::B => stream::LSTM_B,
    });
    Ok(f)
}

pub fn forecast(cfg: &RunConfig, model_path: &Path, out: &Path) -> Result<(), CliError> {
    let epsilon = cfg
        .epsilon
        .ok_or_else(|| CliError::Usage("forecast needs --epsilon".into()))?;
    let splitter = SeedSplitter::new(cfg.seed);
    let cfg_a = side_forecast_config(cfg, &splitter, Side::A)?;
    let cfg_b = side_forecast_config(cfg, &splitter, Side::B)?;
    let model = io::read_model(model_path)?;
    let k = model.dims().k;
    prepare(out)?;
    let start = Instant::now();
    let fa = forecast_with_networks(&extract_latent_series(&model, Side::A), &cfg_a, epsilon)?;
    let fb = forecast_with_networks(&extract_latent_series(&model, Side::B), &cfg_b, epsilon)?;
    let extended = extend_model(&model, transpose(&fa.series), transpose(&fb.series))?;
    put(out, files::CONFIG, &cfg.to_toml())?;
    put(out, files::SERIES_A, &io::series_to_string(&fa.series, k))?;
    put(out, files::SERIES_B, &io::series_to_string(&fb.series, k))?;
    put(
        out,
        files::EXTENDED_MODEL,
        &io::model_to_string(&extended.to_model()),
    )?;
    write_networks(out, Side::A, &fa.networks)?;
    write_networks(out, Side::B, &fb.networks)?;
    if epsilon > 0 {
        let slices = reconstruct_predicted_slices(&extended)?;
        put(out, files::PREDICTED_SLICES, &io::tensor_to_string(&slices))?;
    }
    put(
        out,
        files::REPORT,
        &format!(
            "forecast: {epsilon} steps, wall time {:.3} s\n",
            start.elapsed().as_secs_f64()
        ),
    )?;
    println!("extended {k} steps to {}", k + epsilon);
    Ok(())
}

/// Scores the forecast columns of `pred` against the same columns of `truth`.
pub fn score_pair(
    pred: &Path,
    truth: &Path,
    align: bool,
) -> Result<(Vec<SeriesScore>, SeriesScore), CliError> {
    let (p, history) = io::read_series(pred)?;
    let (t, _) = io::read_series(truth)?;
    let t = if align {
        if t.nrows() != p.nrows() || t.ncols() < p.ncols() {
            return Err(paratuck_lstm::Error::ShapeMismatch(format!(
                "reference {:?} cannot cover forecast {:?}",
                t.dim(),
                p.dim()
            ))
            .into());
        }
        let (perm, scales) = align_factors(&p.slice(s![.., ..history]).to_owned(), &t, history)?;
        apply_alignment(&t.slice(s![.., ..p.ncols()]).to_owned(), &perm, &scales)
    } else {
        t
    };
    if t.dim() != p.dim() {
        return Err(paratuck_lstm::Error::ShapeMismatch(format!(
            "forecast {:?} vs reference {:?}",
            p.dim(),
            t.dim()
        ))
        .into());
    }
    let tail = |m: &Matrix| m.slice(s![.., history..]).to_owned();
    Ok(score_latents(&tail(&t), &tail(&p))?)
}

fn scores_table(a: &SeriesScore, b: &SeriesScore) -> String {
    format!(
        "{:<6}{:>12}{:>12}\n{:<6}{:>12.4}{:>12.4}\n{:<6}{:>12.4}{:>12.4}\n",
        "test", "D^A", "D^B", "MAE", a.mae, b.mae, "MDA", a.mda, b.mda
    )
}

pub fn evaluate(pairs: [(&Path, &Path); 2], align: bool, out: &Path) -> Result<(), CliError> {
    let (per_a, avg_a) = score_pair(pairs[0].0, pairs[0].1, align)?;
    let (per_b, avg_b) = score_pair(pairs[1].0, pairs[1].1, align)?;
    prepare(out)?;
    put(out, files::SCORES, &io::scores_to_string(&avg_a, &avg_b))?;
    put(
        out,
        files::FACTOR_SCORES,
        &io::factor_scores_to_string(&per_a, &per_b),
    )?;
    print!("{}", scores_table(&avg_a, &avg_b));
    Ok(())
}

fn alignment_csv(sides: [(&str, &[usize], &[f64]); 2]) -> String {
    let mut s = String::from("side,factor,reference_factor,scale\n");
    for (tag, perm, scales) in sides {
        for (l, (p, c)) in perm.iter().zip(scales).enumerate() {
            writeln!(s, "{tag},{l},{p},{c}").unwrap();
        }
    }
    s
}

pub fn run_all(cfg: &RunConfig, events: Option<&Path>, out: &Path) -> Result<(), CliError> {
    let start = Instant::now();
    let fit = cfg.fit()?;
    let forecast = cfg.forecast()?;
    let binning = cfg.binning()?;
    prepare(out)?;
    let (built, preset_train) = match events {
        Some(path) => (load_tensor(cfg, path)?, None),
        None => {
            let sc = cfg.synth()?;
            let data = synth_with(&sc, cfg.seed)?;
            write_events(&out.join(files::EVENTS), &data.events, cfg.delimiter()?)?;
            let built = build_tensor(&data.events, &binning)?;
            put(
                out,
                files::TRUTH_MODEL,
                &io::model_to_string(&data.truth_for(&built)?),
            )?;
            (built, Some(sc.train_bins))
        }
    };
    let k_all = built.tensor.dims().2;
    let train_bins = cfg.train_bins.or(preset_train).unwrap_or(k_all / 2);
    if train_bins == 0 || train_bins >= k_all {
        return Err(CliError::Usage(format!(
            "train_bins must lie in 1..{k_all}"
        )));
    }
    let epsilon = cfg.epsilon.unwrap_or(k_all - train_bins);
    let protocol = ProtocolConfig {
        fit,
        forecast,
        train_bins,
        epsilon,
        seed: cfg.seed,
    };
    let r = run_protocol(&built.tensor, &protocol).map_err(|e| match e {
        paratuck_lstm::Error::InvalidConfig(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;

    let mut effective = cfg.clone();
    effective.train_bins = Some(train_bins);
    effective.epsilon = Some(epsilon);
    put(out, files::CONFIG, &effective.to_toml())?;
    write_built(out, &built)?;
    put(
        out,
        files::TRAIN_MODEL,
        &io::model_to_string(&r.train_model),
    )?;
    put(out, files::TRAIN_RESIDUALS, &residuals_csv(&r.train_report))?;
    put(out, files::FULL_MODEL, &io::model_to_string(&r.full_model))?;
    put(out, files::FULL_RESIDUALS, &residuals_csv(&r.full_report))?;
    put(
        out,
        files::EXTENDED_MODEL,
        &io::model_to_string(&r.extended.to_model()),
    )?;
    put(
        out,
        files::PREDICTED_SLICES,
        &io::tensor_to_string(&r.predicted_slices),
    )?;
    put(
        out,
        files::SERIES_A,
        &io::series_to_string(&r.a.forecast, train_bins),
    )?;
    put(
        out,
        files::SERIES_B,
        &io::series_to_string(&r.b.forecast, train_bins),
    )?;
    put(
        out,
        files::REFERENCE_A,
        &io::series_to_string(&r.a.reference, train_bins),
    )?;
    put(
        out,
        files::REFERENCE_B,
        &io::series_to_string(&r.b.reference, train_bins),
    )?;
    put(
        out,
        files::ALIGNMENT,
        &alignment_csv([
            ("D^A", &r.a.perm, &r.a.scales),
            ("D^B", &r.b.perm, &r.b.scales),
        ]),
    )?;
    write_networks(out, Side::A, &r.a.networks)?;
    write_networks(out, Side::B, &r.b.networks)?;
    put(
        out,
        files::SCORES,
        &io::scores_to_string(&r.a.average, &r.b.average),
    )?;
    put(
        out,
        files::FACTOR_SCORES,
        &io::factor_scores_to_string(&r.a.per_factor, &r.b.per_factor),
    )?;
    let mut report = String::new();
    report.push_str(&fit_summary("train fit", &r.train_report));
    report.push_str(&fit_summary("full fit", &r.full_report));
    writeln!(report, "predicted slice relative error {}", r.slice_error).unwrap();
    writeln!(
        report,
        "total wall time {:.3} s",
        start.elapsed().as_secs_f64()
    )
    .unwrap();
    put(out, files::REPORT, &report)?;

    println!(
        "train fit residual {:.4}, full fit residual {:.4}, predicted slice error {:.4}",
        r.train_report.final_residual(),
        r.full_report.final_residual(),
        r.slice_error
    );
    print!("{}", scores_table(&r.a.average, &r.b.average));
    Ok(())
}
