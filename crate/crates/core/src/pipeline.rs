//! From a fitted decomposition to forecast interactions: the latent time
//! profiles (the diagonals of `D^A` and `D^B`) are forecast with an LSTM,
//! appended to the history, and combined with the static factors `A`, `H`,
//! `B` to reconstruct future slices.

use ndarray::s;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lstm::{
    predict_free_running, train_new, windows_from_series, LstmParams, TrainConfig, Vector,
};
use crate::metrics::{score_latents, SeriesScore};
use crate::paratuck2::{core_of, fit_nonnegative, row_of, FitConfig, FitReport, Paratuck2Model};
use crate::rng::{stream, SeedSplitter};
use crate::tensor::{frobenius_norm, transpose, Matrix, Tensor3};

/// Which diagonal tensor a latent series comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Side {
    /// Sender side, `D^A` (P factors).
    A,
    /// Receiver side, `D^B` (Q factors).
    B,
}

impl Side {
    pub fn label(&self) -> &'static str {
        match self {
            Side::A => "D^A",
            Side::B => "D^B",
        }
    }
}

/// `e[l, k]` is latent factor `l` at time step `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentSeries {
    pub e: Matrix,
    pub side: Side,
}

/// Column `k` of the result is the diagonal of `D^m_k`.
pub fn extract_latent_series(m: &Paratuck2Model, side: Side) -> LatentSeries {
    let d = match side {
        Side::A => &m.da,
        Side::B => &m.db,
    };
    LatentSeries {
        e: transpose(d),
        side,
    }
}

/// Inverse of [`extract_latent_series`]: the `K x L` diagonal storage.
pub fn rebuild_diagonals(series: &LatentSeries) -> Matrix {
    transpose(&series.e)
}

/// LSTM settings for forecasting one side.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastConfig {
    pub train: TrainConfig,
    pub hidden_dim: usize,
    /// Train one network per latent factor instead of one for all factors.
    pub per_factor: bool,
}

impl Default for ForecastConfig {
    fn default() -> Self {
        Self {
            train: TrainConfig::default(),
            hidden_dim: 16,
            per_factor: false,
        }
    }
}

/// Min-max scaling of one series onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: &[f64]) -> Self {
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Self { min, max }
    }

    /// Constant series map to `0.5`.
    pub fn scale(&self, v: f64) -> f64 {
        if self.max > self.min {
            (v - self.min) / (self.max - self.min)
        } else {
            0.5
        }
    }

    pub fn unscale(&self, v: f64) -> f64 {
        if self.max > self.min {
            v * (self.max - self.min) + self.min
        } else {
            self.min
        }
    }
}

/// Forecasts a group of rows of `scaled` (already on `[0, 1]`) jointly.
fn forecast_scaled(
    scaled: &Matrix,
    cfg: &ForecastConfig,
    seed: u64,
    epsilon: usize,
) -> Result<(Matrix, LstmParams)> {
    let (l, k) = scaled.dim();
    let points: Vec<Vector> = (0..k).map(|t| scaled.column(t).to_owned()).collect();
    let data = windows_from_series(&points, cfg.train.window_length);
    let train_cfg = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let (params, _) = train_new(l, cfg.hidden_dim, l, &data, &train_cfg)?;
    let seed_window = &points[k - cfg.train.window_length..];
    let predicted = predict_free_running(&params, seed_window, epsilon)?;
    let mut out = Matrix::zeros((l, epsilon));
    for (t, v) in predicted.iter().enumerate() {
        out.column_mut(t).assign(v);
    }
    Ok((out, params))
}

/// Extended latents together with the networks that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    /// History followed by the forecast, `L x (K + epsilon)`.
    pub series: Matrix,
    /// One joint network, or one per factor with `per_factor`; empty when
    /// `epsilon` is zero.
    pub networks: Vec<LstmParams>,
    /// Per-factor scaling used for training.
    pub scalers: Vec<MinMax>,
}

/// History followed by `epsilon` forecast steps per latent factor.
///
/// Each factor is min-max scaled over its history before training, and the
/// forecast is mapped back and clamped at zero. The first `K` columns of the
/// result are the input verbatim.
pub fn forecast_latents(
    series: &LatentSeries,
    cfg: &ForecastConfig,
    epsilon: usize,
) -> Result<Matrix> {
    Ok(forecast_with_networks(series, cfg, epsilon)?.series)
}

/// As [`forecast_latents`], also returning the trained networks.
pub fn forecast_with_networks(
    series: &LatentSeries,
    cfg: &ForecastConfig,
    epsilon: usize,
) -> Result<Forecast> {
    let (l, k) = series.e.dim();
    let mut out = Matrix::zeros((l, k + epsilon));
    out.slice_mut(s![.., ..k]).assign(&series.e);
    if epsilon == 0 {
        return Ok(Forecast {
            series: out,
            networks: Vec::new(),
            scalers: Vec::new(),
        });
    }
    cfg.train.validate()?;
    if k <= cfg.train.window_length {
        return Err(Error::SeriesTooShort {
            len: k,
            required: cfg.train.window_length,
        });
    }
    if cfg.hidden_dim == 0 {
        return Err(Error::InvalidConfig("hidden_dim must be positive".into()));
    }
    let scalers: Vec<MinMax> = series
        .e
        .outer_iter()
        .map(|row| MinMax::fit(&row.to_vec()))
        .collect();
    let scaled = Matrix::from_shape_fn((l, k), |(r, t)| scalers[r].scale(series.e[[r, t]]));

    let (predicted, networks) = if cfg.per_factor {
        let splitter = SeedSplitter::new(cfg.train.seed);
        let rows: Vec<(Matrix, LstmParams)> = (0..l)
            .into_par_iter()
            .map(|r| {
                let one = scaled.slice(s![r..r + 1, ..]).to_owned();
                forecast_scaled(&one, cfg, splitter.derive(r as u64), epsilon)
            })
            .collect::<Result<_>>()?;
        let mut m = Matrix::zeros((l, epsilon));
        for (r, (row, _)) in rows.iter().enumerate() {
            m.row_mut(r).assign(&row.row(0));
        }
        (m, rows.into_iter().map(|(_, p)| p).collect())
    } else {
        let (m, p) = forecast_scaled(&scaled, cfg, cfg.train.seed, epsilon)?;
        (m, vec![p])
    };
    for r in 0..l {
        for t in 0..epsilon {
            out[[r, k + t]] = scalers[r].unscale(predicted[[r, t]]).max(0.0);
        }
    }
    Ok(Forecast {
        series: out,
        networks,
        scalers,
    })
}

/// A fitted model whose latent diagonals continue past the fitted period.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedModel {
    pub base: Paratuck2Model,
    pub epsilon: usize,
    /// `(K + epsilon) x P`; the first `K` rows equal `base.da`.
    pub da_ext: Matrix,
    /// `(K + epsilon) x Q`; the first `K` rows equal `base.db`.
    pub db_ext: Matrix,
}

fn check_history(name: &str, base: &Matrix, ext: &Matrix) -> Result<()> {
    if ext.ncols() != base.ncols() || ext.nrows() < base.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "{name} extension is {:?}, base is {:?}",
            ext.dim(),
            base.dim()
        )));
    }
    for (k, (b, e)) in base.outer_iter().zip(ext.outer_iter()).enumerate() {
        // bitwise comparison so that -0.0 and 0.0 or NaN payloads do not slip through
        if b.iter()
            .zip(e.iter())
            .any(|(x, y)| x.to_bits() != y.to_bits())
        {
            return Err(Error::HistoryMismatch { step: k });
        }
    }
    Ok(())
}

/// Packages extended diagonals (in `K x L` storage) with the base model.
pub fn extend_model(m: &Paratuck2Model, da_ext: Matrix, db_ext: Matrix) -> Result<ExtendedModel> {
    check_history("D^A", &m.da, &da_ext)?;
    check_history("D^B", &m.db, &db_ext)?;
    if da_ext.nrows() != db_ext.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "D^A extension has {} steps, D^B extension has {}",
            da_ext.nrows(),
            db_ext.nrows()
        )));
    }
    Ok(ExtendedModel {
        base: m.clone(),
        epsilon: da_ext.nrows() - m.da.nrows(),
        da_ext,
        db_ext,
    })
}

impl ExtendedModel {
    pub fn total_steps(&self) -> usize {
        self.da_ext.nrows()
    }

    /// A plain model over all `K + epsilon` steps.
    pub fn to_model(&self) -> Paratuck2Model {
        Paratuck2Model::new(
            self.base.a.clone(),
            self.base.h.clone(),
            self.base.b.clone(),
            self.da_ext.clone(),
            self.db_ext.clone(),
        )
        .expect("shapes checked by extend_model")
    }

    /// Slice `k` over the whole extended range.
    pub fn reconstruct_slice(&self, k: usize) -> Result<Matrix> {
        if k >= self.total_steps() {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: self.total_steps(),
            });
        }
        let core = core_of(
            &self.base.h,
            &row_of(&self.da_ext, k),
            &row_of(&self.db_ext, k),
        );
        Ok(self.base.a.dot(&core).dot(&self.base.b.t()))
    }
}

/// The `epsilon` forecast slices `K .. K + epsilon`.
pub fn reconstruct_predicted_slices(em: &ExtendedModel) -> Result<Tensor3> {
    if em.epsilon == 0 {
        return Err(Error::NoForecast);
    }
    let k0 = em.base.da.nrows();
    let slices: Vec<Matrix> = (k0..k0 + em.epsilon)
        .map(|k| em.reconstruct_slice(k))
        .collect::<Result<_>>()?;
    Tensor3::from_slices(&slices)
}

/// Pearson correlation, or 0 when either series is constant.
fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx > 0.0 && syy > 0.0 {
        sxy / (sxx * syy).sqrt()
    } else {
        0.0
    }
}

/// Matches every row of `reference` to a distinct row of `candidate` by
/// greedily taking the most correlated remaining pair over the first
/// `overlap` columns. Ties go to the lowest indices. Returns `perm` with
/// `candidate[perm[r]]` matched to `reference[r]`, and the least-squares
/// scale `s[r]` that maps the candidate row onto the reference row over the
/// overlap.
pub fn align_factors(
    reference: &Matrix,
    candidate: &Matrix,
    overlap: usize,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let l = reference.nrows();
    if candidate.nrows() != l {
        return Err(Error::ShapeMismatch(format!(
            "cannot match {} factors against {}",
            l,
            candidate.nrows()
        )));
    }
    if overlap == 0 || overlap > reference.ncols() || overlap > candidate.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "overlap {overlap} exceeds the series lengths {} and {}",
            reference.ncols(),
            candidate.ncols()
        )));
    }
    let rows = |m: &Matrix| -> Vec<Vec<f64>> {
        m.outer_iter()
            .map(|r| r.slice(s![..overlap]).to_vec())
            .collect()
    };
    let (refs, cands) = (rows(reference), rows(candidate));
    let mut pairs: Vec<(f64, usize, usize)> = Vec::with_capacity(l * l);
    for (r, x) in refs.iter().enumerate() {
        for (c, y) in cands.iter().enumerate() {
            pairs.push((correlation(x, y), r, c));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut perm = vec![usize::MAX; l];
    let mut taken = vec![false; l];
    for (_, r, c) in pairs {
        if perm[r] == usize::MAX && !taken[c] {
            perm[r] = c;
            taken[c] = true;
        }
    }
    let scales = perm
        .iter()
        .enumerate()
        .map(|(r, &c)| {
            let num: f64 = refs[r].iter().zip(&cands[c]).map(|(a, b)| a * b).sum();
            let den: f64 = cands[c].iter().map(|b| b * b).sum();
            if den > 0.0 {
                num / den
            } else {
                0.0
            }
        })
        .collect();
    Ok((perm, scales))
}

/// Rows of `candidate` reordered by `perm` and multiplied by `scales`.
pub fn apply_alignment(candidate: &Matrix, perm: &[usize], scales: &[f64]) -> Matrix {
    let mut out = Matrix::zeros((perm.len(), candidate.ncols()));
    for (r, (&c, &s)) in perm.iter().zip(scales).enumerate() {
        out.row_mut(r).assign(&(&candidate.row(c) * s));
    }
    out
}

/// Settings of the train/validate protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub fit: FitConfig,
    pub forecast: ForecastConfig,
    /// Time bins used for training; the rest is held out.
    pub train_bins: usize,
    /// Forecast horizon; at most the number of held-out bins.
    pub epsilon: usize,
    /// Master seed, fanned out to the two fits and the two networks.
    pub seed: u64,
}

/// Forecast, reference and scores for one side.
#[derive(Debug, Clone, PartialEq)]
pub struct SideResult {
    pub side: Side,
    /// History and forecast from the training fit, `L x (K + epsilon)`.
    pub forecast: Matrix,
    /// Full-period latents matched and scaled onto the training fit.
    pub reference: Matrix,
    /// `perm[l]` is the full-fit factor matched to training factor `l`.
    pub perm: Vec<usize>,
    pub scales: Vec<f64>,
    pub per_factor: Vec<SeriesScore>,
    pub average: SeriesScore,
    pub networks: Vec<LstmParams>,
}

#[derive(Debug, Clone)]
pub struct ProtocolResult {
    pub train_model: Paratuck2Model,
    pub train_report: FitReport,
    pub full_model: Paratuck2Model,
    pub full_report: FitReport,
    pub extended: ExtendedModel,
    pub predicted_slices: Tensor3,
    /// `||predicted - held out|| / ||held out||` over the forecast slices.
    pub slice_error: f64,
    pub a: SideResult,
    pub b: SideResult,
}

fn side_result(
    side: Side,
    train_model: &Paratuck2Model,
    full_model: &Paratuck2Model,
    cfg: &ForecastConfig,
    epsilon: usize,
) -> Result<SideResult> {
    let history = extract_latent_series(train_model, side);
    let k = history.e.ncols();
    let Forecast {
        series: forecast,
        networks,
        ..
    } = forecast_with_networks(&history, cfg, epsilon)?;
    let full = extract_latent_series(full_model, side).e;
    let (perm, scales) = align_factors(&history.e, &full, k)?;
    let reference = apply_alignment(
        &full.slice(s![.., ..k + epsilon]).to_owned(),
        &perm,
        &scales,
    );
    let (per_factor, average) = score_latents(
        &reference.slice(s![.., k..]).to_owned(),
        &forecast.slice(s![.., k..]).to_owned(),
    )?;
    Ok(SideResult {
        side,
        forecast,
        reference,
        perm,
        scales,
        per_factor,
        average,
        networks,
    })
}

/// Fits the first `train_bins` slices and the whole tensor separately,
/// forecasts the training fit's latents `epsilon` steps ahead, and scores
/// them against the aligned latents of the full fit.
pub fn run_protocol(full: &Tensor3, cfg: &ProtocolConfig) -> Result<ProtocolResult> {
    let k_full = full.dims().2;
    if cfg.train_bins == 0 || cfg.train_bins >= k_full {
        return Err(Error::InvalidConfig(format!(
            "train_bins must lie in 1..{k_full}, got {}",
            cfg.train_bins
        )));
    }
    if cfg.epsilon == 0 || cfg.train_bins + cfg.epsilon > k_full {
        return Err(Error::InvalidConfig(format!(
            "epsilon must lie in 1..={}, got {}",
            k_full - cfg.train_bins,
            cfg.epsilon
        )));
    }
    let splitter = SeedSplitter::new(cfg.seed);
    let train_x = full.prefix(cfg.train_bins)?;
    let fit_train = FitConfig {
        seed: splitter.derive(stream::FIT_TRAIN),
        ..cfg.fit.clone()
    };
    let fit_full = FitConfig {
        seed: splitter.derive(stream::FIT_FULL),
        ..cfg.fit.clone()
    };
    let ((train_model, train_report), (full_model, full_report)) = {
        let (a, b) = rayon::join(
            || fit_nonnegative(&train_x, &fit_train),
            || fit_nonnegative(full, &fit_full),
        );
        let (tm, tr) = a?;
        let (fm, fr) = b?;
        ((tm.canonicalized(), tr), (fm.canonicalized(), fr))
    };

    let side_cfg = |stream_id: u64| ForecastConfig {
        train: TrainConfig {
            seed: splitter.derive(stream_id),
            ..cfg.forecast.train.clone()
        },
        ..cfg.forecast.clone()
    };
    let (cfg_a, cfg_b) = (side_cfg(stream::LSTM_A), side_cfg(stream::LSTM_B));
    let (ra, rb) = rayon::join(
        || side_result(Side::A, &train_model, &full_model, &cfg_a, cfg.epsilon),
        || side_result(Side::B, &train_model, &full_model, &cfg_b, cfg.epsilon),
    );
    let (a, b) = (ra?, rb?);

    let extended = extend_model(&train_model, transpose(&a.forecast), transpose(&b.forecast))?;
    let predicted_slices = reconstruct_predicted_slices(&extended)?;
    let mut diff = 0.0;
    let mut norm = 0.0;
    for t in 0..cfg.epsilon {
        let truth = full.slice(cfg.train_bins + t);
        for (p, x) in predicted_slices.slice(t).iter().zip(truth.iter()) {
            diff += (p - x) * (p - x);
            norm += x * x;
        }
    }
    let slice_error = if norm > 0.0 {
        (diff / norm).sqrt()
    } else {
        frobenius_norm(&predicted_slices)
    };
    Ok(ProtocolResult {
        train_model,
        train_report,
        full_model,
        full_report,
        extended,
        predicted_slices,
        slice_error,
        a,
        b,
    })
}
