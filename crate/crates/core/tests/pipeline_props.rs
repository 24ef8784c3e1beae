//! Latent-series extraction, model extension and forecasting.

use ndarray::{s, Array2};
use paratuck_lstm::lstm::TrainConfig;
use paratuck_lstm::metrics::score_latents;
use paratuck_lstm::paratuck2::{init_model, FitConfig, Paratuck2Model};
use paratuck_lstm::pipeline::{
    extend_model, extract_latent_series, forecast_latents, forecast_with_networks,
    rebuild_diagonals, reconstruct_predicted_slices, ForecastConfig, LatentSeries, Side,
};
use paratuck_lstm::tensor::{transpose, Matrix};
use paratuck_lstm::Error;
use proptest::prelude::*;

fn model(dims: (usize, usize, usize), p: usize, q: usize, seed: u64) -> Paratuck2Model {
    init_model(
        dims,
        &FitConfig {
            p,
            q,
            seed,
            ..FitConfig::default()
        },
    )
    .unwrap()
}

fn extension(d: &Matrix, eps: usize, fill: f64) -> Matrix {
    let mut e = Matrix::from_elem((d.nrows() + eps, d.ncols()), fill);
    e.slice_mut(s![..d.nrows(), ..]).assign(d);
    e
}

fn bits(m: &Matrix) -> Vec<u64> {
    m.iter().map(|v| v.to_bits()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extract_rebuild_roundtrip(i in 1usize..6, j in 1usize..6, k in 1usize..9, p in 1usize..5, q in 1usize..5,
                                 seed in any::<u64>()) {
        let m = model((i, j, k), p, q, seed);
        let a = extract_latent_series(&m, Side::A);
        let b = extract_latent_series(&m, Side::B);
        prop_assert_eq!(a.e.dim(), (p, k));
        prop_assert_eq!(b.e.dim(), (q, k));
        prop_assert_eq!(bits(&rebuild_diagonals(&a)), bits(&m.da));
        prop_assert_eq!(bits(&rebuild_diagonals(&b)), bits(&m.db));
    }

    #[test]
    fn extended_history_is_bit_equal(i in 1usize..6, j in 1usize..6, k in 1usize..9, p in 1usize..4, q in 1usize..4,
                                     eps in 0usize..5, fill in 0.0f64..3.0, seed in any::<u64>()) {
        let m = model((i, j, k), p, q, seed);
        let em = extend_model(&m, extension(&m.da, eps, fill), extension(&m.db, eps, fill)).unwrap();
        prop_assert_eq!(em.total_steps(), k + eps);
        for kk in 0..k {
            prop_assert_eq!(bits(&em.reconstruct_slice(kk).unwrap()), bits(&m.reconstruct_slice(kk).unwrap()));
        }
    }
}

#[test]
fn zero_horizon_changes_nothing() {
    let m = model((3, 4, 10), 2, 3, 1);
    let series = extract_latent_series(&m, Side::A);
    let out = forecast_latents(&series, &ForecastConfig::default(), 0).unwrap();
    assert_eq!(out, series.e);
    let em = extend_model(&m, m.da.clone(), m.db.clone()).unwrap();
    assert_eq!(em.epsilon, 0);
    assert!(matches!(
        reconstruct_predicted_slices(&em),
        Err(Error::NoForecast)
    ));
    assert_eq!(em.to_model(), m);
}

#[test]
fn history_mismatch_is_reported() {
    let m = model((3, 4, 6), 2, 2, 2);
    let mut da = extension(&m.da, 2, 1.0);
    da[[3, 1]] += 1e-15;
    let db = extension(&m.db, 2, 1.0);
    assert!(matches!(
        extend_model(&m, da, db.clone()),
        Err(Error::HistoryMismatch { step: 3 })
    ));
    let short = extension(&m.da, 1, 1.0);
    assert!(matches!(
        extend_model(&m, short, db),
        Err(Error::DimensionMismatch(_))
    ));
}

#[test]
fn predicted_slices_follow_the_extension() {
    let m = model((3, 4, 5), 2, 3, 3);
    let em = extend_model(&m, extension(&m.da, 2, 0.5), extension(&m.db, 2, 2.0)).unwrap();
    let x = reconstruct_predicted_slices(&em).unwrap();
    assert_eq!(x.dims(), (3, 4, 2));
    // with constant diagonals every predicted slice is A H B^T scaled by 0.5 * 2.0
    let want = m.a.dot(&m.h).dot(&transpose(&m.b));
    for k in 0..2 {
        for (got, w) in x.slice(k).iter().zip(want.iter()) {
            assert!((got - w).abs() <= 1e-12 * w.abs().max(1.0));
        }
    }
}

#[test]
fn constant_series_forecast_stays_constant() {
    let e = Array2::from_shape_fn((3, 12), |(r, _)| [0.0, 2.5, 7.0][r]);
    let series = LatentSeries { e, side: Side::B };
    let cfg = ForecastConfig {
        train: TrainConfig {
            epochs: 20,
            window_length: 4,
            ..TrainConfig::default()
        },
        hidden_dim: 4,
        per_factor: false,
    };
    let out = forecast_latents(&series, &cfg, 5).unwrap();
    for r in 0..3 {
        assert!(out.row(r).iter().all(|v| *v == series.e[[r, 0]]));
    }
}

#[test]
fn forecasts_are_nonnegative_and_deterministic() {
    let e = Array2::from_shape_fn((2, 15), |(r, t)| {
        if r == 0 {
            t as f64 * 0.1
        } else {
            (15 - t) as f64
        }
    });
    let series = LatentSeries { e, side: Side::A };
    let cfg = ForecastConfig {
        train: TrainConfig {
            epochs: 50,
            window_length: 5,
            seed: 3,
            ..TrainConfig::default()
        },
        hidden_dim: 6,
        per_factor: true,
    };
    let a = forecast_with_networks(&series, &cfg, 20).unwrap();
    let b = forecast_with_networks(&series, &cfg, 20).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.networks.len(), 2);
    assert_eq!(a.series.slice(s![.., ..15]), series.e);
    assert!(a.series.iter().all(|v| *v >= 0.0));
}

#[test]
fn short_series_are_rejected() {
    let series = LatentSeries {
        e: Matrix::ones((2, 8)),
        side: Side::A,
    };
    assert!(matches!(
        forecast_latents(&series, &ForecastConfig::default(), 3),
        Err(Error::SeriesTooShort {
            len: 8,
            required: 8
        })
    ));
}

#[test]
fn periodic_latents_forecast_direction() {
    let periods = [6.0, 8.0, 10.0];
    let full = Array2::from_shape_fn((3, 40), |(r, t)| {
        1.5 + (2.0 * std::f64::consts::PI * t as f64 / periods[r] + r as f64).sin()
    });
    let series = LatentSeries {
        e: full.slice(s![.., ..30]).to_owned(),
        side: Side::A,
    };
    let cfg = ForecastConfig {
        train: TrainConfig {
            epochs: 3000,
            learning_rate: 0.2,
            seed: 1,
            ..TrainConfig::default()
        },
        hidden_dim: 8,
        per_factor: true,
    };
    let out = forecast_latents(&series, &cfg, 10).unwrap();
    let (_, avg) = score_latents(
        &full.slice(s![.., 30..]).to_owned(),
        &out.slice(s![.., 30..]).to_owned(),
    )
    .unwrap();
    assert!(avg.mda >= 0.7, "average MDA {}", avg.mda);
}
