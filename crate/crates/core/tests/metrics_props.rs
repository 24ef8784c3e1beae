//! Scores against definitional loops.

use ndarray::Array2;
use paratuck_lstm::metrics::{mae, mda, score_latents, score_series, MAE_DELTA};
use paratuck_lstm::Error;
use proptest::prelude::*;

fn mae_loop(truth: &[f64], pred: &[f64]) -> f64 {
    let mut total = 0.0;
    for t in 0..truth.len() {
        total += (pred[t] - truth[t]).abs() / (truth[t].abs() + MAE_DELTA);
    }
    total / truth.len() as f64
}

fn sign(v: f64) -> i32 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

fn mda_loop(truth: &[f64], pred: &[f64]) -> f64 {
    let mut hits = 0;
    for t in 1..truth.len() {
        if sign(truth[t] - truth[t - 1]) == sign(pred[t] - pred[t - 1]) {
            hits += 1;
        }
    }
    hits as f64 / (truth.len() - 1) as f64
}

fn pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2..=max_len).prop_flat_map(|n| {
        (
            prop::collection::vec(-50.0f64..50.0, n),
            prop::collection::vec(-50.0f64..50.0, n),
        )
    })
}

/// Eighths in a small range, so affine maps with small dyadic or integer
/// coefficients are computed exactly.
fn coarse_pair(max_len: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    let v = (-400i32..400).prop_map(|n| n as f64 / 8.0);
    (2..=max_len).prop_flat_map(move |n| {
        (
            prop::collection::vec(v.clone(), n),
            prop::collection::vec(v.clone(), n),
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn mae_matches_loop((truth, pred) in pair(30)) {
        let got = mae(&truth, &pred).unwrap();
        let want = mae_loop(&truth, &pred);
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1e-300));
        prop_assert!(got >= 0.0);
    }

    #[test]
    fn mda_matches_loop_exactly((truth, pred) in coarse_pair(30)) {
        prop_assert_eq!(mda(&truth, &pred).unwrap(), mda_loop(&truth, &pred));
    }

    #[test]
    fn mda_is_invariant_under_increasing_affine_maps((truth, pred) in coarse_pair(30),
            alpha in prop::sample::select(vec![0.25, 0.5, 1.0, 2.0, 3.0, 5.0]), beta in -40i32..40) {
        let moved: Vec<f64> = pred.iter().map(|p| alpha * p + beta as f64).collect();
        prop_assert_eq!(mda(&truth, &moved).unwrap(), mda(&truth, &pred).unwrap());
        let m = mda(&truth, &pred).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
    }

    #[test]
    fn average_is_mean_of_rows(values in prop::collection::vec(-10.0f64..10.0, 100)) {
        let truth = Array2::from_shape_vec((5, 10), values[..50].to_vec()).unwrap();
        let pred = Array2::from_shape_vec((5, 10), values[50..].to_vec()).unwrap();
        let (rows, avg) = score_latents(&truth, &pred).unwrap();
        prop_assert_eq!(rows.len(), 5);
        let mut mae_sum = 0.0;
        let mut mda_sum = 0.0;
        for (r, s) in rows.iter().enumerate() {
            let t = truth.row(r).to_vec();
            let p = pred.row(r).to_vec();
            prop_assert_eq!(*s, score_series(&t, &p).unwrap());
            mae_sum += s.mae;
            mda_sum += s.mda;
        }
        prop_assert!((avg.mae - mae_sum / 5.0).abs() <= 1e-12 * avg.mae.abs().max(1.0));
        prop_assert!((avg.mda - mda_sum / 5.0).abs() <= 1e-12);
        prop_assert_eq!(avg.n_points, 10);
    }
}

#[test]
fn closed_forms() {
    let ones = vec![1.0; 6];
    let up: Vec<f64> = (0..6).map(f64::from).collect();
    let down: Vec<f64> = up.iter().rev().copied().collect();
    assert_eq!(mae(&ones, &ones).unwrap(), 0.0);
    let shifted = vec![1.1; 6];
    assert!((mae(&ones, &shifted).unwrap() - 0.1).abs() < 1e-8);
    assert_eq!(mda(&up, &up).unwrap(), 1.0);
    assert_eq!(mda(&down, &up).unwrap(), 0.0);
    // flat steps only match flat steps
    assert_eq!(mda(&ones, &up).unwrap(), 0.0);
    assert_eq!(mda(&ones, &ones).unwrap(), 1.0);
}

#[test]
fn identical_matrices_score_perfectly() {
    let m = Array2::from_shape_fn((4, 7), |(r, c)| (r * 7 + c) as f64 + 1.0);
    let (rows, avg) = score_latents(&m, &m).unwrap();
    assert!(rows.iter().all(|s| s.mae == 0.0 && s.mda == 1.0));
    assert_eq!((avg.mae, avg.mda), (0.0, 1.0));
    let one = m.slice(ndarray::s![..1, ..]).to_owned();
    let (rows, avg) = score_latents(&one, &(&one * 2.0)).unwrap();
    assert_eq!(rows[0], avg);
}

#[test]
fn errors() {
    assert!(matches!(
        mae(&[1.0], &[1.0, 2.0]),
        Err(Error::LengthMismatch { left: 1, right: 2 })
    ));
    assert!(matches!(mae(&[], &[]), Err(Error::EmptySeries)));
    assert!(matches!(
        mda(&[1.0], &[1.0]),
        Err(Error::SeriesTooShort { len: 1, .. })
    ));
    let a = Array2::<f64>::zeros((2, 3));
    let b = Array2::<f64>::zeros((3, 2));
    assert!(matches!(
        score_latents(&a, &b),
        Err(Error::ShapeMismatch(_))
    ));
}
