//! Forecast accuracy scores: a percentage-style mean absolute error and the
//! mean directional accuracy, per series and averaged over latent factors.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

/// Zero guard in the denominator of [`mae`].
pub const MAE_DELTA: f64 = 1e-8;

/// Accuracy of one forecast series (or the mean over several).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesScore {
    pub mae: f64,
    pub mda: f64,
    pub n_points: usize,
}

fn check_lengths(truth: &[f64], pred: &[f64]) -> Result<()> {
    if truth.len() != pred.len() {
        return Err(Error::LengthMismatch {
            left: truth.len(),
            right: pred.len(),
        });
    }
    Ok(())
}

/// Mean over `t` of `|pred_t - truth_t| / (|truth_t| + MAE_DELTA)`.
pub fn mae(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::EmptySeries);
    }
    let total: f64 = truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (p - t).abs() / (t.abs() + MAE_DELTA))
        .sum();
    Ok(total / truth.len() as f64)
}

/// Mean absolute error without normalization.
pub fn absolute_error(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    if truth.is_empty() {
        return Err(Error::EmptySeries);
    }
    Ok(truth
        .iter()
        .zip(pred)
        .map(|(t, p)| (p - t).abs())
        .sum::<f64>()
        / truth.len() as f64)
}

fn direction(from: f64, to: f64) -> i8 {
    match to.partial_cmp(&from) {
        Some(std::cmp::Ordering::Greater) => 1,
        Some(std::cmp::Ordering::Less) => -1,
        _ => 0,
    }
}

/// Fraction of steps on which both series move in the same direction.
/// A flat step matches only a flat step.
pub fn mda(truth: &[f64], pred: &[f64]) -> Result<f64> {
    check_lengths(truth, pred)?;
    if truth.len() < 2 {
        return Err(Error::SeriesTooShort {
            len: truth.len(),
            required: 2,
        });
    }
    let hits = truth
        .windows(2)
        .zip(pred.windows(2))
        .filter(|(t, p)| direction(t[0], t[1]) == direction(p[0], p[1]))
        .count();
    Ok(hits as f64 / (truth.len() - 1) as f64)
}

/// Scores one series.
pub fn score_series(truth: &[f64], pred: &[f64]) -> Result<SeriesScore> {
    Ok(SeriesScore {
        mae: mae(truth, pred)?,
        mda: mda(truth, pred)?,
        n_points: truth.len(),
    })
}

/// Scores each row (one latent factor over the forecast horizon) and their
/// unweighted mean.
pub fn score_latents(truth: &Matrix, pred: &Matrix) -> Result<(Vec<SeriesScore>, SeriesScore)> {
    if truth.dim() != pred.dim() {
        return Err(Error::ShapeMismatch(format!(
            "truth is {:?} but prediction is {:?}",
            truth.dim(),
            pred.dim()
        )));
    }
    if truth.nrows() == 0 {
        return Err(Error::EmptySeries);
    }
    let rows: Vec<SeriesScore> = truth
        .outer_iter()
        .zip(pred.outer_iter())
        .map(|(t, p)| score_series(&t.to_vec(), &p.to_vec()))
        .collect::<Result<_>>()?;
    let n = rows.len() as f64;
    let mean = SeriesScore {
        mae: rows.iter().map(|s| s.mae).sum::<f64>() / n,
        mda: rows.iter().map(|s| s.mda).sum::<f64>() / n,
        n_points: truth.ncols(),
    };
    Ok((rows, mean))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn closed_forms() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mae(&[1.0; 4], &[1.1; 4]).unwrap() - 0.1).abs() < 1e-8);
        assert_eq!(mda(&[3.0, 2.0, 1.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mda(&[1.0, 1.0, 2.0], &[1.0, 1.0, 5.0]).unwrap(), 1.0);
        assert_eq!(mda(&[1.0, 1.0], &[1.0, 2.0]).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(mae(&[], &[]), Err(Error::EmptySeries)));
        assert!(matches!(
            mae(&[1.0], &[1.0, 2.0]),
            Err(Error::LengthMismatch { .. })
        ));
        assert!(matches!(
            mda(&[1.0], &[1.0]),
            Err(Error::SeriesTooShort { .. })
        ));
        let a = Matrix::zeros((2, 3));
        let b = Matrix::zeros((3, 2));
        assert!(matches!(
            score_latents(&a, &b),
            Err(Error::ShapeMismatch(_))
        ));
    }

    #[test]
    fn single_row_average() {
        let t = array![[1.0, 2.0, 1.5]];
        let p = array![[1.1, 2.5, 1.0]];
        let (rows, mean) = score_latents(&t, &p).unwrap();
        assert_eq!(rows[0], mean);
    }
}
