//! Unconstrained alternating least squares, the classical baseline solver.
//!
//! Every block is replaced by the minimum-norm least-squares solution of its
//! subproblem. The normal-equation form `Z^+ x = (Z^T Z)^+ Z^T x` is used so
//! no design matrix larger than `PQ x PQ` is ever formed.

use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;

use super::model::{init_model, FitConfig, FitReport, Paratuck2Model};
use super::nonneg::{
    b_system, check_finite, converged, da_system, db_system, h_rhs, ordered_sum, SliceCache,
};
use crate::error::Result;
use crate::tensor::{
    devectorize, kronecker, pseudoinverse, scale_cols, scale_rows, vectorize, Matrix, Tensor3,
};

fn row(m: &Matrix, k: usize) -> &[f64] {
    m.row(k).to_slice().expect("contiguous row")
}

/// `A <- X F^+` with `X = [X_1 ... X_K]`, `F = [F_1 ... F_K]`.
pub(crate) fn solve_a(m: &mut Paratuck2Model, cache: &SliceCache) -> Result<()> {
    let k_total = m.da.nrows();
    let (nums, grams): (Vec<Matrix>, Vec<Matrix>) = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let core = m.core(k);
            (
                cache.xb[k].dot(&core.t()),
                core.dot(&cache.btb).dot(&core.t()),
            )
        })
        .unzip();
    let num = ordered_sum(nums);
    let gram = ordered_sum(grams);
    m.a = num.dot(&pseudoinverse(&gram)?);
    Ok(())
}

/// Row `k` of `D^A` from the least-squares system `vec(X_k) ~ (G_k (kr) A) d`.
pub(crate) fn solve_da(m: &mut Paratuck2Model, cache: &SliceCache) -> Result<()> {
    let ata = m.a.t().dot(&m.a);
    let rows: Vec<Result<Array1<f64>>> = (0..m.da.nrows())
        .into_par_iter()
        .map(|k| {
            let (num, gram) = da_system(m, cache, &ata, k);
            Ok(pseudoinverse(&gram)?.dot(&num))
        })
        .collect();
    for (k, r) in rows.into_iter().enumerate() {
        m.da.row_mut(k).assign(&r?);
    }
    Ok(())
}

/// `vec(H) <- Z^+ x` with `Z` the stacked `B D^B_k (x) A D^A_k`.
pub(crate) fn solve_h(m: &mut Paratuck2Model, cache: &SliceCache) -> Result<()> {
    let (p, q) = m.h.dim();
    let ata = m.a.t().dot(&m.a);
    let rhs = vectorize(&h_rhs(m, cache).view());
    let parts: Vec<Matrix> = (0..m.da.nrows())
        .into_par_iter()
        .map(|k| {
            let da = row(&m.da, k);
            let db = row(&m.db, k);
            let left = scale_cols(&scale_rows(&ata, da), da);
            let right = scale_cols(&scale_rows(&cache.btb, db), db);
            kronecker(&right, &left)
        })
        .collect();
    let gram = ordered_sum(parts);
    let h = pseudoinverse(&gram)?.dot(&rhs);
    m.h = devectorize(&h, p, q)?;
    Ok(())
}

pub(crate) fn solve_db(m: &mut Paratuck2Model, cache: &SliceCache) -> Result<()> {
    let ata = m.a.t().dot(&m.a);
    let rows: Vec<Result<Array1<f64>>> = (0..m.db.nrows())
        .into_par_iter()
        .map(|k| {
            let (num, gram) = db_system(m, cache, &ata, k);
            Ok(pseudoinverse(&gram)?.dot(&num))
        })
        .collect();
    for (k, r) in rows.into_iter().enumerate() {
        m.db.row_mut(k).assign(&r?);
    }
    Ok(())
}

/// `B <- [X_1^T ... X_K^T] C^+` with `C = [C_1^T ... C_K^T]`.
pub(crate) fn solve_b(m: &mut Paratuck2Model, x: &Tensor3) -> Result<()> {
    let (num, gram) = b_system(m, x);
    m.b = num.dot(&pseudoinverse(&gram)?);
    Ok(())
}

pub(crate) fn als_sweep(m: &mut Paratuck2Model, x: &Tensor3, iteration: usize) -> Result<()> {
    let cache = SliceCache::new(x, &m.b);
    solve_a(m, &cache)?;
    check_finite(&m.a, "A", iteration)?;
    solve_da(m, &cache)?;
    check_finite(&m.da, "D^A", iteration)?;
    solve_h(m, &cache)?;
    check_finite(&m.h, "H", iteration)?;
    solve_db(m, &cache)?;
    check_finite(&m.db, "D^B", iteration)?;
    solve_b(m, x)?;
    check_finite(&m.b, "B", iteration)?;
    Ok(())
}

/// Classical ALS fit. Factors may become negative.
pub fn fit_als_unconstrained(
    x: &Tensor3,
    config: &FitConfig,
) -> Result<(Paratuck2Model, FitReport)> {
    config.validate()?;
    let model = init_model(x.dims(), config)?;
    fit_als_from(x, config, model)
}

/// ALS starting from a given model.
pub fn fit_als_from(
    x: &Tensor3,
    config: &FitConfig,
    model: Paratuck2Model,
) -> Result<(Paratuck2Model, FitReport)> {
    let start = Instant::now();
    let mut model = model.into_standard_layout();
    let mut history = vec![model.relative_residual(x)?];
    let mut converged_flag = false;
    let mut iterations = 0;
    for it in 1..=config.max_iters {
        als_sweep(&mut model, x, it)?;
        iterations = it;
        let r = model.relative_residual(x)?;
        let prev = *history.last().unwrap();
        history.push(r);
        if converged(prev, r, config.tol) {
            converged_flag = true;
            break;
        }
    }
    Ok((
        model,
        FitReport {
            iterations_run: iterations,
            residual_history: history,
            converged: converged_flag,
            wall_time: start.elapsed(),
        },
    ))
}
