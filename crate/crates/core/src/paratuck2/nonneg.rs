//! Non-negative fitting by multiplicative updates.
//!
//! Each block is one least-squares subproblem with the other four blocks
//! held fixed; the update multiplies every entry by the ratio of the
//! negative and positive parts of its gradient. Per-slice terms are built
//! from small Gram matrices instead of the explicit Khatri-Rao and
//! Kronecker design matrices:
//!
//! * `A`:   `X F^T` with `F_k = core_k B^T`, Gram `sum core_k B^T B core_k^T`
//! * `D^A`: `Z_k = G_k (kr) A`, `G_k = B D^B_k H^T`, `Z_k^T Z_k = (A^T A) o (G_k^T G_k)`
//! * `H`:   `Z_k = B D^B_k (x) A D^A_k`, `Z_k^T x_k = vec(D^A_k A^T X_k B D^B_k)`
//! * `D^B`: `Z_k = B (kr) M_k`, `M_k = A D^A_k H`, `Z_k^T Z_k = (M_k^T M_k) o (B^T B)`
//! * `B`:   `X_k^T C_k` with `C_k = M_k D^B_k`, Gram `sum C_k^T C_k`

use std::time::Instant;

use ndarray::Array1;
use rayon::prelude::*;

use super::model::{core_of, init_model, FitConfig, FitReport, Paratuck2Model};
use crate::error::{Error, Result};
use crate::tensor::{scale_cols, scale_rows, transpose, Matrix, Tensor3};

/// Per-iteration products that stay valid while `B` is unchanged.
pub(crate) struct SliceCache {
    /// `X_k B` for every slice.
    pub xb: Vec<Matrix>,
    pub btb: Matrix,
}

impl SliceCache {
    pub fn new(x: &Tensor3, b: &Matrix) -> Self {
        let xb = (0..x.dims().2)
            .into_par_iter()
            .map(|k| x.slice(k).dot(b))
            .collect();
        Self {
            xb,
            btb: b.t().dot(b),
        }
    }
}

fn row(m: &Matrix, k: usize) -> &[f64] {
    m.row(k)
        .to_slice()
        .expect("rows of standard-layout matrices are contiguous")
}

/// Sums per-slice matrices in slice order so parallel evaluation is bit-stable.
pub(crate) fn ordered_sum(parts: Vec<Matrix>) -> Matrix {
    let mut it = parts.into_iter();
    let first = it.next().expect("at least one slice");
    it.fold(first, |acc, m| acc + m)
}

fn multiplicative(target: &mut Matrix, num: &Matrix, den: &Matrix, eps: f64) {
    ndarray::Zip::from(target)
        .and(num)
        .and(den)
        .for_each(|t, &n, &d| *t *= n / (d + eps));
}

pub(crate) fn update_a(m: &mut Paratuck2Model, cache: &SliceCache, eps: f64) {
    let k_total = m.da.nrows();
    let (nums, grams): (Vec<Matrix>, Vec<Matrix>) = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let core = m.core(k);
            let num = cache.xb[k].dot(&core.t());
            let gram = core.dot(&cache.btb).dot(&core.t());
            (num, gram)
        })
        .unzip();
    let num = ordered_sum(nums);
    let gram = ordered_sum(grams);
    let den = m.a.dot(&gram);
    multiplicative(&mut m.a, &num, &den, eps);
}

/// Numerator `diag(A^T X_k G_k)` and Gram `(A^T A) o (G_k^T G_k)` of slice `k`.
pub(crate) fn da_system(
    m: &Paratuck2Model,
    cache: &SliceCache,
    ata: &Matrix,
    k: usize,
) -> (Array1<f64>, Matrix) {
    let db = row(&m.db, k);
    // D^B_k H^T, Q x P
    let dbht = scale_rows(&transpose(&m.h), db);
    let xg = cache.xb[k].dot(&dbht);
    let num = Array1::from_iter((0..m.a.ncols()).map(|p| m.a.column(p).dot(&xg.column(p))));
    let gtg = dbht.t().dot(&cache.btb).dot(&dbht);
    (num, ata * &gtg)
}

pub(crate) fn update_da(m: &mut Paratuck2Model, cache: &SliceCache, eps: f64) {
    let ata = m.a.t().dot(&m.a);
    let k_total = m.da.nrows();
    let rows: Vec<Array1<f64>> = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let (num, gram) = da_system(m, cache, &ata, k);
            let d = m.da.row(k);
            let den = gram.dot(&d);
            Array1::from_iter((0..d.len()).map(|p| d[p] * num[p] / (den[p] + eps)))
        })
        .collect();
    for (k, r) in rows.into_iter().enumerate() {
        m.da.row_mut(k).assign(&r);
    }
}

/// Right-hand side `sum_k D^A_k A^T X_k B D^B_k` of the `H` subproblem.
pub(crate) fn h_rhs(m: &Paratuck2Model, cache: &SliceCache) -> Matrix {
    let k_total = m.da.nrows();
    let parts: Vec<Matrix> = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let atxb = m.a.t().dot(&cache.xb[k]);
            scale_cols(&scale_rows(&atxb, row(&m.da, k)), row(&m.db, k))
        })
        .collect();
    ordered_sum(parts)
}

pub(crate) fn update_h(m: &mut Paratuck2Model, cache: &SliceCache, eps: f64) {
    let ata = m.a.t().dot(&m.a);
    let num = h_rhs(m, cache);
    let k_total = m.da.nrows();
    let parts: Vec<Matrix> = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let da = row(&m.da, k);
            let db = row(&m.db, k);
            let left = scale_cols(&scale_rows(&ata, da), da);
            let right = scale_cols(&scale_rows(&cache.btb, db), db);
            left.dot(&m.h).dot(&right)
        })
        .collect();
    let den = ordered_sum(parts);
    multiplicative(&mut m.h, &num, &den, eps);
}

/// Numerator `diag(M_k^T X_k B)` and Gram `(M_k^T M_k) o (B^T B)` of slice `k`.
pub(crate) fn db_system(
    m: &Paratuck2Model,
    cache: &SliceCache,
    ata: &Matrix,
    k: usize,
) -> (Array1<f64>, Matrix) {
    let da = row(&m.da, k);
    // D^A_k H, P x Q
    let dah = scale_rows(&m.h, da);
    let mk = m.a.dot(&dah);
    let xb = &cache.xb[k];
    let num = Array1::from_iter((0..m.b.ncols()).map(|q| mk.column(q).dot(&xb.column(q))));
    let mtm = dah.t().dot(ata).dot(&dah);
    (num, &mtm * &cache.btb)
}

pub(crate) fn update_db(m: &mut Paratuck2Model, cache: &SliceCache, eps: f64) {
    let ata = m.a.t().dot(&m.a);
    let k_total = m.db.nrows();
    let rows: Vec<Array1<f64>> = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let (num, gram) = db_system(m, cache, &ata, k);
            let d = m.db.row(k);
            let den = gram.dot(&d);
            Array1::from_iter((0..d.len()).map(|q| d[q] * num[q] / (den[q] + eps)))
        })
        .collect();
    for (k, r) in rows.into_iter().enumerate() {
        m.db.row_mut(k).assign(&r);
    }
}

/// `(sum_k X_k^T C_k, sum_k C_k^T C_k)` with `C_k = A D^A_k H D^B_k`.
pub(crate) fn b_system(m: &Paratuck2Model, x: &Tensor3) -> (Matrix, Matrix) {
    let k_total = m.da.nrows();
    let (nums, grams): (Vec<Matrix>, Vec<Matrix>) = (0..k_total)
        .into_par_iter()
        .map(|k| {
            let ck = m.a.dot(&core_of(&m.h, row(&m.da, k), row(&m.db, k)));
            (x.slice(k).t().dot(&ck), ck.t().dot(&ck))
        })
        .unzip();
    (ordered_sum(nums), ordered_sum(grams))
}

pub(crate) fn update_b(m: &mut Paratuck2Model, x: &Tensor3, eps: f64) {
    let (num, gram) = b_system(m, x);
    let den = m.b.dot(&gram);
    multiplicative(&mut m.b, &num, &den, eps);
}

pub(crate) fn check_finite(m: &Matrix, factor: &'static str, iteration: usize) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteEncountered { factor, iteration })
    }
}

/// One full multiplicative sweep in the order `A, D^A, H, D^B, B`.
pub(crate) fn sweep(m: &mut Paratuck2Model, x: &Tensor3, eps: f64, iteration: usize) -> Result<()> {
    let cache = SliceCache::new(x, &m.b);
    update_a(m, &cache, eps);
    check_finite(&m.a, "A", iteration)?;
    update_da(m, &cache, eps);
    check_finite(&m.da, "D^A", iteration)?;
    update_h(m, &cache, eps);
    check_finite(&m.h, "H", iteration)?;
    update_db(m, &cache, eps);
    check_finite(&m.db, "D^B", iteration)?;
    update_b(m, x, eps);
    check_finite(&m.b, "B", iteration)?;
    Ok(())
}

pub(crate) fn converged(prev: f64, current: f64, tol: f64) -> bool {
    if prev == 0.0 {
        return true;
    }
    ((current - prev).abs() / prev) < tol
}

/// Fits a non-negative model to `x`.
pub fn fit_nonnegative(x: &Tensor3, config: &FitConfig) -> Result<(Paratuck2Model, FitReport)> {
    fit_nonnegative_with(x, config, |_, _| {})
}

/// As [`fit_nonnegative`], calling `observe(iteration, model)` after every sweep.
pub fn fit_nonnegative_with<F>(
    x: &Tensor3,
    config: &FitConfig,
    observe: F,
) -> Result<(Paratuck2Model, FitReport)>
where
    F: FnMut(usize, &Paratuck2Model),
{
    config.validate()?;
    let model = init_model(x.dims(), config)?;
    fit_nonnegative_from_with(x, config, model, observe)
}

/// Multiplicative updates starting from a given non-negative model.
pub fn fit_nonnegative_from(
    x: &Tensor3,
    config: &FitConfig,
    model: Paratuck2Model,
) -> Result<(Paratuck2Model, FitReport)> {
    fit_nonnegative_from_with(x, config, model, |_, _| {})
}

fn fit_nonnegative_from_with<F>(
    x: &Tensor3,
    config: &FitConfig,
    model: Paratuck2Model,
    mut observe: F,
) -> Result<(Paratuck2Model, FitReport)>
where
    F: FnMut(usize, &Paratuck2Model),
{
    config.validate()?;
    if let Some((i, j, k, value)) = x.first_negative() {
        return Err(Error::NegativeInput { i, j, k, value });
    }
    let start = Instant::now();
    let mut model = model.into_standard_layout();
    let mut history = vec![model.relative_residual(x)?];
    let mut converged_flag = false;
    let mut iterations = 0;
    for it in 1..=config.max_iters {
        sweep(&mut model, x, config.epsilon_guard, it)?;
        iterations = it;
        observe(it, &model);
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

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{khatri_rao, kronecker, vectorize};

    fn planted(seed: u64, dims: (usize, usize, usize), p: usize, q: usize) -> Paratuck2Model {
        let cfg = FitConfig {
            p,
            q,
            seed,
            ..FitConfig::default()
        };
        init_model(dims, &cfg).unwrap()
    }

    fn close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.dim(), b.dim());
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() <= tol * y.abs().max(1.0), "{x} vs {y}");
        }
    }

    fn diag(v: &[f64]) -> Matrix {
        Matrix::from_diag(&Array1::from(v.to_vec()))
    }

    // Explicit design matrices, built straight from the definitions.

    #[test]
    fn da_system_matches_explicit_khatri_rao() {
        let m = planted(1, (4, 5, 3), 2, 3);
        let x = planted(2, (4, 5, 3), 2, 3).reconstruct();
        let cache = SliceCache::new(&x, &m.b);
        let ata = m.a.t().dot(&m.a);
        for k in 0..3 {
            let g = m.b.dot(&diag(row(&m.db, k))).dot(&m.h.t());
            let z = khatri_rao(&g, &m.a).unwrap();
            let xk = vectorize(&x.slice(k));
            let want_num = z.t().dot(&xk);
            let want_gram = z.t().dot(&z);
            let (num, gram) = da_system(&m, &cache, &ata, k);
            close(
                &num.clone().insert_axis(ndarray::Axis(0)),
                &want_num.insert_axis(ndarray::Axis(0)),
                1e-12,
            );
            close(&gram, &want_gram, 1e-12);
        }
    }

    #[test]
    fn db_system_matches_explicit_khatri_rao() {
        let m = planted(3, (4, 5, 3), 2, 3);
        let x = planted(4, (4, 5, 3), 2, 3).reconstruct();
        let cache = SliceCache::new(&x, &m.b);
        let ata = m.a.t().dot(&m.a);
        for k in 0..3 {
            let mk = m.a.dot(&diag(row(&m.da, k))).dot(&m.h);
            let z = khatri_rao(&m.b, &mk).unwrap();
            let xk = vectorize(&x.slice(k));
            let (num, gram) = db_system(&m, &cache, &ata, k);
            let want_num = z.t().dot(&xk);
            for (a, b) in num.iter().zip(want_num.iter()) {
                assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
            close(&gram, &z.t().dot(&z), 1e-12);
        }
    }

    #[test]
    fn h_rhs_matches_explicit_kronecker() {
        let m = planted(5, (4, 5, 3), 2, 3);
        let x = planted(6, (4, 5, 3), 2, 3).reconstruct();
        let cache = SliceCache::new(&x, &m.b);
        let got = vectorize(&h_rhs(&m, &cache).view());
        let mut want = Array1::<f64>::zeros(6);
        for k in 0..3 {
            let z = kronecker(
                &m.b.dot(&diag(row(&m.db, k))),
                &m.a.dot(&diag(row(&m.da, k))),
            );
            want = want + z.t().dot(&vectorize(&x.slice(k)));
        }
        for (a, b) in got.iter().zip(want.iter()) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn a_update_matches_unfolded_definition() {
        let m0 = planted(7, (4, 5, 3), 2, 3);
        let x = planted(8, (4, 5, 3), 2, 3).reconstruct();
        let eps = 1e-12;
        let mut m = m0.clone();
        let cache = SliceCache::new(&x, &m.b);
        update_a(&mut m, &cache, eps);

        let f_slices: Vec<Matrix> = (0..3).map(|k| m0.core(k).dot(&m0.b.t())).collect();
        let mut f = Matrix::zeros((2, 15));
        for (k, fk) in f_slices.iter().enumerate() {
            f.slice_mut(ndarray::s![.., k * 5..(k + 1) * 5]).assign(fk);
        }
        let xu = crate::tensor::unfold_slices(&x);
        let num = xu.dot(&f.t());
        let den = m0.a.dot(&f.dot(&f.t()));
        let mut want = m0.a.clone();
        ndarray::Zip::from(&mut want)
            .and(&num)
            .and(&den)
            .for_each(|w, &n, &d| *w *= n / (d + eps));
        close(&m.a, &want, 1e-12);
    }

    #[test]
    fn negative_input_rejected() {
        let mut x = Tensor3::zeros(2, 2, 2);
        *x.get_mut(1, 0, 1) = -0.5;
        let err = fit_nonnegative(
            &x,
            &FitConfig {
                p: 1,
                q: 1,
                ..FitConfig::default()
            },
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::NegativeInput {
                i: 1,
                j: 0,
                k: 1,
                ..
            }
        ));
    }

    #[test]
    fn zero_tensor_stays_finite() {
        let x = Tensor3::zeros(3, 4, 2);
        let cfg = FitConfig {
            p: 2,
            q: 2,
            max_iters: 50,
            ..FitConfig::default()
        };
        let (m, report) = fit_nonnegative(&x, &cfg).unwrap();
        assert!(m.is_finite());
        assert!(report.residual_history.iter().all(|r| r.is_finite()));
        assert!(report.residual_history[0] > 0.0);
        assert_eq!(report.residual_history.len(), report.iterations_run + 1);
        assert!(report.final_residual() < report.residual_history[0]);
    }

    #[test]
    fn small_planted_fit_improves_and_stays_nonnegative() {
        let truth = planted(21, (6, 7, 4), 2, 2);
        let x = truth.reconstruct();
        let cfg = FitConfig {
            p: 2,
            q: 2,
            max_iters: 300,
            tol: 1e-12,
            seed: 1,
            ..FitConfig::default()
        };
        let mut all_nonneg = true;
        let (m, report) =
            fit_nonnegative_with(&x, &cfg, |_, m| all_nonneg &= m.is_nonnegative()).unwrap();
        assert!(all_nonneg);
        assert!(m.is_nonnegative());
        assert!(report.final_residual() < 0.5 * report.residual_history[0]);
        assert_eq!(report.residual_history.len(), report.iterations_run + 1);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = planted(30, (5, 6, 3), 2, 2).reconstruct();
        let cfg = FitConfig {
            p: 2,
            q: 2,
            max_iters: 40,
            seed: 4,
            ..FitConfig::default()
        };
        let (m1, r1) = fit_nonnegative(&x, &cfg).unwrap();
        let (m2, r2) = fit_nonnegative(&x, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(r1.residual_history, r2.residual_history);
    }
}
