use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::{frobenius_norm, scale_cols, Matrix, Tensor3};

/// `X_k = A diag(da[k]) H diag(db[k]) B^T` for `k = 0..K`.
///
/// Row `k` of `da` (a `K x P` matrix) holds the diagonal of `D^A_k`;
/// likewise `db` is `K x Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct Paratuck2Model {
    pub a: Matrix,
    pub h: Matrix,
    pub b: Matrix,
    pub da: Matrix,
    pub db: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub i: usize,
    pub j: usize,
    pub k: usize,
    pub p: usize,
    pub q: usize,
}

impl Paratuck2Model {
    pub fn new(a: Matrix, h: Matrix, b: Matrix, da: Matrix, db: Matrix) -> Result<Self> {
        let (i, p) = a.dim();
        let (j, q) = b.dim();
        let k = da.nrows();
        let check = |name: &str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(Error::ShapeMismatch(format!(
                    "{name} is {got:?}, expected {want:?}"
                )))
            }
        };
        check("H", h.dim(), (p, q))?;
        check("D^A", da.dim(), (k, p))?;
        check("D^B", db.dim(), (k, q))?;
        if i == 0 || j == 0 || k == 0 || p == 0 || q == 0 {
            return Err(Error::ShapeMismatch(format!(
                "empty model dimension in ({i}, {j}, {k}, {p}, {q})"
            )));
        }
        Ok(Self { a, h, b, da, db }.into_standard_layout())
    }

    /// Same model with every factor stored row-major.
    pub(crate) fn into_standard_layout(self) -> Self {
        let fix = |m: Matrix| {
            if m.is_standard_layout() {
                m
            } else {
                m.as_standard_layout().into_owned()
            }
        };
        Self {
            a: fix(self.a),
            h: fix(self.h),
            b: fix(self.b),
            da: fix(self.da),
            db: fix(self.db),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            i: self.a.nrows(),
            j: self.b.nrows(),
            k: self.da.nrows(),
            p: self.a.ncols(),
            q: self.b.ncols(),
        }
    }

    /// `diag(da[k]) H diag(db[k])`, the `P x Q` core of slice `k`.
    pub(crate) fn core(&self, k: usize) -> Matrix {
        core_of(&self.h, &row_of(&self.da, k), &row_of(&self.db, k))
    }

    pub fn reconstruct_slice(&self, k: usize) -> Result<Matrix> {
        let depth = self.da.nrows();
        if k >= depth {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: depth,
            });
        }
        Ok(self.a.dot(&self.core(k)).dot(&self.b.t()))
    }

    pub fn reconstruct(&self) -> Tensor3 {
        let d = self.dims();
        let mut out = Tensor3::zeros(d.i, d.j, d.k);
        for k in 0..d.k {
            let slice = self.a.dot(&self.core(k)).dot(&self.b.t());
            out.slice_mut(k).assign(&slice);
        }
        out
    }

    /// `||x - x_hat|| / ||x||`, or `||x_hat||` when `x` is all zeros.
    pub fn relative_residual(&self, x: &Tensor3) -> Result<f64> {
        let d = self.dims();
        if x.dims() != (d.i, d.j, d.k) {
            return Err(Error::DimensionMismatch(format!(
                "tensor is {:?}, model reconstructs {:?}",
                x.dims(),
                (d.i, d.j, d.k)
            )));
        }
        let xnorm = frobenius_norm(x);
        let mut diff = 0.0;
        let mut model_sq = 0.0;
        for (k, xk) in x.slices().enumerate() {
            let xhat = self.a.dot(&self.core(k)).dot(&self.b.t());
            for (&v, &w) in xk.iter().zip(xhat.iter()) {
                diff += (v - w) * (v - w);
                model_sq += w * w;
            }
        }
        if xnorm == 0.0 {
            Ok(model_sq.sqrt())
        } else {
            Ok(diff.sqrt() / xnorm)
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        [&self.a, &self.h, &self.b, &self.da, &self.db]
            .iter()
            .all(|m| m.iter().all(|&v| v >= 0.0))
    }

    pub fn is_finite(&self) -> bool {
        [&self.a, &self.h, &self.b, &self.da, &self.db]
            .iter()
            .all(|m| m.iter().all(|v| v.is_finite()))
    }

    /// Fixes the scaling freedom of the decomposition without changing its
    /// reconstruction: columns of `A` and `B` get unit norm (the scale moves
    /// into the diagonals), then each slice's diagonals are rebalanced so
    /// the geometric means of the positive entries of `da[k]` and `db[k]`
    /// agree. Two fits of the same data then differ in their latent series
    /// by a per-factor constant and a permutation only.
    pub fn canonicalized(&self) -> Self {
        let mut m = self.clone();
        for (mut col, mut series) in m.a.columns_mut().into_iter().zip(m.da.columns_mut()) {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                col /= n;
                series *= n;
            }
        }
        for (mut col, mut series) in m.b.columns_mut().into_iter().zip(m.db.columns_mut()) {
            let n = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if n > 0.0 {
                col /= n;
                series *= n;
            }
        }
        for k in 0..m.da.nrows() {
            let (Some(ga), Some(gb)) = (
                log_mean_positive(m.da.row(k).iter()),
                log_mean_positive(m.db.row(k).iter()),
            ) else {
                continue;
            };
            let c = ((gb - ga) / 2.0).exp();
            m.da.row_mut(k).mapv_inplace(|v| v * c);
            m.db.row_mut(k).mapv_inplace(|v| v / c);
        }
        m
    }
}

fn log_mean_positive<'a>(values: impl Iterator<Item = &'a f64>) -> Option<f64> {
    let (sum, n) = values
        .filter(|v| **v > 0.0)
        .fold((0.0, 0usize), |(s, n), v| (s + v.ln(), n + 1));
    (n > 0).then(|| sum / n as f64)
}

/// Row `k` of `m`, borrowed when the storage allows it.
pub(crate) fn row_of(m: &Matrix, k: usize) -> std::borrow::Cow<'_, [f64]> {
    let row = m.row(k);
    match row.to_slice() {
        Some(s) => std::borrow::Cow::Borrowed(s),
        None => std::borrow::Cow::Owned(row.to_vec()),
    }
}

pub(crate) fn core_of(h: &Matrix, da: &[f64], db: &[f64]) -> Matrix {
    let mut core = scale_cols(h, db);
    for (mut row, &s) in core.outer_iter_mut().zip(da) {
        row *= s;
    }
    core
}

/// Latent ranks, iteration budget and stopping rule for a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub p: usize,
    pub q: usize,
    pub max_iters: usize,
    /// Stop when the relative change of the relative residual drops below this.
    pub tol: f64,
    pub seed: u64,
    /// Added to every multiplicative-update denominator.
    pub epsilon_guard: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            p: 20,
            q: 30,
            max_iters: 1000,
            tol: 1e-6,
            seed: 0,
            epsilon_guard: 1e-12,
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p == 0 || self.q == 0 {
            return Err(Error::InvalidConfig("ranks must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be positive".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidConfig("tol must be positive".into()));
        }
        if !(self.epsilon_guard > 0.0) {
            return Err(Error::InvalidConfig(
                "epsilon_guard must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Human-readable warnings for ranks larger than the data supports.
    pub fn rank_warnings(&self, dims: (usize, usize, usize)) -> Vec<String> {
        let (i, j, k) = dims;
        let mut out = Vec::new();
        if self.p > i.min(j * k) {
            out.push(format!("P={} exceeds min(I, J*K)={}", self.p, i.min(j * k)));
        }
        if self.q > j.min(i * k) {
            out.push(format!("Q={} exceeds min(J, I*K)={}", self.q, j.min(i * k)));
        }
        out
    }
}

/// Random positive factors in `(0.01, 1.0]`, deterministic in `config.seed`.
pub fn init_model(dims: (usize, usize, usize), config: &FitConfig) -> Result<Paratuck2Model> {
    let (i, j, k) = dims;
    let (p, q) = (config.p, config.q);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut fill = |rows: usize, cols: usize| {
        Matrix::from_shape_simple_fn((rows, cols), || 1.0 - 0.99 * rng.random::<f64>())
    };
    let a = fill(i, p);
    let da = fill(k, p);
    let h = fill(p, q);
    let db = fill(k, q);
    let b = fill(j, q);
    Paratuck2Model::new(a, h, b, da, db)
}

/// Per-iteration record of a fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub iterations_run: usize,
    /// Relative residual before the first iteration and after each one.
    pub residual_history: Vec<f64>,
    pub converged: bool,
    pub wall_time: std::time::Duration,
}

impl FitReport {
    pub fn final_residual(&self) -> f64 {
        *self
            .residual_history
            .last()
            .expect("history holds the initial residual")
    }
}
