//! Dense three-way tensors and the matrix kernels the decomposition is built on.
//!
//! Matrices are plain `ndarray::Array2<f64>`. A [`Tensor3`] of dimensions
//! `I x J x K` stores its `K` frontal slices contiguously, each slice an
//! `I x J` row-major block, so slice `k` is a cheap view.

use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut2, Axis};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Relative cutoff below which singular values are treated as zero.
pub const PINV_RCOND: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor3 {
    // stored as (K, I, J)
    data: Array3<f64>,
}

impl Tensor3 {
    pub fn zeros(i: usize, j: usize, k: usize) -> Self {
        Self {
            data: Array3::zeros((k, i, j)),
        }
    }

    /// Builds a tensor from values laid out slice by slice: `data[k*I*J + i*J + j]`.
    pub fn from_vec(dims: (usize, usize, usize), data: Vec<f64>) -> Result<Self> {
        let (i, j, k) = dims;
        if data.len() != i * j * k {
            return Err(Error::DimensionMismatch(format!(
                "{} values for a {i}x{j}x{k} tensor",
                data.len()
            )));
        }
        let data = Array3::from_shape_vec((k, i, j), data)
            .map_err(|e| Error::DimensionMismatch(e.to_string()))?;
        Ok(Self { data })
    }

    pub fn from_slices(slices: &[Matrix]) -> Result<Self> {
        let first = slices
            .first()
            .ok_or_else(|| Error::DimensionMismatch("no slices".into()))?;
        let (i, j) = first.dim();
        let mut out = Self::zeros(i, j, slices.len());
        for (k, slice) in slices.iter().enumerate() {
            if slice.dim() != (i, j) {
                return Err(Error::DimensionMismatch(format!(
                    "slice {k} is {:?}, expected {:?}",
                    slice.dim(),
                    (i, j)
                )));
            }
            out.slice_mut(k).assign(slice);
        }
        Ok(out)
    }

    /// `(I, J, K)`.
    pub fn dims(&self) -> (usize, usize, usize) {
        let (k, i, j) = self.data.dim();
        (i, j, k)
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[[k, i, j]]
    }

    pub fn get_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        &mut self.data[[k, i, j]]
    }

    pub fn slice(&self, k: usize) -> ArrayView2<'_, f64> {
        self.data.index_axis(Axis(0), k)
    }

    pub fn slice_mut(&mut self, k: usize) -> ArrayViewMut2<'_, f64> {
        self.data.index_axis_mut(Axis(0), k)
    }

    pub fn slices(&self) -> impl Iterator<Item = ArrayView2<'_, f64>> {
        self.data.outer_iter()
    }

    /// Values in storage order (slice-major).
    pub fn as_slice(&self) -> &[f64] {
        self.data
            .as_slice()
            .expect("tensor storage is always standard layout")
    }

    /// Tensor made of the first `k` frontal slices.
    pub fn prefix(&self, k: usize) -> Result<Self> {
        let (_, _, depth) = self.dims();
        if k == 0 || k > depth {
            return Err(Error::IndexOutOfRange {
                index: k,
                len: depth,
            });
        }
        Ok(Self {
            data: self.data.slice(s![..k, .., ..]).to_owned(),
        })
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= 0.0)
    }

    /// First entry that is negative (or NaN), as `(i, j, k, value)`.
    pub fn first_negative(&self) -> Option<(usize, usize, usize, f64)> {
        self.data
            .indexed_iter()
            .find(|(_, &v)| !(v >= 0.0))
            .map(|((k, i, j), &v)| (i, j, k, v))
    }

    pub fn sum(&self) -> f64 {
        self.data.sum()
    }
}

/// Square root of the sum of squared entries.
pub fn frobenius_norm(x: &Tensor3) -> f64 {
    x.as_slice().iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn matrix_norm(m: &Matrix) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply {:?} by {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.dot(b))
}

/// Transposed copy in standard (row-major) layout.
pub fn transpose(a: &Matrix) -> Matrix {
    a.t().as_standard_layout().into_owned()
}

/// Kronecker product: block `(i, j)` of the result is `a[i, j] * b`.
pub fn kronecker(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Matrix::zeros((ar * br, ac * bc));
    for ((i, j), &aij) in a.indexed_iter() {
        out.slice_mut(s![i * br..(i + 1) * br, j * bc..(j + 1) * bc])
            .assign(&(b * aij));
    }
    out
}

/// Column-wise Kronecker product of two matrices with equal column counts.
pub fn khatri_rao(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.ncols() != b.ncols() {
        return Err(Error::ColumnMismatch {
            left: a.ncols(),
            right: b.ncols(),
        });
    }
    let (ar, r) = a.dim();
    let br = b.nrows();
    let mut out = Matrix::zeros((ar * br, r));
    for i in 0..ar {
        for j in 0..br {
            let row = i * br + j;
            for c in 0..r {
                out[[row, c]] = a[[i, c]] * b[[j, c]];
            }
        }
    }
    Ok(out)
}

/// Horizontal concatenation `[X_1 X_2 ... X_K]`, an `I x (J*K)` matrix.
pub fn unfold_slices(x: &Tensor3) -> Matrix {
    let (i, j, k) = x.dims();
    let mut out = Matrix::zeros((i, j * k));
    for (kk, slice) in x.slices().enumerate() {
        out.slice_mut(s![.., kk * j..(kk + 1) * j]).assign(&slice);
    }
    out
}

/// Inverse of [`unfold_slices`] for a tensor with `k` slices.
pub fn refold_slices(m: &Matrix, k: usize) -> Result<Tensor3> {
    let (i, cols) = m.dim();
    if k == 0 || cols % k != 0 {
        return Err(Error::DimensionMismatch(format!(
            "{cols} columns cannot be split into {k} slices"
        )));
    }
    let j = cols / k;
    let mut out = Tensor3::zeros(i, j, k);
    for kk in 0..k {
        out.slice_mut(kk)
            .assign(&m.slice(s![.., kk * j..(kk + 1) * j]));
    }
    Ok(out)
}

/// Column-major stacking.
pub fn vectorize(m: &ArrayView2<'_, f64>) -> Array1<f64> {
    m.t().iter().copied().collect()
}

pub fn devectorize(v: &Array1<f64>, rows: usize, cols: usize) -> Result<Matrix> {
    if v.len() != rows * cols {
        return Err(Error::DimensionMismatch(format!(
            "vector of length {} into {rows}x{cols}",
            v.len()
        )));
    }
    Ok(Matrix::from_shape_fn((rows, cols), |(r, c)| {
        v[c * rows + r]
    }))
}

/// Thin singular value decomposition `a = U diag(sigma) V^T`.
#[derive(Debug, Clone)]
pub struct Svd {
    /// `rows x r` with orthonormal columns (zero columns for zero singular values).
    pub u: Matrix,
    pub sigma: Vec<f64>,
    /// `cols x r` with orthonormal columns.
    pub v: Matrix,
}

const JACOBI_MAX_SWEEPS: usize = 80;

/// One-sided (Hestenes) Jacobi SVD.
pub fn svd(a: &Matrix) -> Result<Svd> {
    let (rows, cols) = a.dim();
    if rows < cols {
        let t = svd(&transpose(a))?;
        return Ok(Svd {
            u: t.v,
            sigma: t.sigma,
            v: t.u,
        });
    }
    // columns of `a` as contiguous vectors
    let mut w: Vec<Vec<f64>> = (0..cols).map(|c| a.column(c).to_vec()).collect();
    let mut v: Vec<Vec<f64>> = (0..cols)
        .map(|c| (0..cols).map(|r| if r == c { 1.0 } else { 0.0 }).collect())
        .collect();
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let rotate = |x: &mut Vec<f64>, y: &mut Vec<f64>, c: f64, s: f64| {
        for (xi, yi) in x.iter_mut().zip(y.iter_mut()) {
            let (p, q) = (*xi, *yi);
            *xi = c * p - s * q;
            *yi = s * p + c * q;
        }
    };

    let total: f64 = w.iter().map(|c| dot(c, c)).sum();
    // columns below this squared norm are numerically zero and left alone
    let negligible = total * (f64::EPSILON * f64::EPSILON);
    let tol = f64::EPSILON * rows as f64;
    let mut converged = cols < 2;
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha = dot(&w[p], &w[p]);
                let beta = dot(&w[q], &w[q]);
                let gamma = dot(&w[p], &w[q]);
                if alpha <= negligible
                    || beta <= negligible
                    || gamma.abs() <= tol * (alpha * beta).sqrt()
                {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                let (left, right) = w.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
                let (left, right) = v.split_at_mut(q);
                rotate(&mut left[p], &mut right[0], c, s);
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::ConvergenceFailure { rows, cols });
    }

    let mut order: Vec<usize> = (0..cols).collect();
    let norms: Vec<f64> = w.iter().map(|c| dot(c, c).sqrt()).collect();
    order.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let mut u = Matrix::zeros((rows, cols));
    let mut vm = Matrix::zeros((cols, cols));
    let mut sigma = Vec::with_capacity(cols);
    for (dst, &src) in order.iter().enumerate() {
        let n = norms[src];
        sigma.push(n);
        if n > 0.0 {
            for r in 0..rows {
                u[[r, dst]] = w[src][r] / n;
            }
        }
        for r in 0..cols {
            vm[[r, dst]] = v[src][r];
        }
    }
    Ok(Svd { u, sigma, v: vm })
}

/// Moore-Penrose inverse by SVD; singular values below
/// `PINV_RCOND * sigma_max` are dropped.
pub fn pseudoinverse(a: &Matrix) -> Result<Matrix> {
    let (rows, cols) = a.dim();
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteMatrix);
    }
    if rows == 0 || cols == 0 {
        return Ok(Matrix::zeros((cols, rows)));
    }
    let Svd { u, sigma, v } = svd(a)?;
    let sigma_max = sigma.first().copied().unwrap_or(0.0);
    let cutoff = PINV_RCOND * sigma_max;
    let mut out = Matrix::zeros((cols, rows));
    for (idx, &sv) in sigma.iter().enumerate() {
        if sv <= cutoff || sv == 0.0 {
            continue;
        }
        let vi = v.column(idx);
        let ui = u.column(idx);
        for c in 0..cols {
            let vc = vi[c] / sv;
            if vc == 0.0 {
                continue;
            }
            for r in 0..rows {
                out[[c, r]] += vc * ui[r];
            }
        }
    }
    Ok(out)
}

/// `diag(d) * m`
pub fn scale_rows(m: &Matrix, d: &[f64]) -> Matrix {
    let mut out = m.clone();
    for (mut row, &s) in out.outer_iter_mut().zip(d) {
        row *= s;
    }
    out
}

/// `m * diag(d)`
pub fn scale_cols(m: &Matrix, d: &[f64]) -> Matrix {
    let mut out = m.clone();
    for mut row in out.outer_iter_mut() {
        for (v, &s) in row.iter_mut().zip(d) {
            *v *= s;
        }
    }
    out
}
