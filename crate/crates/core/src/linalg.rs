//! Dense helpers shared across modules.
//!
//! Matrices are `ndarray::Array2<f64>`. Factorizations (Cholesky, symmetric
//! eigendecomposition) are delegated to `nalgebra`; everything here converts
//! at the boundary and hands back `ndarray` values.

use nalgebra::DMatrix;
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Seed used whenever a caller does not supply one.
pub const DEFAULT_SEED: u64 = 0x5eed_2024;

pub fn max_asymmetry(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[[i, j]] - m[[j, i]]).abs());
        }
    }
    worst
}

pub fn check_square(m: ArrayView2<'_, f64>, what: &str) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::shape(format!(
            "{what} must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(m.nrows())
}

pub fn check_symmetric(m: ArrayView2<'_, f64>, tol: f64, what: &str) -> Result<usize> {
    let n = check_square(m, what)?;
    let asym = max_asymmetry(m);
    if asym.is_nan() || asym > tol {
        return Err(Error::NotSymmetric(format!(
            "{what}: max |m_ij - m_ji| = {asym:e} exceeds {tol:e}"
        )));
    }
    Ok(n)
}

fn to_dmatrix(m: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_dmatrix(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Eigenvalues (ascending) and matching eigenvectors (columns) of a
/// symmetric matrix. Only the lower triangle's symmetric part is used.
pub fn symmetric_eigen(m: ArrayView2<'_, f64>) -> (Array1<f64>, Array2<f64>) {
    let n = m.nrows();
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let eig = sym.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Array1::from_iter(order.iter().map(|&k| eig.eigenvalues[k]));
    let vectors = Array2::from_shape_fn((n, n), |(i, c)| eig.eigenvectors[(i, order[c])]);
    (values, vectors)
}

pub fn symmetric_eigenvalues(m: ArrayView2<'_, f64>) -> Array1<f64> {
    let n = m.nrows();
    if n == 0 {
        return Array1::zeros(0);
    }
    let sym = DMatrix::from_fn(n, n, |i, j| 0.5 * (m[[i, j]] + m[[j, i]]));
    let mut v: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    Array1::from(v)
}

pub fn min_eigenvalue(m: ArrayView2<'_, f64>) -> f64 {
    symmetric_eigenvalues(m)
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Solves `a x = b` for symmetric positive definite `a` via Cholesky.
pub fn cholesky_solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    check_square(a, "system matrix")?;
    if a.nrows() != b.nrows() {
        return Err(Error::shape(format!(
            "right-hand side has {} rows, system has {}",
            b.nrows(),
            a.nrows()
        )));
    }
    let chol = to_dmatrix(a).cholesky().ok_or_else(|| Error::Singular {
        min_eigenvalue: min_eigenvalue(a),
    })?;
    Ok(from_dmatrix(&chol.solve(&to_dmatrix(b))))
}

/// Moore-Penrose pseudo-inverse of a symmetric matrix; eigenvalues with
/// magnitude at or below `tol` are treated as zero.
pub fn symmetric_pinv(a: ArrayView2<'_, f64>, tol: f64) -> Array2<f64> {
    let (values, vectors) = symmetric_eigen(a);
    let n = values.len();
    let mut scaled = vectors.clone();
    for c in 0..n {
        let inv = if values[c].abs() > tol {
            1.0 / values[c]
        } else {
            0.0
        };
        scaled.column_mut(c).mapv_inplace(|x| x * inv);
    }
    scaled.dot(&vectors.t())
}

pub fn submatrix(m: ArrayView2<'_, f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[[rows[i], cols[j]]])
}

pub fn gather_rows(m: ArrayView2<'_, f64>, rows: &[usize]) -> Array2<f64> {
    m.select(Axis(0), rows)
}

/// Dense `a^k` by repeated multiplication; `k = 0` gives the identity.
pub fn matrix_power(a: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let n = a.nrows();
    let mut out = Array2::eye(n);
    for _ in 0..k {
        out = a.dot(&out);
    }
    out
}

pub fn frobenius_inner(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn frobenius_norm(a: ArrayView2<'_, f64>) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Replaces `m` with `(m + m^T) / 2`.
pub fn symmetrize_in_place(m: &mut Array2<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[[i, j]] + m[[j, i]]);
            m[[i, j]] = v;
            m[[j, i]] = v;
        }
    }
}

/// Stopping rule for [`power_iteration`].
#[derive(Debug, Clone, Copy)]
pub struct PowerIterationOptions {
    pub rel_tol: f64,
    pub max_iter: usize,
    pub seed: u64,
}

impl Default for PowerIterationOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iter: 1000,
            seed: DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct PowerIterationResult {
    /// Dominant eigenvalue, signed (Rayleigh quotient at the final iterate).
    pub eigenvalue: f64,
    /// Spectral radius estimate `|lambda|`.
    pub magnitude: f64,
    pub iterations: usize,
}

/// Power iteration for a symmetric linear operator given as a closure
/// `op(x, y)` writing `y = M x`.
///
/// Converges on the magnitude `||M x||` for unit `x`, which is well defined
/// even when `lambda` and `-lambda` are both dominant.
pub fn power_iteration<F>(
    dim: usize,
    mut op: F,
    opts: PowerIterationOptions,
) -> Result<PowerIterationResult>
where
    F: FnMut(&[f64], &mut [f64]),
{
    if dim == 0 {
        return Err(Error::shape("power iteration on an empty operator"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut x: Vec<f64> = (0..dim).map(|_| rng.random::<f64>() + 0.5).collect();
    normalize(&mut x);
    let mut y = vec![0.0; dim];
    let mut prev = f64::NAN;
    for it in 1..=opts.max_iter {
        op(&x, &mut y);
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let norm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite("power iteration".into()));
        }
        if norm == 0.0 {
            return Ok(PowerIterationResult {
                eigenvalue: 0.0,
                magnitude: 0.0,
                iterations: it,
            });
        }
        let converged = (norm - prev).abs() <= opts.rel_tol * norm;
        prev = norm;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / norm;
        }
        if converged {
            // Rayleigh quotient carries the sign; magnitude from the norm.
            let sign = if rayleigh < 0.0 { -1.0 } else { 1.0 };
            return Ok(PowerIterationResult {
                eigenvalue: sign * norm,
                magnitude: norm,
                iterations: it,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        estimate: prev,
    })
}

fn normalize(x: &mut [f64]) {
    let n = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if n > 0.0 {
        x.iter_mut().for_each(|v| *v /= n);
    }
}
