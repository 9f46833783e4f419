//! Feature kernels and the dense kernel-regression solver.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_SEED};

/// Eigenvalue threshold below which a training block counts as singular.
pub const SINGULAR_TOL: f64 = 1e-10;

/// Points used when estimating the default Gaussian bandwidth.
pub const BANDWIDTH_SUBSAMPLE: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `<x, x'>`
    Linear,
    /// `exp(-|x - x'|^2 / (2 sigma^2))`
    Gaussian { sigma: f64 },
    /// `tanh(scale <x, x'> + offset)`
    Sigmoid { scale: f64, offset: f64 },
}

impl KernelSpec {
    /// Sigmoid kernel with scale `1/d` and zero offset.
    pub fn sigmoid_default(d: usize) -> Self {
        KernelSpec::Sigmoid {
            scale: 1.0 / d.max(1) as f64,
            offset: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(
                Error::config(format!("gaussian sigma must be positive, got {sigma}")),
            ),
            KernelSpec::Sigmoid { scale, offset } if !(scale.is_finite() && offset.is_finite()) => {
                Err(Error::config("sigmoid scale and offset must be finite"))
            }
            _ => Ok(()),
        }
    }
}

/// Dense symmetric `n x n` similarity matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    values: Array2<f64>,
}

impl KernelMatrix {
    /// Wraps `values`, requiring symmetry within `1e-10`.
    pub fn new(values: Array2<f64>) -> Result<Self> {
        linalg::check_symmetric(values.view(), 1e-10, "kernel matrix")?;
        Ok(Self { values })
    }

    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.values.view()
    }

    pub fn into_inner(self) -> Array2<f64> {
        self.values
    }
}

fn gram(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if x.ncols() == 0 {
        return Err(Error::shape("kernel input has zero feature columns"));
    }
    let mut g = x.dot(&x.t());
    linalg::symmetrize_in_place(&mut g);
    Ok(g)
}

/// Pairwise squared Euclidean distances, computed from the Gram matrix and
/// clamped at zero. The diagonal is exactly zero.
pub fn squared_distances(x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let g = gram(x)?;
    let diag = g.diag().to_owned();
    let mut d2 = g;
    d2.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            for (j, v) in row.iter_mut().enumerate() {
                *v = if i == j {
                    0.0
                } else {
                    (diag[i] + diag[j] - 2.0 * *v).max(0.0)
                };
            }
        });
    Ok(d2)
}

/// Gaussian kernel from precomputed squared distances; lets a bandwidth
/// grid reuse one distance matrix.
pub fn gaussian_from_squared_distances(
    d2: ArrayView2<'_, f64>,
    sigma: f64,
) -> Result<KernelMatrix> {
    KernelSpec::Gaussian { sigma }.validate()?;
    linalg::check_square(d2, "distance matrix")?;
    let scale = -1.0 / (2.0 * sigma * sigma);
    let mut k = d2.to_owned();
    k.par_mapv_inplace(|v| (scale * v).exp());
    for i in 0..k.nrows() {
        k[[i, i]] = 1.0;
    }
    linalg::symmetrize_in_place(&mut k);
    Ok(KernelMatrix { values: k })
}

pub fn kernel_matrix(spec: KernelSpec, x: ArrayView2<'_, f64>) -> Result<KernelMatrix> {
    spec.validate()?;
    match spec {
        KernelSpec::Linear => Ok(KernelMatrix { values: gram(x)? }),
        KernelSpec::Gaussian { sigma } => {
            gaussian_from_squared_distances(squared_distances(x)?.view(), sigma)
        }
        KernelSpec::Sigmoid { scale, offset } => {
            let mut g = gram(x)?;
            g.par_mapv_inplace(|v| (scale * v + offset).tanh());
            Ok(KernelMatrix { values: g })
        }
    }
}

/// Median pairwise distance among up to [`BANDWIDTH_SUBSAMPLE`] rows drawn
/// with a fixed seed.
pub fn median_bandwidth(x: ArrayView2<'_, f64>, seed: u64) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::shape("median bandwidth needs at least two points"));
    }
    let rows: Vec<usize> = if n > BANDWIDTH_SUBSAMPLE {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = sample(&mut rng, n, BANDWIDTH_SUBSAMPLE).into_vec();
        r.sort_unstable();
        r
    } else {
        (0..n).collect()
    };
    let sub = linalg::gather_rows(x, &rows);
    let d2 = squared_distances(sub.view())?;
    let m = rows.len();
    let mut dists: Vec<f64> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            dists.push(d2[[i, j]].sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    let k = dists.len();
    let median = if k % 2 == 1 {
        dists[k / 2]
    } else {
        0.5 * (dists[k / 2 - 1] + dists[k / 2])
    };
    if median <= 0.0 {
        return Err(Error::config("median pairwise distance is zero"));
    }
    Ok(median)
}

pub fn default_median_bandwidth(x: ArrayView2<'_, f64>) -> Result<f64> {
    median_bandwidth(x, DEFAULT_SEED)
}

#[derive(Debug, Clone)]
pub struct RegressionFit {
    /// Node indices the rows of `predictions` refer to.
    pub nodes: Vec<usize>,
    pub predictions: Array2<f64>,
    /// Ridge actually added to the training block, if any.
    pub ridge: Option<f64>,
    pub min_train_eigenvalue: f64,
}

/// `K[targets, train] (K[train, train] + ridge I)^{-1} Y`.
///
/// Without a ridge the training block must have smallest eigenvalue above
/// [`SINGULAR_TOL`].
pub fn kernel_regression_at(
    k: ArrayView2<'_, f64>,
    train: &[usize],
    targets: &[usize],
    y: ArrayView2<'_, f64>,
    ridge: Option<f64>,
) -> Result<RegressionFit> {
    let n = linalg::check_square(k, "kernel matrix")?;
    if y.nrows() != train.len() {
        return Err(Error::shape(format!(
            "{} target rows for {} training nodes",
            y.nrows(),
            train.len()
        )));
    }
    if let Some(&i) = train.iter().chain(targets).find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    if let Some(r) = ridge {
        if !(r >= 0.0 && r.is_finite()) {
            return Err(Error::config(format!(
                "ridge must be non-negative, got {r}"
            )));
        }
    }
    let mut kxx = linalg::submatrix(k, train, train);
    let min_train_eigenvalue = linalg::min_eigenvalue(kxx.view());
    match ridge {
        Some(r) => kxx.diag_mut().mapv_inplace(|v| v + r),
        None if min_train_eigenvalue.is_nan() || min_train_eigenvalue <= SINGULAR_TOL => {
            return Err(Error::Singular {
                min_eigenvalue: min_train_eigenvalue,
            })
        }
        None => {}
    }
    let alpha = linalg::cholesky_solve(kxx.view(), y)?;
    let kzx = linalg::submatrix(k, targets, train);
    Ok(RegressionFit {
        nodes: targets.to_vec(),
        predictions: kzx.dot(&alpha),
        ridge,
        min_train_eigenvalue,
    })
}

/// Kernel regression predictions for every node outside `train`, ascending.
pub fn kernel_regression(
    k: ArrayView2<'_, f64>,
    train: &[usize],
    y: ArrayView2<'_, f64>,
    ridge: Option<f64>,
) -> Result<RegressionFit> {
    let n = linalg::check_square(k, "kernel matrix")?;
    let mut is_train = vec![false; n];
    for &i in train {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        is_train[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();
    kernel_regression_at(k, train, &rest, y, ridge)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn gaussian_examples() {
        let x = array![[0.0], [1.0]];
        let k = kernel_matrix(KernelSpec::Gaussian { sigma: 1.0 }, x.view()).unwrap();
        assert_eq!(k.values()[[0, 0]], 1.0);
        assert_eq!(k.values()[[1, 1]], 1.0);
        assert_abs_diff_eq!(k.values()[[0, 1]], (-0.5f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(k.values()[[0, 1]], 0.60653, epsilon = 1e-5);
    }

    #[test]
    fn linear_on_identity() {
        let k = kernel_matrix(KernelSpec::Linear, Array2::<f64>::eye(3).view()).unwrap();
        assert_eq!(k.values(), &Array2::<f64>::eye(3));
    }

    #[test]
    fn sigmoid_default_scale() {
        let x = array![[1.0, 1.0]];
        let k = kernel_matrix(KernelSpec::sigmoid_default(2), x.view()).unwrap();
        assert_abs_diff_eq!(k.values()[[0, 0]], 1f64.tanh(), epsilon = 1e-15);
    }

    #[test]
    fn zero_width_features_rejected() {
        let x = Array2::<f64>::zeros((3, 0));
        assert!(kernel_matrix(KernelSpec::Linear, x.view()).is_err());
        assert!(kernel_matrix(
            KernelSpec::Gaussian { sigma: 0.0 },
            Array2::<f64>::eye(2).view()
        )
        .is_err());
    }

    #[test]
    fn identity_kernel_predicts_zero() {
        let k = Array2::<f64>::eye(4);
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let fit = kernel_regression(k.view(), &[0, 2], y.view(), None).unwrap();
        assert_eq!(fit.nodes, vec![1, 3]);
        assert!(fit.predictions.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn singular_block_needs_ridge() {
        let k = Array2::<f64>::ones((3, 3));
        let y = array![[1.0], [0.0]];
        assert!(matches!(
            kernel_regression(k.view(), &[0, 1], y.view(), None),
            Err(Error::Singular { .. })
        ));
        let fit = kernel_regression(k.view(), &[0, 1], y.view(), Some(1e-3)).unwrap();
        assert_eq!(fit.ridge, Some(1e-3));
    }

    #[test]
    fn interpolates_training_labels() {
        let x = array![[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [1.0, 1.0]];
        let k = kernel_matrix(KernelSpec::Gaussian { sigma: 1.0 }, x.view()).unwrap();
        let y = array![[1.0], [-2.0], [0.5]];
        let fit = kernel_regression_at(k.view(), &[0, 1, 2], &[0, 1, 2], y.view(), None).unwrap();
        assert_abs_diff_eq!(fit.predictions, y, epsilon = 1e-10);
    }

    #[test]
    fn median_bandwidth_small() {
        // Distances 1, 2, 3 on a line.
        let x = array![[0.0], [1.0], [3.0]];
        assert_abs_diff_eq!(median_bandwidth(x.view(), 0).unwrap(), 2.0, epsilon = 1e-12);
    }
}
