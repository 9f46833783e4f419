//! Kernel alignment, homophily and the label-propagation generalization
//! bound.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AlignOptions {
    /// Replace each matrix `K` by `H K H` with `H = I - 11^T / n` first.
    pub center: bool,
}

/// `H K H` for `H = I - 11^T / n`.
pub fn center(k: ArrayView2<'_, f64>) -> Array2<f64> {
    let n = k.nrows().max(1) as f64;
    let row_means = k.mean_axis(Axis(1)).expect("non-empty");
    let col_means = k.mean_axis(Axis(0)).expect("non-empty");
    let grand = row_means.sum() / n;
    Array2::from_shape_fn(k.raw_dim(), |(i, j)| {
        k[[i, j]] - row_means[i] - col_means[j] + grand
    })
}

/// `<K1, K2>_F / (|K1|_F |K2|_F)`.
pub fn alignment(k1: ArrayView2<'_, f64>, k2: ArrayView2<'_, f64>) -> Result<f64> {
    alignment_with(k1, k2, AlignOptions::default())
}

pub fn alignment_with(
    k1: ArrayView2<'_, f64>,
    k2: ArrayView2<'_, f64>,
    opts: AlignOptions,
) -> Result<f64> {
    if k1.dim() != k2.dim() {
        return Err(Error::shape(format!("{:?} vs {:?}", k1.dim(), k2.dim())));
    }
    if k1.is_empty() {
        return Err(Error::ZeroNorm);
    }
    let (c1, c2);
    let (k1, k2) = if opts.center {
        c1 = center(k1);
        c2 = center(k2);
        (c1.view(), c2.view())
    } else {
        (k1, k2)
    };
    let n1 = linalg::frobenius_norm(k1);
    let n2 = linalg::frobenius_norm(k2);
    if n1 == 0.0 || n2 == 0.0 {
        return Err(Error::ZeroNorm);
    }
    // Normalize first so huge entries cannot overflow the inner product.
    let inner: f64 = k1
        .iter()
        .zip(k2.iter())
        .map(|(a, b)| (a / n1) * (b / n2))
        .sum();
    Ok(inner.clamp(-1.0, 1.0))
}

/// `Y Y^T` for one-hot `Y`: 1 where two nodes share a label.
pub fn optimal_kernel(labels: &[i64], c: usize) -> Result<Array2<f64>> {
    if let Some((i, &l)) = labels
        .iter()
        .enumerate()
        .find(|(_, &l)| l < 0 || l as usize >= c)
    {
        return Err(Error::Inconsistent(format!(
            "node {i} has label {l}, need a known label below {c}"
        )));
    }
    let n = labels.len();
    Ok(Array2::from_shape_fn((n, n), |(i, j)| {
        if labels[i] == labels[j] {
            1.0
        } else {
            0.0
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    /// `A(Theta, A)`
    pub kernel_graph: f64,
    /// `A(Theta, Theta*)`
    pub kernel_target: f64,
    /// `A(A, Theta*)`
    pub homophily: f64,
    pub centered: bool,
}

pub fn alignment_report(
    theta: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    labels: &[i64],
    opts: AlignOptions,
) -> Result<AlignmentReport> {
    let c = labels.iter().copied().max().unwrap_or(-1).max(-1) + 1;
    let target = optimal_kernel(labels, c as usize)?;
    Ok(AlignmentReport {
        kernel_graph: alignment_with(theta, a, opts)?,
        kernel_target: alignment_with(theta, target.view(), opts)?,
        homophily: alignment_with(a, target.view(), opts)?,
        centered: opts.center,
    })
}

/// Homophily `A(A, Theta*)` of a graph restricted to labelled nodes.
pub fn homophily(a: ArrayView2<'_, f64>, labels: &[i64]) -> Result<f64> {
    let c = labels.iter().copied().max().unwrap_or(-1) + 1;
    alignment(a, optimal_kernel(labels, c.max(0) as usize)?.view())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundConfig {
    pub alpha: f64,
    pub delta: f64,
}

impl Default for BoundConfig {
    fn default() -> Self {
        Self {
            alpha: 0.9,
            delta: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub bound: f64,
    /// `sqrt(Y^T Theta^{-1} Y * Tr(Theta)) / n_l`
    pub complexity_term: f64,
    /// `sqrt(ln(1/delta) / n_l)`
    pub confidence_term: f64,
    /// `Y^T Theta^{-1} Y = |Y|^2 - alpha <Y Y^T, A>`, summed over columns.
    pub quadratic: f64,
    /// `Tr((I - alpha A)^{-1})`
    pub trace: f64,
    /// `A(A, Y Y^T)`; `None` when `A` is zero.
    pub homophily: Option<f64>,
    /// `alpha |Y Y^T|_F |A|_F`, so `quadratic = |Y|^2 - coefficient * homophily`.
    pub homophily_coefficient: f64,
    pub spectral_radius: f64,
}

/// Exact bound `sqrt(Y^T Theta^{-1} Y Tr(Theta)) / n_l + sqrt(ln(1/delta) / n_l)`
/// for the kernel `Theta = (I - alpha A)^{-1}` on the training subgraph.
pub fn generalization_bound(
    a_train: ArrayView2<'_, f64>,
    y_train: ArrayView2<'_, f64>,
    cfg: &BoundConfig,
) -> Result<BoundReport> {
    let n = linalg::check_symmetric(a_train, 1e-8, "training adjacency")?;
    if n == 0 {
        return Err(Error::EmptyGraph);
    }
    if y_train.nrows() != n {
        return Err(Error::shape(format!(
            "{} label rows for {n} nodes",
            y_train.nrows()
        )));
    }
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1), got {}",
            cfg.alpha
        )));
    }
    if !(cfg.delta > 0.0 && cfg.delta <= 1.0) {
        return Err(Error::config(format!(
            "delta must lie in (0, 1], got {}",
            cfg.delta
        )));
    }
    let eig = linalg::symmetric_eigenvalues(a_train);
    let radius = eig.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if cfg.alpha * radius >= 1.0 {
        return Err(Error::config(format!(
            "alpha * spectral radius = {} must stay below 1",
            cfg.alpha * radius
        )));
    }
    let trace: f64 = eig.iter().map(|l| 1.0 / (1.0 - cfg.alpha * l)).sum();

    let target = y_train.dot(&y_train.t());
    let y_sq: f64 = y_train.iter().map(|v| v * v).sum();
    let inner = linalg::frobenius_inner(target.view(), a_train);
    let quadratic = y_sq - cfg.alpha * inner;
    let a_norm = linalg::frobenius_norm(a_train);
    let t_norm = linalg::frobenius_norm(target.view());
    let homophily = if a_norm > 0.0 && t_norm > 0.0 {
        Some(alignment(a_train, target.view())?)
    } else {
        None
    };

    let nl = n as f64;
    let complexity_term = (quadratic.max(0.0) * trace).sqrt() / nl;
    let confidence_term = ((1.0 / cfg.delta).ln() / nl).sqrt();
    Ok(BoundReport {
        bound: complexity_term + confidence_term,
        complexity_term,
        confidence_term,
        quadratic,
        trace,
        homophily,
        homophily_coefficient: cfg.alpha * t_norm * a_norm,
        spectral_radius: radius,
    })
}

/// Ranks with ties given their average (1-based) rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation; `None` if lengths differ, fewer than two
/// points, or either side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let mean = (x.len() as f64 + 1.0) / 2.0;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mean) * (b - mean);
        sxx += (a - mean) * (a - mean);
        syy += (b - mean) * (b - mean);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}
