//! Finite-width GNNs: forward pass, exact Jacobians, empirical NTKs and
//! explicit gradient descent for the linear model. These are brute-force
//! references for the analytic kernels.
//!
//! Model with `L` layers and width `m` (scalar output):
//!
//! ```text
//! g_1 = A X W_1
//! g_l = sqrt(c_sigma / m) * A relu(g_{l-1}) W_l     (l = 2..L)
//! f   = g_L
//! ```
//!
//! `W_1` is `d x m` (`d x 1` when `L = 1`), hidden weights are `m x m` and
//! the last is `m x 1`.

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, DEFAULT_SEED};

/// Largest Jacobian (outputs x trainable parameters) built in memory.
pub const JACOBIAN_ENTRY_LIMIT: usize = 50_000_000;
/// Largest node count accepted by [`empirical_ntk`].
pub const MAX_NTK_NODES: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteGnnConfig {
    pub layers: usize,
    pub width: usize,
    pub c_sigma: f64,
    /// One flag per layer.
    pub trainable: Vec<bool>,
    pub seed: u64,
}

impl FiniteGnnConfig {
    /// Every layer trained, ReLU constant 2.
    pub fn new(layers: usize, width: usize) -> Self {
        Self {
            layers,
            width,
            c_sigma: crate::gntk::RELU_C_SIGMA,
            trainable: vec![true; layers],
            seed: DEFAULT_SEED,
        }
    }

    /// Two layers, `f = A relu(A X W_1) W_2 / sqrt(m)`, only `W_1` trained.
    pub fn two_layer_first_only(width: usize) -> Self {
        Self {
            layers: 2,
            width,
            c_sigma: 1.0,
            trainable: vec![true, false],
            seed: DEFAULT_SEED,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.width == 0 {
            return Err(Error::config(
                "network needs at least one layer of width >= 1",
            ));
        }
        if self.trainable.len() != self.layers {
            return Err(Error::config(format!(
                "trainable mask has {} entries for {} layers",
                self.trainable.len(),
                self.layers
            )));
        }
        if !(self.c_sigma > 0.0 && self.c_sigma.is_finite()) {
            return Err(Error::config("c_sigma must be positive"));
        }
        Ok(())
    }

    fn shapes(&self, d: usize) -> Vec<(usize, usize)> {
        let m = self.width;
        (0..self.layers)
            .map(|l| {
                let rows = if l == 0 { d } else { m };
                let cols = if l + 1 == self.layers { 1 } else { m };
                (rows, cols)
            })
            .collect()
    }

    fn scale(&self) -> f64 {
        (self.c_sigma / self.width as f64).sqrt()
    }

    /// Number of trainable scalars for input dimension `d`.
    pub fn trainable_parameters(&self, d: usize) -> usize {
        self.shapes(d)
            .iter()
            .zip(&self.trainable)
            .filter(|(_, &t)| t)
            .map(|((r, c), _)| r * c)
            .sum()
    }
}

/// Unit Gaussian weights for input dimension `d`.
pub fn init_weights(cfg: &FiniteGnnConfig, d: usize, seed: u64) -> Result<Vec<Array2<f64>>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(cfg
        .shapes(d)
        .into_iter()
        .map(|shape| Array2::from_shape_simple_fn(shape, || rng.sample(StandardNormal)))
        .collect())
}

fn check_model(
    cfg: &FiniteGnnConfig,
    weights: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Result<()> {
    cfg.validate()?;
    let n = linalg::check_square(a, "adjacency")?;
    if x.nrows() != n {
        return Err(Error::shape(format!(
            "features have {} rows, graph {n}",
            x.nrows()
        )));
    }
    let shapes = cfg.shapes(x.ncols());
    if weights.len() != shapes.len() {
        return Err(Error::shape(format!(
            "{} weight matrices for {} layers",
            weights.len(),
            shapes.len()
        )));
    }
    for (l, (w, &s)) in weights.iter().zip(&shapes).enumerate() {
        if w.dim() != s {
            return Err(Error::shape(format!(
                "layer {} weight is {:?}, expected {:?}",
                l + 1,
                w.dim(),
                s
            )));
        }
    }
    Ok(())
}

/// Forward values kept for the backward pass.
struct Trace {
    /// `A X` (layer 1) or `s * A relu(g)` (later layers): the left factor
    /// each weight multiplies.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations `g_l`.
    pre: Vec<Array2<f64>>,
}

fn forward_trace(
    cfg: &FiniteGnnConfig,
    weights: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Trace {
    let s = cfg.scale();
    let mut inputs = Vec::with_capacity(cfg.layers);
    let mut pre: Vec<Array2<f64>> = Vec::with_capacity(cfg.layers);
    for (l, w) in weights.iter().enumerate() {
        let input = if l == 0 {
            a.dot(&x)
        } else {
            let h = pre[l - 1].mapv(|v| v.max(0.0));
            a.dot(&h) * s
        };
        pre.push(input.dot(w));
        inputs.push(input);
    }
    Trace { inputs, pre }
}

/// Network outputs, `n x 1`.
pub fn finite_gnn_forward(
    cfg: &FiniteGnnConfig,
    weights: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    check_model(cfg, weights, x, a)?;
    let mut t = forward_trace(cfg, weights, x, a);
    Ok(t.pre.pop().expect("at least one layer"))
}

/// Rows: outputs. Columns: trainable weights, layer by layer, row-major.
pub fn jacobian(
    cfg: &FiniteGnnConfig,
    weights: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = a.nrows();
    let p = cfg.trainable_parameters(x.ncols());
    let required = n.saturating_mul(p);
    if required > JACOBIAN_ENTRY_LIMIT {
        return Err(Error::MemoryLimit {
            required,
            limit: JACOBIAN_ENTRY_LIMIT,
        });
    }
    check_model(cfg, weights, x, a)?;
    let trace = forward_trace(cfg, weights, x, a);
    let s = cfg.scale();
    let at = a.t();
    // relu'(g_l) masks for the hidden layers.
    let masks: Vec<Array2<f64>> = trace.pre[..cfg.layers - 1]
        .iter()
        .map(|g| g.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 }))
        .collect();

    let mut jac = Array2::zeros((n, p));
    jac.axis_iter_mut(Axis(0))
        .into_par_iter()
        .enumerate()
        .for_each(|(i, mut row)| {
            // delta = d f_i / d g_l, starting at the output.
            let mut delta = Array2::zeros((n, 1));
            delta[[i, 0]] = 1.0;
            let mut grads: Vec<Option<Array2<f64>>> = vec![None; cfg.layers];
            for l in (0..cfg.layers).rev() {
                if cfg.trainable[l] {
                    grads[l] = Some(trace.inputs[l].t().dot(&delta));
                }
                if l > 0 {
                    // g_l = s A relu(g_{l-1}) W_l
                    let mut back = at.dot(&delta.dot(&weights[l].t())) * s;
                    back *= &masks[l - 1];
                    delta = back;
                }
            }
            let mut offset = 0;
            for g in grads.into_iter().flatten() {
                for v in g.iter() {
                    row[offset] = *v;
                    offset += 1;
                }
            }
        });
    Ok(jac)
}

/// Central differences of the forward pass over trainable weights; a test
/// reference for [`jacobian`].
pub fn finite_difference_jacobian(
    cfg: &FiniteGnnConfig,
    weights: &[Array2<f64>],
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    step: f64,
) -> Result<Array2<f64>> {
    check_model(cfg, weights, x, a)?;
    let n = a.nrows();
    let mut columns = Vec::new();
    let mut w = weights.to_vec();
    for l in 0..cfg.layers {
        if !cfg.trainable[l] {
            continue;
        }
        for idx in 0..w[l].len() {
            let (r, c) = (idx / w[l].ncols(), idx % w[l].ncols());
            let orig = w[l][[r, c]];
            w[l][[r, c]] = orig + step;
            let up = finite_gnn_forward(cfg, &w, x, a)?;
            w[l][[r, c]] = orig - step;
            let down = finite_gnn_forward(cfg, &w, x, a)?;
            w[l][[r, c]] = orig;
            columns.push((up - down) / (2.0 * step));
        }
    }
    let mut jac = Array2::zeros((n, columns.len()));
    for (k, col) in columns.iter().enumerate() {
        jac.column_mut(k).assign(&col.column(0));
    }
    Ok(jac)
}

/// Jacobian Gram matrix at initialization, averaged over `num_seeds` weight
/// draws (seeds `cfg.seed, cfg.seed + 1, ...`).
pub fn empirical_ntk(
    cfg: &FiniteGnnConfig,
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    num_seeds: usize,
) -> Result<Array2<f64>> {
    cfg.validate()?;
    let n = linalg::check_square(a, "adjacency")?;
    if n > MAX_NTK_NODES {
        return Err(Error::config(format!(
            "empirical NTK limited to {MAX_NTK_NODES} nodes, got {n}"
        )));
    }
    if num_seeds == 0 {
        return Err(Error::config("need at least one weight seed"));
    }
    let grams: Vec<Array2<f64>> = (0..num_seeds as u64)
        .into_par_iter()
        .map(|k| {
            let w = init_weights(cfg, x.ncols(), cfg.seed.wrapping_add(k))?;
            let j = jacobian(cfg, &w, x, a)?;
            Ok(j.dot(&j.t()))
        })
        .collect::<Result<_>>()?;
    let mut mean = Array2::zeros((n, n));
    for g in &grams {
        mean += g;
    }
    mean /= num_seeds as f64;
    linalg::symmetrize_in_place(&mut mean);
    Ok(mean)
}

/// Residuals after a gradient step: `R` on training rows, `R'` elsewhere.
#[derive(Debug, Clone)]
pub struct ResidualSnapshot {
    pub r: Array2<f64>,
    pub r_prime: Array2<f64>,
}

/// Full-batch gradient descent on `F = A^l X W` with loss
/// `0.5 * ||Y - F_X||^2` and `W_0 = 0`. Returns `steps + 1` snapshots,
/// starting with the initial residuals.
pub fn train_linear_gnn_gd(
    a: ArrayView2<'_, f64>,
    ell: usize,
    x: ArrayView2<'_, f64>,
    train: &[usize],
    y: ArrayView2<'_, f64>,
    eta: f64,
    steps: usize,
) -> Result<Vec<ResidualSnapshot>> {
    let n = linalg::check_square(a, "adjacency")?;
    if x.nrows() != n {
        return Err(Error::shape(format!(
            "features have {} rows, graph {n}",
            x.nrows()
        )));
    }
    if y.nrows() != train.len() {
        return Err(Error::shape("one label row per training node required"));
    }
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::config(format!(
            "step size must be finite and >= 0, got {eta}"
        )));
    }
    let mut is_train = vec![false; n];
    for &i in train {
        if i >= n {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        is_train[i] = true;
    }
    let rest: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();

    let mut features = x.to_owned();
    for _ in 0..ell {
        features = a.dot(&features);
    }
    let features_train = features.select(Axis(0), train);
    let mut w = Array2::<f64>::zeros((x.ncols(), y.ncols()));

    let snapshot = |w: &Array2<f64>| -> ResidualSnapshot {
        let f = features.dot(w);
        let mut r = y.to_owned();
        Zip::from(&mut r)
            .and(&f.select(Axis(0), train))
            .for_each(|r, &fx| *r -= fx);
        ResidualSnapshot {
            r,
            r_prime: -f.select(Axis(0), &rest),
        }
    };

    let mut out = Vec::with_capacity(steps + 1);
    out.push(snapshot(&w));
    for step in 1..=steps {
        // grad = -(A^l X)_X^T R
        let grad = features_train.t().dot(&out.last().expect("non-empty").r);
        w.scaled_add(eta, &grad);
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        out.push(snapshot(&w));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn path4() -> Array2<f64> {
        crate::graph::SparseGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], true)
            .unwrap()
            .normalize()
            .unwrap()
            .to_dense()
    }

    #[test]
    fn zero_weights_zero_output() {
        let cfg = FiniteGnnConfig::new(3, 5);
        let a = path4();
        let x = Array2::<f64>::eye(4);
        let w: Vec<_> = init_weights(&cfg, 4, 1)
            .unwrap()
            .iter()
            .map(|w| w * 0.0)
            .collect();
        let f = finite_gnn_forward(&cfg, &w, x.view(), a.view()).unwrap();
        assert!(f.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn identity_graph_single_layer() {
        let cfg = FiniteGnnConfig::new(1, 7);
        let x = array![[1.0, 2.0], [0.5, -1.0], [0.0, 3.0]];
        let w = init_weights(&cfg, 2, 3).unwrap();
        let f = finite_gnn_forward(&cfg, &w, x.view(), Array2::<f64>::eye(3).view()).unwrap();
        assert_abs_diff_eq!(f, x.dot(&w[0]), epsilon = 1e-15);
    }

    #[test]
    fn golden_forward_on_path() {
        let cfg = FiniteGnnConfig {
            seed: 11,
            ..FiniteGnnConfig::new(2, 4)
        };
        let a = path4();
        let w = init_weights(&cfg, 4, cfg.seed).unwrap();
        let f = finite_gnn_forward(&cfg, &w, Array2::<f64>::eye(4).view(), a.view()).unwrap();
        let golden = GOLDEN_PATH4;
        for (v, g) in f.iter().zip(golden) {
            assert_abs_diff_eq!(*v, g, epsilon = 1e-12);
        }
    }

    // Frozen from the first run with seed 11; guards against silent changes to
    // initialization order or scaling.
    const GOLDEN_PATH4: [f64; 4] = [
        -0.15430607516318498,
        -0.3334087788110024,
        -0.7490489534863575,
        -0.7603562716266676,
    ];

    #[test]
    fn single_layer_ntk_is_exact() {
        let a = path4();
        let x = array![[1.0, 0.0], [0.5, 1.0], [0.0, -1.0], [2.0, 0.5]];
        let ntk = empirical_ntk(&FiniteGnnConfig::new(1, 3), x.view(), a.view(), 2).unwrap();
        let ax = a.dot(&x);
        assert_abs_diff_eq!(ntk, ax.dot(&ax.t()), epsilon = 1e-12);
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        let a = path4();
        let x = array![[1.0, 0.2], [0.3, 1.0], [-0.4, 0.8], [0.6, -0.5]];
        for cfg in [
            FiniteGnnConfig::new(2, 3),
            FiniteGnnConfig::new(3, 4),
            FiniteGnnConfig::two_layer_first_only(5),
        ] {
            let w = init_weights(&cfg, 2, 5).unwrap();
            let exact = jacobian(&cfg, &w, x.view(), a.view()).unwrap();
            let fd = finite_difference_jacobian(&cfg, &w, x.view(), a.view(), 1e-4).unwrap();
            let err = linalg::frobenius_norm((&exact - &fd).view())
                / linalg::frobenius_norm(exact.view());
            assert!(err < 1e-3, "relative error {err} for {cfg:?}");
        }
    }

    #[test]
    fn memory_limit_reported() {
        let cfg = FiniteGnnConfig::new(3, 8192);
        let a = Array2::<f64>::eye(4);
        assert!(matches!(
            jacobian(&cfg, &[], a.view(), a.view()),
            Err(Error::MemoryLimit { .. })
        ));
    }

    #[test]
    fn gd_zero_step_is_constant() {
        let a = path4();
        let y = array![[1.0], [-1.0]];
        let traj = train_linear_gnn_gd(
            a.view(),
            1,
            Array2::<f64>::eye(4).view(),
            &[0, 3],
            y.view(),
            0.0,
            5,
        )
        .unwrap();
        assert_eq!(traj.len(), 6);
        for s in &traj {
            assert_eq!(s.r, y);
            assert!(s.r_prime.iter().all(|&v| v == 0.0));
        }
    }
}
