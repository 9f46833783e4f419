//! Node-level graph neural tangent kernels of infinitely wide ReLU GNNs.
//!
//! The network is `g_1 = A X W_1`, `g_l = sqrt(c_sigma / m) A relu(g_{l-1}) W_l`
//! with scalar output `g_L`. Per layer the kernel is updated by a
//! transformation step (arc-cosine expectations) and a propagation step
//! (`M -> A M A`).

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Variance-preserving ReLU constant.
pub const RELU_C_SIGMA: f64 = 2.0;
/// Tolerance for the PSD check on `A` in spectral input mode.
pub const PSD_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluExpectation {
    /// `E[relu(u) relu(v)]`
    pub t: f64,
    /// `E[relu'(u) relu'(v)]`
    pub t_dot: f64,
    /// Set when a variance is zero (`t = 0`, `t_dot = 1/2` by convention) or
    /// the input is invalid (both NaN).
    pub degenerate: bool,
}

/// Arc-cosine expectations for `(u, v) ~ N(0, [[l11, l12], [l12, l22]])`.
pub fn relu_expectations(l11: f64, l12: f64, l22: f64) -> ReluExpectation {
    if !(l11 >= 0.0 && l22 >= 0.0 && l12.is_finite() && l11.is_finite() && l22.is_finite()) {
        return ReluExpectation {
            t: f64::NAN,
            t_dot: f64::NAN,
            degenerate: true,
        };
    }
    let scale = (l11 * l22).sqrt();
    if scale == 0.0 {
        return ReluExpectation {
            t: 0.0,
            t_dot: 0.5,
            degenerate: true,
        };
    }
    let cos = (l12 / scale).clamp(-1.0, 1.0);
    let theta = cos.acos();
    ReluExpectation {
        t: scale * (theta.sin() + (PI - theta) * cos) / (2.0 * PI),
        t_dot: (PI - theta) / (2.0 * PI),
        degenerate: false,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GntkOptions {
    pub c_sigma: f64,
    /// Which layers' weights are trained; `None` trains all of them.
    pub trainable: Option<Vec<bool>>,
}

impl Default for GntkOptions {
    fn default() -> Self {
        Self {
            c_sigma: RELU_C_SIGMA,
            trainable: None,
        }
    }
}

impl GntkOptions {
    /// Two layers, unit `c_sigma`, only the first layer trained: the setting
    /// whose kernel is `A (A^2 .* S) A`.
    pub fn first_layer_only() -> Self {
        Self {
            c_sigma: 1.0,
            trainable: Some(vec![true, false]),
        }
    }

    fn is_trainable(&self, layer: usize) -> bool {
        self.trainable.as_ref().map_or(true, |m| m[layer])
    }

    fn validate(&self, layers: usize) -> Result<()> {
        if layers == 0 {
            return Err(Error::config("GNTK needs at least one layer"));
        }
        if !(self.c_sigma > 0.0 && self.c_sigma.is_finite()) {
            return Err(Error::config(format!(
                "c_sigma must be positive, got {}",
                self.c_sigma
            )));
        }
        if let Some(m) = &self.trainable {
            if m.len() != layers {
                return Err(Error::config(format!(
                    "trainable mask has {} entries for {layers} layers",
                    m.len()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct GntkLayer {
    /// `Sigma`: pre-activation covariance after propagation.
    pub sigma: Array2<f64>,
    /// `Sigma bar`: covariance before propagation.
    pub sigma_bar: Array2<f64>,
    /// `Sigma dot`: derivative covariance; absent for the input layer.
    pub sigma_dot: Option<Array2<f64>>,
    pub theta: Array2<f64>,
    pub theta_bar: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct GntkStack {
    pub layers: Vec<GntkLayer>,
    /// Entries where a zero variance triggered the degenerate convention.
    pub degenerate_entries: usize,
}

impl GntkStack {
    pub fn theta(&self) -> &Array2<f64> {
        &self.layers.last().expect("at least one layer").theta
    }
}

fn sandwich(a: ArrayView2<'_, f64>, m: &Array2<f64>) -> Array2<f64> {
    let mut out = a.dot(m).dot(&a);
    linalg::symmetrize_in_place(&mut out);
    out
}

/// Entrywise `(c T(sigma), c T'(sigma))` plus the degenerate count.
fn transform(sigma: &Array2<f64>, c_sigma: f64) -> (Array2<f64>, Array2<f64>, usize) {
    let n = sigma.nrows();
    let diag: Array1<f64> = sigma.diag().to_owned();
    let mut t = Array2::zeros((n, n));
    let mut t_dot = Array2::zeros((n, n));
    let degenerate: usize = t
        .axis_iter_mut(Axis(0))
        .into_par_iter()
        .zip(t_dot.axis_iter_mut(Axis(0)))
        .enumerate()
        .map(|(i, (mut t_row, mut d_row))| {
            let mut count = 0;
            for j in 0..n {
                let e = relu_expectations(diag[i], sigma[[i, j]], diag[j]);
                count += usize::from(e.degenerate);
                t_row[j] = c_sigma * e.t;
                d_row[j] = c_sigma * e.t_dot;
            }
            count
        })
        .sum();
    (t, t_dot, degenerate)
}

fn check_inputs(x: ArrayView2<'_, f64>, a: ArrayView2<'_, f64>) -> Result<usize> {
    let n = linalg::check_symmetric(a, 1e-8, "adjacency")?;
    if x.nrows() != n {
        return Err(Error::shape(format!(
            "features have {} rows, adjacency is {n}x{n}",
            x.nrows()
        )));
    }
    Ok(n)
}

/// Full per-layer recurrence.
pub fn gntk_stack(
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    layers: usize,
    opts: &GntkOptions,
) -> Result<GntkStack> {
    opts.validate(layers)?;
    check_inputs(x, a)?;
    let mut gram = x.dot(&x.t());
    linalg::symmetrize_in_place(&mut gram);
    let theta_bar = if opts.is_trainable(0) {
        gram.clone()
    } else {
        Array2::zeros(gram.raw_dim())
    };
    let mut out = vec![GntkLayer {
        sigma: sandwich(a, &gram),
        theta: sandwich(a, &theta_bar),
        sigma_bar: gram,
        sigma_dot: None,
        theta_bar,
    }];
    let mut degenerate_entries = 0;
    for layer in 1..layers {
        let prev = out.last().expect("non-empty");
        let (sigma_bar, sigma_dot, deg) = transform(&prev.sigma, opts.c_sigma);
        degenerate_entries += deg;
        let mut theta_bar = &prev.theta * &sigma_dot;
        if opts.is_trainable(layer) {
            theta_bar += &sigma_bar;
        }
        out.push(GntkLayer {
            sigma: sandwich(a, &sigma_bar),
            theta: sandwich(a, &theta_bar),
            sigma_bar,
            sigma_dot: Some(sigma_dot),
            theta_bar,
        });
    }
    if out.iter().any(|l| l.theta.iter().any(|v| !v.is_finite())) {
        return Err(Error::NonFinite("GNTK recurrence".into()));
    }
    Ok(GntkStack {
        layers: out,
        degenerate_entries,
    })
}

/// `Theta^(L)` with default options (`c_sigma = 2`, every layer trained).
pub fn gntk_compute(
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    layers: usize,
) -> Result<Array2<f64>> {
    gntk_compute_with(x, a, layers, &GntkOptions::default())
}

pub fn gntk_compute_with(
    x: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    layers: usize,
    opts: &GntkOptions,
) -> Result<Array2<f64>> {
    let mut stack = gntk_stack(x, a, layers, opts)?;
    Ok(stack.layers.pop().expect("non-empty").theta)
}

/// How node features enter the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputMode {
    /// `X = I`
    Onehot,
    /// `X X^T = A`; requires PSD `A`.
    Spectral,
}

fn check_psd(a: ArrayView2<'_, f64>) -> Result<()> {
    let min = linalg::min_eigenvalue(a);
    if min < -PSD_TOL {
        return Err(Error::NotPsd {
            min_eigenvalue: min,
        });
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct ClosedForm {
    pub theta: Array2<f64>,
    /// Pairs with a zero-norm row; their angle term uses the value 1/2.
    pub degenerate_entries: usize,
}

/// Two-layer kernel `A (G .* S) A` with `G = A^2` (onehot) or `A^3`
/// (spectral) and `S_ij = (pi - arccos(G_ij / sqrt(G_ii G_jj))) / (2 pi)`.
pub fn two_layer_gntk(a: ArrayView2<'_, f64>, mode: InputMode) -> Result<ClosedForm> {
    linalg::check_symmetric(a, 1e-8, "adjacency")?;
    let a2 = a.dot(&a);
    let mut g = match mode {
        InputMode::Onehot => a2,
        InputMode::Spectral => {
            check_psd(a)?;
            a2.dot(&a)
        }
    };
    linalg::symmetrize_in_place(&mut g);
    let diag: Array1<f64> = g.diag().to_owned();
    let mut degenerate_entries = 0;
    let mut weighted = g.clone();
    Zip::indexed(&mut weighted).for_each(|(i, j), v| {
        // The angle term equals the ReLU derivative expectation; sharing the
        // expression keeps the arccos near cos = 1 bit-identical.
        let e = relu_expectations(diag[i].max(0.0), *v, diag[j].max(0.0));
        degenerate_entries += usize::from(e.degenerate);
        *v *= e.t_dot;
    });
    Ok(ClosedForm {
        theta: sandwich(a, &weighted),
        degenerate_entries,
    })
}

/// `A^l (I + c 11^T) A^l`.
pub fn deep_decoupled_gntk(a: ArrayView2<'_, f64>, ell: usize, c: f64) -> Result<Array2<f64>> {
    linalg::check_symmetric(a, 1e-8, "adjacency")?;
    if ell == 0 {
        return Err(Error::config("decoupled GNTK needs ell >= 1"));
    }
    if !(c >= 0.0 && c.is_finite()) {
        return Err(Error::config(format!("c must be non-negative, got {c}")));
    }
    let (base, v) = decoupled_parts(a, ell);
    let mut out = base;
    Zip::indexed(&mut out).for_each(|(i, j), o| *o += c * v[i] * v[j]);
    linalg::symmetrize_in_place(&mut out);
    Ok(out)
}

/// `(A^{2l}, A^l 1)`.
fn decoupled_parts(a: ArrayView2<'_, f64>, ell: usize) -> (Array2<f64>, Array1<f64>) {
    let p = linalg::matrix_power(a, ell);
    let v = p.sum_axis(Axis(1));
    let mut base = p.dot(&p);
    linalg::symmetrize_in_place(&mut base);
    (base, v)
}

/// `A^{2l}` (onehot) or `A^{2l+1}` (spectral).
pub fn linear_gnn_gntk(a: ArrayView2<'_, f64>, ell: usize, mode: InputMode) -> Result<Array2<f64>> {
    linalg::check_symmetric(a, 1e-8, "adjacency")?;
    let power = match mode {
        InputMode::Onehot => 2 * ell,
        InputMode::Spectral => {
            check_psd(a)?;
            2 * ell + 1
        }
    };
    let mut out = linalg::matrix_power(a, power);
    linalg::symmetrize_in_place(&mut out);
    Ok(out)
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DecoupledFit {
    pub scale: f64,
    pub c: f64,
    /// Relative Frobenius residual of the fit.
    pub residual: f64,
}

/// Least-squares fit of `theta ~ scale * A^l (I + c 11^T) A^l`.
pub fn fit_decoupled_constant(
    theta: ArrayView2<'_, f64>,
    a: ArrayView2<'_, f64>,
    ell: usize,
) -> Result<DecoupledFit> {
    if theta.dim() != a.dim() {
        return Err(Error::shape("kernel and adjacency differ in shape"));
    }
    linalg::check_symmetric(a, 1e-8, "adjacency")?;
    if ell == 0 {
        return Err(Error::config("decoupled GNTK needs ell >= 1"));
    }
    let (base, v) = decoupled_parts(a, ell);
    let outer = Array2::from_shape_fn(base.raw_dim(), |(i, j)| v[i] * v[j]);
    let ip = |x: &Array2<f64>, y: ArrayView2<'_, f64>| linalg::frobenius_inner(x.view(), y);
    let (g11, g12, g22) = (
        ip(&base, base.view()),
        ip(&base, outer.view()),
        ip(&outer, outer.view()),
    );
    let (b1, b2) = (ip(&base, theta), ip(&outer, theta));
    let det = g11 * g22 - g12 * g12;
    if det.abs() <= 1e-14 * g11 * g22 {
        return Err(Error::Singular {
            min_eigenvalue: det,
        });
    }
    let scale = (b1 * g22 - b2 * g12) / det;
    let coupled = (g11 * b2 - g12 * b1) / det;
    let fitted = &base * scale + &outer * coupled;
    let residual = linalg::frobenius_norm((&fitted - &theta).view())
        / linalg::frobenius_norm(theta).max(f64::MIN_POSITIVE);
    Ok(DecoupledFit {
        scale,
        c: coupled / scale,
        residual,
    })
}

/// Serializes `m` as an 8-byte little-endian `n` followed by `n * n`
/// little-endian `f64` values in row-major order.
pub fn encode_theta(m: ArrayView2<'_, f64>) -> Result<Vec<u8>> {
    let n = linalg::check_square(m, "kernel dump")?;
    let mut out = Vec::with_capacity(8 + 8 * n * n);
    out.extend_from_slice(&(n as u64).to_le_bytes());
    for v in m.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_theta(bytes: &[u8]) -> Result<Array2<f64>> {
    let bad = |message: String| Error::Parse {
        file: "theta.bin".into(),
        line: 0,
        message,
    };
    let header: [u8; 8] = bytes
        .get(..8)
        .and_then(|h| h.try_into().ok())
        .ok_or_else(|| bad(format!("{} bytes is too short for the header", bytes.len())))?;
    let n = u64::from_le_bytes(header);
    let expected = n
        .checked_mul(n)
        .and_then(|nn| nn.checked_mul(8))
        .and_then(|b| b.checked_add(8))
        .filter(|&b| b == bytes.len() as u64)
        .ok_or_else(|| {
            bad(format!(
                "header says n = {n}, payload has {} bytes",
                bytes.len() - 8
            ))
        })?;
    debug_assert_eq!(expected as usize, bytes.len());
    let n = n as usize;
    let values = bytes[8..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Array2::from_shape_vec((n, n), values).expect("length checked"))
}

pub fn write_theta(path: impl AsRef<Path>, m: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_theta(m)?).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read_theta(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_theta(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn relu_expectation_examples() {
        let e = relu_expectations(1.0, 1.0, 1.0);
        assert_abs_diff_eq!(e.t, 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(e.t_dot, 0.5, epsilon = 1e-15);
        let e = relu_expectations(1.0, 0.0, 1.0);
        assert_abs_diff_eq!(e.t, 1.0 / (2.0 * PI), epsilon = 1e-15);
        assert_abs_diff_eq!(e.t_dot, 0.25, epsilon = 1e-15);
        let e = relu_expectations(4.0, -2.0, 1.0);
        assert_abs_diff_eq!(e.t_dot, 0.0, epsilon = 1e-15);
        assert!(!e.degenerate);
        let e = relu_expectations(0.0, 0.0, 1.0);
        assert!(e.degenerate);
        assert_eq!((e.t, e.t_dot), (0.0, 0.5));
    }

    #[test]
    fn single_layer_onehot_is_a_squared() {
        let a = array![[0.5, 0.5, 0.0], [0.5, 0.25, 0.25], [0.0, 0.25, 0.75]];
        let theta = gntk_compute(Array2::<f64>::eye(3).view(), a.view(), 1).unwrap();
        assert_abs_diff_eq!(theta, a.dot(&a), epsilon = 1e-14);
    }

    #[test]
    fn identity_graph_two_layers() {
        let i = Array2::<f64>::eye(3);
        // First layer only: off-diagonal inputs are orthogonal, so the
        // derivative term vanishes against the zero off-diagonal of A^2.
        let t = gntk_compute_with(i.view(), i.view(), 2, &GntkOptions::first_layer_only()).unwrap();
        assert_abs_diff_eq!(t, &i * 0.5, epsilon = 1e-15);
        // All layers trained, c_sigma = 2: the second-layer covariance is
        // 2 T(I), whose off-diagonal is 2 / (2 pi).
        let t = gntk_compute(i.view(), i.view(), 2).unwrap();
        assert_abs_diff_eq!(t[[0, 0]], 2.0, epsilon = 1e-14);
        assert_abs_diff_eq!(t[[0, 1]], 1.0 / PI, epsilon = 1e-14);
    }

    #[test]
    fn two_layer_closed_form_examples() {
        let i = Array2::<f64>::eye(2);
        let cf = two_layer_gntk(i.view(), InputMode::Onehot).unwrap();
        assert_abs_diff_eq!(cf.theta, &i * 0.5, epsilon = 1e-15);
        // Brute force over rows of A.
        let a = array![[1.0, 0.0, 1.0], [0.0, 1.0, 0.0], [1.0, 0.0, 0.5]];
        let cf = two_layer_gntk(a.view(), InputMode::Onehot).unwrap();
        let mut inner = Array2::<f64>::zeros((3, 3));
        for i in 0..3 {
            for j in 0..3 {
                let (ri, rj) = (a.row(i), a.row(j));
                let dot = ri.dot(&rj);
                let cos = dot / (ri.dot(&ri).sqrt() * rj.dot(&rj).sqrt());
                inner[[i, j]] = dot * (PI - cos.clamp(-1.0, 1.0).acos()) / (2.0 * PI);
            }
        }
        // Rows 0 and 1 are orthogonal: S = 1/4 against a zero inner product.
        assert_eq!(a.row(0).dot(&a.row(1)), 0.0);
        // arccos near 1 amplifies rounding by ~1/sqrt(eps).
        assert_abs_diff_eq!(cf.theta, a.dot(&inner).dot(&a), epsilon = 1e-7);
        let zero_row = array![[0.0, 0.0], [0.0, 1.0]];
        assert!(
            two_layer_gntk(zero_row.view(), InputMode::Onehot)
                .unwrap()
                .degenerate_entries
                > 0
        );
    }

    #[test]
    fn recurrence_matches_closed_form() {
        let g = crate::graph::SparseGraph::from_edges(
            5,
            [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (1, 4, 1.0)],
            true,
        )
        .unwrap()
        .normalize()
        .unwrap();
        let a = g.to_dense();
        let rec = gntk_compute_with(
            Array2::<f64>::eye(5).view(),
            a.view(),
            2,
            &GntkOptions::first_layer_only(),
        )
        .unwrap();
        let closed = two_layer_gntk(a.view(), InputMode::Onehot).unwrap().theta;
        assert_abs_diff_eq!(rec, closed, epsilon = 1e-12);
    }

    #[test]
    fn decoupled_examples() {
        let i = Array2::<f64>::eye(2);
        assert_eq!(
            deep_decoupled_gntk(i.view(), 1, 1.0).unwrap(),
            array![[2.0, 1.0], [1.0, 2.0]]
        );
        let a = array![[0.5, 0.5], [0.5, 0.5]];
        assert_abs_diff_eq!(
            deep_decoupled_gntk(a.view(), 1, 0.0).unwrap(),
            a.dot(&a),
            epsilon = 1e-15
        );
        assert!(deep_decoupled_gntk(a.view(), 1, -1.0).is_err());
    }

    #[test]
    fn fit_recovers_constant() {
        let a = array![[0.6, 0.3, 0.0], [0.3, 0.4, 0.2], [0.0, 0.2, 0.7]];
        let theta = deep_decoupled_gntk(a.view(), 2, 0.35).unwrap() * 3.0;
        let fit = fit_decoupled_constant(theta.view(), a.view(), 2).unwrap();
        assert_abs_diff_eq!(fit.scale, 3.0, epsilon = 1e-8);
        assert_abs_diff_eq!(fit.c, 0.35, epsilon = 1e-8);
    }

    #[test]
    fn linear_examples() {
        let a = array![[0.5, 0.5], [0.5, 0.5]];
        assert_eq!(
            linear_gnn_gntk(a.view(), 0, InputMode::Onehot).unwrap(),
            Array2::<f64>::eye(2)
        );
        let nonpsd = array![[0.0, 1.0], [1.0, 0.0]];
        assert!(matches!(
            linear_gnn_gntk(nonpsd.view(), 1, InputMode::Spectral),
            Err(Error::NotPsd { .. })
        ));
    }

    #[test]
    fn theta_codec_round_trip() {
        let m = array![[1.0, -2.5], [3.25, f64::MAX]];
        let bytes = encode_theta(m.view()).unwrap();
        assert_eq!(bytes.len(), 8 + 32);
        assert_eq!(decode_theta(&bytes).unwrap(), m);
        assert!(decode_theta(&bytes[..20]).is_err());
        assert!(decode_theta(&[0xff; 8]).is_err());
        assert_eq!(decode_theta(&[0; 8]).unwrap().dim(), (0, 0));
    }
}
