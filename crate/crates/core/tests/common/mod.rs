//! Dense reference implementations shared by the integration tests. These
//! deliberately avoid the library's sparse and solver code paths.
#![allow(dead_code)]

use std::path::PathBuf;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use resprop::SparseGraph;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn data_dir(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data")
        .join(name)
}

/// Erdos-Renyi edge list, `i < j`.
pub fn random_edges(n: usize, p: f64, rng: &mut impl Rng) -> Vec<(usize, usize, f64)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    edges
}

pub fn sparse_normalized(n: usize, edges: &[(usize, usize, f64)]) -> SparseGraph {
    SparseGraph::from_edges(n, edges.iter().copied(), true)
        .unwrap()
        .normalize()
        .unwrap()
}

/// `D^{-1/2} (A + I) D^{-1/2}` built entry by entry.
pub fn dense_normalized(n: usize, edges: &[(usize, usize, f64)]) -> Array2<f64> {
    let mut a = Array2::<f64>::eye(n);
    for &(i, j, w) in edges {
        a[[i, j]] += w;
        if i != j {
            a[[j, i]] += w;
        }
    }
    let deg: Vec<f64> = a.rows().into_iter().map(|r| r.sum()).collect();
    for i in 0..n {
        for j in 0..n {
            a[[i, j]] /= (deg[i] * deg[j]).sqrt();
        }
    }
    a
}

pub fn naive_matmul(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[[i, t]] * b[[t, j]];
            }
            out[[i, j]] = s;
        }
    }
    out
}

pub fn naive_power(a: ArrayView2<'_, f64>, k: usize) -> Array2<f64> {
    let mut out = Array2::eye(a.nrows());
    for _ in 0..k {
        out = naive_matmul(out.view(), a);
    }
    out
}

fn to_na(m: ArrayView2<'_, f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[[i, j]])
}

fn from_na(m: &DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Solves `a x = b` by LU with partial pivoting.
pub fn solve(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Array2<f64> {
    let x = to_na(a).lu().solve(&to_na(b)).expect("singular system");
    from_na(&x)
}

pub fn inverse(a: ArrayView2<'_, f64>) -> Array2<f64> {
    from_na(&to_na(a).try_inverse().expect("singular matrix"))
}

pub fn eigenvalues(a: ArrayView2<'_, f64>) -> Vec<f64> {
    let mut v: Vec<f64> = to_na(a).symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn select(m: ArrayView2<'_, f64>, rows: &[usize], cols: &[usize]) -> Array2<f64> {
    Array2::from_shape_fn((rows.len(), cols.len()), |(i, j)| m[[rows[i], cols[j]]])
}

pub fn one_hot(labels: &[i64], nodes: &[usize], c: usize) -> Array2<f64> {
    let mut y = Array2::zeros((nodes.len(), c));
    for (row, &i) in nodes.iter().enumerate() {
        y[[row, labels[i] as usize]] = 1.0;
    }
    y
}

pub fn complement(n: usize, nodes: &[usize]) -> Vec<usize> {
    let mut keep = vec![true; n];
    for &i in nodes {
        keep[i] = false;
    }
    (0..n).filter(|&i| keep[i]).collect()
}

pub fn frobenius(m: ArrayView2<'_, f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs_diff(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    assert_eq!(a.dim(), b.dim());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Cosine of two matrices under the Frobenius inner product.
pub fn cosine(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let inner: f64 = a.iter().zip(b.iter()).map(|(x, y)| x * y).sum();
    inner / (frobenius(a) * frobenius(b))
}

pub fn argmax_row(m: ArrayView2<'_, f64>, i: usize) -> usize {
    let mut best = 0;
    for j in 1..m.ncols() {
        if m[[i, j]] > m[[i, best]] {
            best = j;
        }
    }
    best
}
