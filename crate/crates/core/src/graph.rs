//! Sparse symmetric graphs in CSR form.
//!
//! A [`SparseGraph`] is immutable once built. Normalization returns a new
//! value carrying `normalized = true`; raw and normalized graphs never alias.

use std::collections::HashSet;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, PowerIterationOptions};

/// Largest node count for which dense `n x n` matrices are materialized.
pub const DEFAULT_DENSE_LIMIT: usize = 5000;

/// Symmetric adjacency in compressed sparse row layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseGraph {
    n: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<f64>,
    normalized: bool,
}

impl SparseGraph {
    /// Builds a graph from `(i, j, w)` triples.
    ///
    /// With `symmetrize`, each triple is an undirected edge and both
    /// directions are stored; otherwise the triples must already describe a
    /// symmetric matrix. Repeated entries have their weights summed.
    pub fn from_edges<I>(n: usize, edges: I, symmetrize: bool) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        if n == 0 {
            return Err(Error::EmptyGraph);
        }
        let mut triples = Vec::new();
        for (i, j, w) in edges {
            for index in [i, j] {
                if index >= n {
                    return Err(Error::IndexOutOfRange { index, n });
                }
            }
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::config(format!(
                    "edge ({i}, {j}) has weight {w}; weights must be positive and finite"
                )));
            }
            triples.push((i, j, w));
            if symmetrize && i != j {
                triples.push((j, i, w));
            }
        }
        triples.sort_unstable_by_key(|t| (t.0, t.1));

        let mut row_offsets = vec![0usize; n + 1];
        let mut col_indices = Vec::with_capacity(triples.len());
        let mut values: Vec<f64> = Vec::with_capacity(triples.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, w) in triples {
            if last == Some((i, j)) {
                *values.last_mut().expect("entry exists") += w;
                continue;
            }
            last = Some((i, j));
            row_offsets[i + 1] += 1;
            col_indices.push(j);
            values.push(w);
        }
        for i in 0..n {
            row_offsets[i + 1] += row_offsets[i];
        }
        let g = Self {
            n,
            row_offsets,
            col_indices,
            values,
            normalized: false,
        };
        if !symmetrize {
            g.check_symmetry()?;
        }
        Ok(g)
    }

    fn check_symmetry(&self) -> Result<()> {
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &w) in cols.iter().zip(vals) {
                match self.get(j, i) {
                    Some(back) if (back - w).abs() <= 1e-12 * w.abs().max(1.0) => {}
                    Some(back) => {
                        return Err(Error::NotSymmetric(format!(
                            "entry ({i}, {j}) = {w} but ({j}, {i}) = {back}"
                        )))
                    }
                    None => {
                        return Err(Error::NotSymmetric(format!(
                            "entry ({i}, {j}) has no reverse entry"
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Number of stored entries (each undirected edge counts twice).
    pub fn nnz(&self) -> usize {
        self.col_indices.len()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn row_offsets(&self) -> &[usize] {
        &self.row_offsets
    }

    pub fn col_indices(&self) -> &[usize] {
        &self.col_indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, i: usize) -> (&[usize], &[f64]) {
        let r = self.row_offsets[i]..self.row_offsets[i + 1];
        (&self.col_indices[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let (cols, vals) = self.row(i);
        cols.binary_search(&j).ok().map(|k| vals[k])
    }

    /// Weighted degree of each node.
    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.row(i).1.iter().sum()).collect()
    }

    /// Upper-triangle entries `(i, j, w)` with `i <= j`.
    pub fn upper_entries(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n).flat_map(move |i| {
            let (cols, vals) = self.row(i);
            cols.iter()
                .zip(vals)
                .filter(move |(&j, _)| j >= i)
                .map(move |(&j, &w)| (i, j, w))
        })
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with degrees taken after adding self-loops.
    pub fn normalize(&self) -> Result<SparseGraph> {
        if self.normalized {
            return Err(Error::AlreadyNormalized);
        }
        let mut triples: Vec<(usize, usize, f64)> = Vec::with_capacity(self.nnz() + self.n);
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            triples.extend(cols.iter().zip(vals).map(|(&j, &w)| (i, j, w)));
            triples.push((i, i, 1.0));
        }
        let mut with_loops = SparseGraph::from_edges(self.n, triples, false)?;
        let inv_sqrt: Vec<f64> = with_loops
            .degrees()
            .into_iter()
            .map(|d| 1.0 / d.sqrt())
            .collect();
        for i in 0..self.n {
            let r = with_loops.row_offsets[i]..with_loops.row_offsets[i + 1];
            for k in r {
                let j = with_loops.col_indices[k];
                with_loops.values[k] *= inv_sqrt[i] * inv_sqrt[j];
            }
        }
        with_loops.normalized = true;
        Ok(with_loops)
    }

    /// One sparse-dense product `A M` into `out`, parallel over rows.
    fn spmm_into(&self, m: &[f64], c: usize, out: &mut [f64]) {
        out.par_chunks_mut(c.max(1))
            .enumerate()
            .for_each(|(i, dst)| {
                dst.iter_mut().for_each(|v| *v = 0.0);
                let (cols, vals) = self.row(i);
                for (&j, &w) in cols.iter().zip(vals) {
                    let src = &m[j * c..(j + 1) * c];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += w * s;
                    }
                }
            });
    }

    /// `A^k M` computed as `k` sparse multiplications.
    pub fn propagate(&self, m: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
        if m.nrows() != self.n {
            return Err(Error::shape(format!(
                "matrix has {} rows, graph has {} nodes",
                m.nrows(),
                self.n
            )));
        }
        let c = m.ncols();
        let mut cur: Vec<f64> = m.as_standard_layout().iter().copied().collect();
        if k == 0 || c == 0 {
            return Ok(Array2::from_shape_vec((self.n, c), cur).expect("shape"));
        }
        let mut next = vec![0.0; cur.len()];
        for _ in 0..k {
            self.spmm_into(&cur, c, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(Array2::from_shape_vec((self.n, c), cur).expect("shape"))
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut d = Array2::zeros((self.n, self.n));
        for i in 0..self.n {
            let (cols, vals) = self.row(i);
            for (&j, &w) in cols.iter().zip(vals) {
                d[[i, j]] = w;
            }
        }
        d
    }

    /// Dense `A^k`, refused above `limit` nodes.
    pub fn densify_power(&self, k: usize, limit: usize) -> Result<Array2<f64>> {
        if self.n > limit {
            return Err(Error::DenseLimit { n: self.n, limit });
        }
        if k == 0 {
            return Ok(Array2::eye(self.n));
        }
        let mut p = self.propagate(self.to_dense().view(), k - 1)?;
        linalg::symmetrize_in_place(&mut p);
        Ok(p)
    }
}

/// Free-function form of [`SparseGraph::from_edges`].
pub fn build_graph<I>(edges: I, n: usize, symmetrize: bool) -> Result<SparseGraph>
where
    I: IntoIterator<Item = (usize, usize, f64)>,
{
    SparseGraph::from_edges(n, edges, symmetrize)
}

pub fn normalize_adjacency(g: &SparseGraph) -> Result<SparseGraph> {
    g.normalize()
}

pub fn propagate(g: &SparseGraph, m: ArrayView2<'_, f64>, k: usize) -> Result<Array2<f64>> {
    g.propagate(m, k)
}

pub fn densify_power(g: &SparseGraph, k: usize) -> Result<Array2<f64>> {
    g.densify_power(k, DEFAULT_DENSE_LIMIT)
}

/// Dominant (largest-magnitude) eigenvalue of a dense symmetric matrix.
pub fn max_eigenvalue(m: ArrayView2<'_, f64>) -> Result<f64> {
    max_eigenvalue_with(m, PowerIterationOptions::default())
}

pub fn max_eigenvalue_with(m: ArrayView2<'_, f64>, opts: PowerIterationOptions) -> Result<f64> {
    let n = linalg::check_symmetric(m, 1e-8, "eigenvalue input")?;
    let m = m.as_standard_layout();
    let data = m.as_slice().expect("standard layout");
    let r = linalg::power_iteration(
        n,
        |x, y| {
            y.par_iter_mut().enumerate().for_each(|(i, yi)| {
                *yi = data[i * n..(i + 1) * n]
                    .iter()
                    .zip(x)
                    .map(|(a, b)| a * b)
                    .sum();
            })
        },
        opts,
    )?;
    Ok(r.eigenvalue)
}

/// Disjoint train/validation/test index sets.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl DataSplit {
    pub fn new(train: Vec<usize>, val: Vec<usize>, test: Vec<usize>, n: usize) -> Result<Self> {
        let split = Self { train, val, test };
        split.validate(n)?;
        Ok(split)
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if self.train.is_empty() {
            return Err(Error::Inconsistent("training set is empty".into()));
        }
        let mut seen = HashSet::with_capacity(self.train.len() + self.val.len() + self.test.len());
        for (name, set) in [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ] {
            for &i in set.iter() {
                if i >= n {
                    return Err(Error::Inconsistent(format!(
                        "{name} index {i} out of range for {n} nodes"
                    )));
                }
                if !seen.insert(i) {
                    return Err(Error::Inconsistent(format!(
                        "node {i} appears more than once across the split ({name})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// All nodes outside the training set, ascending.
    pub fn non_train(&self, n: usize) -> Vec<usize> {
        let mut is_train = vec![false; n];
        for &i in &self.train {
            is_train[i] = true;
        }
        (0..n).filter(|&i| !is_train[i]).collect()
    }
}
