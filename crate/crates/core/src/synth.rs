//! Stochastic block model datasets with a homophily dial `lambda`.
//!
//! `lambda = 0` puts every edge inside a block, `lambda = 1` puts every edge
//! between blocks. Node `i` belongs to block `i / block_size`.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::NodeDataset;
use crate::error::{Error, Result};
use crate::graph::{DataSplit, SparseGraph};
use crate::linalg::DEFAULT_SEED;

// Independent RNG streams so that, for a fixed seed, changing `lambda`
// only changes the edges.
const EDGE_STREAM: u64 = 0;
const FEATURE_STREAM: u64 = 1;
const SPLIT_STREAM: u64 = 2;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SbmConfig {
    pub num_blocks: usize,
    pub block_size: usize,
    pub feature_dim: usize,
    pub lambda: f64,
    pub intra_p: f64,
    pub inter_p: f64,
    /// Class means are `mean_scale * N(0, I)`.
    pub mean_scale: f64,
    /// Node features are class mean plus `noise_std * N(0, I)`.
    pub noise_std: f64,
    /// Split sizes summed over classes, spread evenly across blocks.
    pub train_size: usize,
    pub val_size: usize,
    pub test_size: usize,
    pub seed: u64,
}

impl Default for SbmConfig {
    fn default() -> Self {
        Self {
            num_blocks: 5,
            block_size: 400,
            feature_dim: 100,
            lambda: 0.0,
            intra_p: 0.01,
            inter_p: 0.0025,
            mean_scale: 1.0,
            noise_std: 1.0,
            train_size: 100,
            val_size: 500,
            test_size: 1000,
            seed: DEFAULT_SEED,
        }
    }
}

impl SbmConfig {
    pub fn n(&self) -> usize {
        self.num_blocks * self.block_size
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_blocks == 0 || self.block_size == 0 {
            return Err(Error::config("SBM needs at least one block of one node"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::config(format!(
                "lambda {} outside [0, 1]",
                self.lambda
            )));
        }
        for (name, p) in [("intra_p", self.intra_p), ("inter_p", self.inter_p)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if !(self.mean_scale.is_finite() && self.noise_std.is_finite() && self.noise_std >= 0.0) {
            return Err(Error::config(
                "feature scales must be finite, noise non-negative",
            ));
        }
        if self.train_size == 0 {
            return Err(Error::config("train_size must be positive"));
        }
        let per_block = |total: usize| total.div_ceil(self.num_blocks);
        let need =
            per_block(self.train_size) + per_block(self.val_size) + per_block(self.test_size);
        if need > self.block_size {
            return Err(Error::config(format!(
                "split needs up to {need} nodes per block, blocks have {}",
                self.block_size
            )));
        }
        Ok(())
    }
}

/// `P = (1 - lambda) intra_p I + lambda inter_p (11^T - I)`.
pub fn edge_prob_matrix(cfg: &SbmConfig) -> Array2<f64> {
    let b = cfg.num_blocks;
    Array2::from_shape_fn((b, b), |(i, j)| {
        if i == j {
            (1.0 - cfg.lambda) * cfg.intra_p
        } else {
            cfg.lambda * cfg.inter_p
        }
    })
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Splits `total` into `parts` counts differing by at most one, larger first.
fn spread(total: usize, parts: usize) -> impl Iterator<Item = usize> {
    (0..parts).map(move |k| total / parts + usize::from(k < total % parts))
}

pub fn sbm_generate(cfg: &SbmConfig) -> Result<NodeDataset> {
    cfg.validate()?;
    let n = cfg.n();
    let s = cfg.block_size;
    let p = edge_prob_matrix(cfg);

    let mut rng = stream_rng(cfg.seed, EDGE_STREAM);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random::<f64>() < p[[i / s, j / s]] {
                edges.push((i, j, 1.0));
            }
        }
    }
    let graph = SparseGraph::from_edges(n, edges, true)?;

    let mut rng = stream_rng(cfg.seed, FEATURE_STREAM);
    let d = cfg.feature_dim;
    let means = Array2::from_shape_fn((cfg.num_blocks, d), |_| {
        cfg.mean_scale * rng.sample::<f64, _>(StandardNormal)
    });
    let features = Array2::from_shape_fn((n, d), |(i, k)| {
        means[[i / s, k]] + cfg.noise_std * rng.sample::<f64, _>(StandardNormal)
    });

    let mut rng = stream_rng(cfg.seed, SPLIT_STREAM);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let sizes = spread(cfg.train_size, cfg.num_blocks)
        .zip(spread(cfg.val_size, cfg.num_blocks))
        .zip(spread(cfg.test_size, cfg.num_blocks));
    for (block, ((tr, va), te)) in sizes.enumerate() {
        let mut members: Vec<usize> = (block * s..(block + 1) * s).collect();
        members.shuffle(&mut rng);
        train.extend_from_slice(&members[..tr]);
        val.extend_from_slice(&members[tr..tr + va]);
        test.extend_from_slice(&members[tr + va..tr + va + te]);
    }
    for set in [&mut train, &mut val, &mut test] {
        set.sort_unstable();
    }

    let labels = (0..n).map(|i| (i / s) as i64).collect();
    NodeDataset::new(graph, features, labels, DataSplit { train, val, test })
}
