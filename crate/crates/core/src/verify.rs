//! Self-checks runnable from the command line. Each suite compares a module
//! against a dense or brute-force reference on small seeded fixtures.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::alignment::{alignment, generalization_bound, homophily, BoundConfig};
use crate::error::{Error, Result};
use crate::gntk::{gntk_compute, gntk_compute_with, two_layer_gntk, GntkOptions, InputMode};
use crate::graph::SparseGraph;
use crate::linalg::{self, DEFAULT_SEED};
use crate::oracle::{
    empirical_ntk, finite_difference_jacobian, init_weights, jacobian, train_linear_gnn_gd,
    FiniteGnnConfig,
};
use crate::propagation::{
    converged_fixed_point, converged_rp_solution, lp_run, max_step_size, rp_step, LpMode, Regime,
    ResidualState, RpConfig,
};
use crate::synth::{sbm_generate, SbmConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Graph,
    Propagation,
    Gntk,
    Oracle,
    Alignment,
}

impl Suite {
    pub const ALL: [Suite; 5] = [
        Suite::Graph,
        Suite::Propagation,
        Suite::Gntk,
        Suite::Oracle,
        Suite::Alignment,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Graph => "graph",
            Suite::Propagation => "propagation",
            Suite::Gntk => "gntk",
            Suite::Oracle => "oracle",
            Suite::Alignment => "alignment",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| Error::config(format!("unknown suite {s:?}")))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: Suite,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

type CheckFn = fn() -> Result<(bool, String)>;

fn checks(suite: Suite) -> Vec<(&'static str, CheckFn)> {
    match suite {
        Suite::Graph => vec![
            ("normalization entries", normalization_entries),
            ("propagate vs dense power", propagate_vs_dense),
            ("spectral radius at most one", spectral_radius),
        ],
        Suite::Propagation => vec![
            ("one step equals label propagation", one_step_lp),
            ("iterates reach kernel regression", reaches_fixed_point),
            ("matches linear GNN descent", linear_gnn_descent),
            ("convergence regimes", convergence_regimes),
        ],
        Suite::Gntk => vec![
            ("recurrence equals closed form", recurrence_closed_form),
            ("empirical NTK converges", monte_carlo_ntk),
            ("kernel is PSD", gntk_psd),
        ],
        Suite::Oracle => vec![
            ("jacobian vs finite differences", jacobian_fd),
            ("empirical NTK is PSD", empirical_ntk_psd),
        ],
        Suite::Alignment => vec![
            ("alignment axioms", alignment_axioms),
            ("bound decreases with homophily", bound_monotone),
            ("homophily decreases with lambda", homophily_sweep),
        ],
    }
}

/// Runs every check of `suite`; an error inside a check counts as a failure.
pub fn run_suite(suite: Suite) -> Vec<CheckResult> {
    checks(suite)
        .into_iter()
        .map(|(name, check)| {
            let start = Instant::now();
            let (passed, detail) = match check() {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            CheckResult {
                suite,
                name,
                passed,
                detail,
                seconds: start.elapsed().as_secs_f64(),
            }
        })
        .collect()
}

fn rng(stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(DEFAULT_SEED);
    r.set_stream(stream);
    r
}

fn small_sbm(lambda: f64) -> Result<crate::dataset::NodeDataset> {
    sbm_generate(&SbmConfig {
        num_blocks: 5,
        block_size: 20,
        feature_dim: 4,
        lambda,
        intra_p: 0.2,
        inter_p: 0.05,
        train_size: 20,
        val_size: 20,
        test_size: 60,
        ..SbmConfig::default()
    })
}

fn random_graph(n: usize, p: f64, rng: &mut ChaCha8Rng) -> Result<SparseGraph> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if rng.random::<f64>() < p {
                edges.push((i, j, 1.0));
            }
        }
    }
    SparseGraph::from_edges(n, edges, true)?.normalize()
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn within(value: f64, tol: f64, what: &str) -> (bool, String) {
    (
        value <= tol,
        format!("{what} {value:.2e} (tolerance {tol:.0e})"),
    )
}

fn normalization_entries() -> Result<(bool, String)> {
    let raw = small_sbm(0.3)?.graph;
    let g = raw.normalize()?;
    let deg: Vec<f64> = raw.degrees().iter().map(|d| d + 1.0).collect();
    let mut worst = 0.0f64;
    for i in 0..g.n() {
        let (cols, vals) = g.row(i);
        for (&j, &v) in cols.iter().zip(vals) {
            worst = worst.max((v - 1.0 / (deg[i] * deg[j]).sqrt()).abs());
        }
    }
    Ok(within(worst, 1e-15, "max entry error"))
}

fn propagate_vs_dense() -> Result<(bool, String)> {
    let g = small_sbm(0.3)?.graph.normalize()?;
    let dense = g.to_dense();
    let mut rng = rng(1);
    let m = Array2::from_shape_fn((g.n(), 5), |_| rng.random_range(-1.0..1.0));
    let mut worst = 0.0f64;
    for k in 0..=6 {
        let sparse = g.propagate(m.view(), k)?;
        let reference = linalg::matrix_power(dense.view(), k).dot(&m);
        worst = worst.max(max_diff(&sparse, &reference));
    }
    Ok(within(worst, 1e-10, "max gap over K = 0..6"))
}

fn spectral_radius() -> Result<(bool, String)> {
    let g = small_sbm(0.3)?.graph.normalize()?;
    let top = crate::graph::max_eigenvalue(g.to_dense().view())?;
    Ok((top <= 1.0 + 1e-6, format!("largest eigenvalue {top:.8}")))
}

fn one_step_lp() -> Result<(bool, String)> {
    let ds = small_sbm(0.3)?;
    let g = ds.graph.normalize()?;
    let y = ds.train_targets()?;
    let init = ResidualState::new(ds.n(), &ds.split.train, y.clone())?;
    let mut mismatches = 0;
    for k in [1, 2, 4] {
        let cfg = RpConfig {
            eta: 0.7,
            k,
            ..RpConfig::default()
        };
        let rp = crate::propagation::argmax_rows(rp_step(&init, &g, &cfg)?.predictions().view());
        let lp = lp_run(&g, &ds.split.train, y.view(), 1.0, LpMode::Steps(k))?;
        let lp = crate::propagation::argmax_rows(lp.view());
        mismatches += rp.iter().zip(&lp).filter(|(a, b)| a != b).count();
    }
    Ok((
        mismatches == 0,
        format!("{mismatches} argmax mismatches for K = 1, 2, 4"),
    ))
}

fn reaches_fixed_point() -> Result<(bool, String)> {
    let ds = small_sbm(0.0)?;
    let g = ds.graph.normalize()?;
    let train = &ds.split.train;
    let y = ds.train_targets()?;
    let fp = converged_rp_solution(&g, 2, train, y.view())?;
    let cfg = RpConfig {
        eta: 0.9 * max_step_size(&g, 2, train)?,
        k: 2,
        ..RpConfig::default()
    };
    let mut state = ResidualState::new(ds.n(), train, y)?;
    for step in 1..=5000 {
        state = rp_step(&state, &g, &cfg)?;
        let gap = max_diff(&state.rest_predictions(), &fp.rest_predictions);
        let residual = linalg::frobenius_norm(state.r.view());
        if gap < 1e-6 && residual < 1e-6 {
            return Ok((true, format!("within 1e-6 after {step} steps")));
        }
    }
    Ok((false, "not within 1e-6 after 5000 steps".into()))
}

fn linear_gnn_descent() -> Result<(bool, String)> {
    let ds = small_sbm(0.3)?;
    let g = ds.graph.normalize()?;
    let a = g.to_dense();
    let train = &ds.split.train;
    let y = ds.train_targets()?;
    let eta = 0.5;
    let x = Array2::eye(ds.n());
    let gd = train_linear_gnn_gd(a.view(), 1, x.view(), train, y.view(), eta, 50)?;
    let cfg = RpConfig {
        eta,
        k: 2,
        ..RpConfig::default()
    };
    let mut state = ResidualState::new(ds.n(), train, y)?;
    let mut worst = 0.0f64;
    for (t, snap) in gd.iter().enumerate() {
        if t > 0 {
            state = rp_step(&state, &g, &cfg)?;
        }
        worst = worst
            .max(max_diff(&state.r, &snap.r))
            .max(max_diff(&state.r_prime, &snap.r_prime));
    }
    Ok(within(worst, 1e-5, "max residual gap over 50 steps"))
}

fn convergence_regimes() -> Result<(bool, String)> {
    let y = ndarray::array![[1.0], [0.0]];
    let train = [0, 1];
    let v = [1.0, 2.0, 3.0];
    let a = small_sbm(0.0)?.graph.normalize()?.to_dense();
    let sbm_train: Vec<usize> = (0..10).map(|i| 10 * i).collect();
    let sbm_y = Array2::from_shape_fn((10, 1), |(i, _)| (i % 2) as f64);
    let fixtures = [
        (
            converged_fixed_point(a.dot(&a).view(), &sbm_train, sbm_y.view())?,
            Regime::PositiveDefinite,
        ),
        (
            converged_fixed_point(
                Array2::from_shape_fn((3, 3), |(i, j)| v[i] * v[j]).view(),
                &train,
                y.view(),
            )?,
            Regime::SemiDefinite,
        ),
        (
            converged_fixed_point(
                ndarray::array![[1.0, 1.0, 1.0], [1.0, 1.0, 0.0], [1.0, 0.0, 0.0]].view(),
                &train,
                y.view(),
            )?,
            Regime::SemiDefiniteDivergent,
        ),
        (
            converged_fixed_point(
                ndarray::array![[0.0, 1.0], [1.0, 0.0]].view(),
                &train,
                y.view(),
            )?,
            Regime::Indefinite,
        ),
    ];
    let wrong: Vec<String> = fixtures
        .iter()
        .filter(|(fp, want)| fp.regime != *want)
        .map(|(fp, want)| format!("{want:?} fixture classified {:?}", fp.regime))
        .collect();
    if wrong.is_empty() {
        Ok((
            true,
            "PD, PSD, PSD-divergent and indefinite fixtures classified".into(),
        ))
    } else {
        Ok((false, wrong.join("; ")))
    }
}

fn recurrence_closed_form() -> Result<(bool, String)> {
    let mut rng = rng(2);
    let mut worst = 0.0f64;
    for _ in 0..5 {
        let n = rng.random_range(5..=60);
        let a = random_graph(n, 0.15, &mut rng)?.to_dense();
        let x = Array2::eye(n);
        let rec = gntk_compute_with(x.view(), a.view(), 2, &GntkOptions::first_layer_only())?;
        let closed = two_layer_gntk(a.view(), InputMode::Onehot)?.theta;
        worst = worst.max(max_diff(&rec, &closed));
    }
    Ok(within(worst, 1e-8, "max entry gap over 5 graphs"))
}

fn monte_carlo_ntk() -> Result<(bool, String)> {
    let mut rng = rng(3);
    let a = random_graph(20, 0.2, &mut rng)?.to_dense();
    let closed = two_layer_gntk(a.view(), InputMode::Onehot)?.theta;
    let x = Array2::eye(20);
    let mut scores = Vec::new();
    for width in [16, 256, 8192] {
        let ntk = empirical_ntk(
            &FiniteGnnConfig::two_layer_first_only(width),
            x.view(),
            a.view(),
            10,
        )?;
        scores.push(alignment(closed.view(), ntk.view())?);
    }
    let ok = scores[2] >= 0.99 && scores.windows(2).all(|w| w[1] > w[0]);
    Ok((
        ok,
        format!(
            "alignment at widths 16/256/8192: {:.5}/{:.5}/{:.5}",
            scores[0], scores[1], scores[2]
        ),
    ))
}

fn gntk_psd() -> Result<(bool, String)> {
    let mut rng = rng(4);
    let a = random_graph(40, 0.1, &mut rng)?.to_dense();
    let x = Array2::from_shape_fn((40, 6), |_| rng.random_range(-1.0..1.0));
    let theta = gntk_compute(x.view(), a.view(), 3)?;
    let min = linalg::min_eigenvalue(theta.view());
    let asym = linalg::max_asymmetry(theta.view());
    Ok((
        min >= -1e-6 && asym <= 1e-8,
        format!("min eigenvalue {min:.2e}, asymmetry {asym:.1e}"),
    ))
}

fn jacobian_fd() -> Result<(bool, String)> {
    let mut rng = rng(5);
    let mut worst = 0.0f64;
    for layers in 1..=3 {
        let a = random_graph(6, 0.5, &mut rng)?.to_dense();
        let x = Array2::from_shape_fn((6, 3), |_| rng.random_range(-1.0..1.0));
        let cfg = FiniteGnnConfig::new(layers, 8);
        let w = init_weights(&cfg, 3, DEFAULT_SEED + layers as u64)?;
        let exact = jacobian(&cfg, &w, x.view(), a.view())?;
        let fd = finite_difference_jacobian(&cfg, &w, x.view(), a.view(), 1e-6)?;
        for (e, f) in exact.iter().zip(fd.iter()) {
            worst = worst.max((e - f).abs() / e.abs().max(1.0));
        }
    }
    Ok(within(worst, 1e-3, "max relative gap"))
}

fn empirical_ntk_psd() -> Result<(bool, String)> {
    let mut rng = rng(6);
    let a = random_graph(12, 0.3, &mut rng)?.to_dense();
    let x = Array2::from_shape_fn((12, 3), |_| rng.random_range(-1.0..1.0));
    let ntk = empirical_ntk(&FiniteGnnConfig::new(2, 32), x.view(), a.view(), 3)?;
    let min = linalg::min_eigenvalue(ntk.view());
    let scale = linalg::frobenius_norm(ntk.view());
    Ok((
        min >= -1e-8 * (1.0 + scale),
        format!("min eigenvalue {min:.2e}"),
    ))
}

fn alignment_axioms() -> Result<(bool, String)> {
    let mut rng = rng(7);
    let k1 = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
    let k2 = Array2::from_shape_fn((8, 8), |_| rng.random_range(-1.0..1.0));
    let a12 = alignment(k1.view(), k2.view())?;
    let symmetric = a12 == alignment(k2.view(), k1.view())?;
    let scaled = (alignment((&k1 * 3.7).view(), k2.view())? - a12).abs() <= 1e-12;
    let self_one = (alignment(k1.view(), k1.view())? - 1.0).abs() <= 1e-12;
    let example = (alignment(Array2::eye(2).view(), Array2::ones((2, 2)).view())?
        - std::f64::consts::FRAC_1_SQRT_2)
        .abs()
        <= 1e-12;
    Ok((
        symmetric && scaled && self_one && example,
        format!("symmetric {symmetric}, scale invariant {scaled}, self {self_one}, identity/ones {example}"),
    ))
}

fn bound_monotone() -> Result<(bool, String)> {
    let ds = small_sbm(0.5)?;
    let a = ds.graph.normalize()?.to_dense();
    let train = &ds.split.train;
    let a_train = linalg::submatrix(a.view(), train, train);
    let y = ds.train_targets()?;
    let mut rng = rng(8);
    let mut points = Vec::new();
    for _ in 0..30 {
        let mut perm: Vec<usize> = (0..train.len()).collect();
        for i in (1..perm.len()).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let permuted = linalg::submatrix(a_train.view(), &perm, &perm);
        let r = generalization_bound(permuted.view(), y.view(), &BoundConfig::default())?;
        points.push((r.homophily.unwrap_or(0.0), r.bound));
    }
    points.sort_by(|p, q| p.0.total_cmp(&q.0));
    let violations = points
        .windows(2)
        .filter(|w| {
            w[1].0 > w[0].0 + 1e-12 && w[1].1.partial_cmp(&w[0].1) != Some(std::cmp::Ordering::Less)
        })
        .count();
    Ok((
        violations == 0,
        format!("{violations} ordering violations over 30 relabelings"),
    ))
}

fn homophily_sweep() -> Result<(bool, String)> {
    let mut values = Vec::new();
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let ds = sbm_generate(&SbmConfig {
            lambda,
            ..SbmConfig::default()
        })?;
        let a = ds.graph.normalize()?.to_dense();
        values.push(homophily(a.view(), &ds.labels)?);
    }
    let ok = values.windows(2).all(|w| w[1] < w[0]);
    let shown: Vec<String> = values.iter().map(|v| format!("{v:.4}")).collect();
    Ok((ok, format!("homophily [{}]", shown.join(", "))))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn fast_suites_pass() {
        for suite in [
            Suite::Graph,
            Suite::Oracle,
            Suite::Alignment,
            Suite::Propagation,
        ] {
            for r in run_suite(suite) {
                assert!(r.passed, "{suite}/{}: {}", r.name, r.detail);
            }
        }
    }
}
