//! Residual propagation (RP), its kernel-generalized form, and the label
//! propagation (LP) baseline.
//!
//! RP keeps residuals `R` on the training nodes and `R'` on the others,
//! starting from `R = Y`, `R' = 0`, and repeatedly applies
//!
//! ```text
//! [R, R'] <- [R, R'] - eta * S [R, 0]
//! ```
//!
//! with `S = A^K` (basic) or `S = A^K K(X, X) A^K` (generalized). Predictions
//! are `F = Y - R` on training nodes and `F' = -R'` elsewhere.

use std::io::Write;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::dataset::NodeDataset;
use crate::error::{Error, Result};
use crate::graph::{SparseGraph, DEFAULT_DENSE_LIMIT};
use crate::kernels::KernelMatrix;
use crate::linalg::{self, PowerIterationOptions};

pub const DEFAULT_PATIENCE: usize = 20;
/// `--eta auto` resolves to this fraction of the largest convergent step.
pub const AUTO_ETA_FRACTION: f64 = 0.9;
/// Step sizes tried when the bound is not computed.
pub const ETA_GRID: [f64; 7] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0];
/// Eigenvalue tolerance separating PD, PSD and indefinite blocks.
pub const DEFINITENESS_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RpConfig {
    pub eta: f64,
    /// Propagation power `K`.
    pub k: usize,
    pub max_steps: usize,
    /// Stop after this many steps without a strictly better validation
    /// score. `None` runs all `max_steps`.
    pub patience: Option<usize>,
}

impl Default for RpConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            k: 3,
            max_steps: 1000,
            patience: Some(DEFAULT_PATIENCE),
        }
    }
}

impl RpConfig {
    fn check_eta(&self) -> Result<()> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::config(format!(
                "step size must be finite and >= 0, got {}",
                self.eta
            )));
        }
        Ok(())
    }

    fn check_run(&self) -> Result<()> {
        self.check_eta()?;
        if self.eta == 0.0 {
            return Err(Error::config("step size must be positive"));
        }
        Ok(())
    }
}

/// Training residuals `R`, non-training residuals `R'` and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualState {
    pub r: Array2<f64>,
    pub r_prime: Array2<f64>,
    pub t: usize,
    // F accumulated directly rather than as Y - R, which loses the low bits
    // of small updates.
    f: Array2<f64>,
    train: Vec<usize>,
    rest: Vec<usize>,
}

impl ResidualState {
    /// Initial state `R = Y`, `R' = 0` for training nodes `train` of an
    /// `n`-node graph.
    pub fn new(n: usize, train: &[usize], y: Array2<f64>) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::Inconsistent("training set is empty".into()));
        }
        if y.nrows() != train.len() {
            return Err(Error::shape(format!(
                "{} label rows for {} training nodes",
                y.nrows(),
                train.len()
            )));
        }
        let mut is_train = vec![false; n];
        for &i in train {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            if std::mem::replace(&mut is_train[i], true) {
                return Err(Error::Inconsistent(format!("training node {i} repeated")));
            }
        }
        let rest: Vec<usize> = (0..n).filter(|&i| !is_train[i]).collect();
        let c = y.ncols();
        Ok(Self {
            f: Array2::zeros((train.len(), c)),
            r_prime: Array2::zeros((rest.len(), c)),
            r: y,
            t: 0,
            train: train.to_vec(),
            rest,
        })
    }

    pub fn n(&self) -> usize {
        self.train.len() + self.rest.len()
    }

    pub fn num_columns(&self) -> usize {
        self.r.ncols()
    }

    pub fn train(&self) -> &[usize] {
        &self.train
    }

    /// Non-training nodes, ascending; row order of `r_prime`.
    pub fn rest(&self) -> &[usize] {
        &self.rest
    }

    /// `F = Y - R`.
    pub fn train_predictions(&self) -> &Array2<f64> {
        &self.f
    }

    /// `F' = -R'`.
    pub fn rest_predictions(&self) -> Array2<f64> {
        -&self.r_prime
    }

    /// `n x c` predictions in node order.
    pub fn predictions(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n(), self.num_columns()));
        for (row, &i) in self.train.iter().enumerate() {
            out.row_mut(i).assign(&self.f.row(row));
        }
        for (row, &i) in self.rest.iter().enumerate() {
            out.row_mut(i)
                .zip_mut_with(&self.r_prime.row(row), |o, &r| *o = -r);
        }
        out
    }

    /// `[R, 0]` as an `n x c` matrix.
    pub fn padded_residual(&self) -> Array2<f64> {
        let mut m = Array2::zeros((self.n(), self.num_columns()));
        for (row, &i) in self.train.iter().enumerate() {
            m.row_mut(i).assign(&self.r.row(row));
        }
        m
    }

    /// `0.5 * ||R||_F^2`.
    pub fn train_loss(&self) -> f64 {
        0.5 * self.r.iter().map(|v| v * v).sum::<f64>()
    }

    fn is_finite(&self) -> bool {
        self.r
            .iter()
            .chain(self.r_prime.iter())
            .all(|v| v.is_finite())
    }

    /// Applies `[R, R'] -= eta * P` for a full `n x c` update `P`.
    fn apply(&mut self, p: ArrayView2<'_, f64>, eta: f64) {
        for (row, &i) in self.train.iter().enumerate() {
            let pi = p.row(i);
            self.r.row_mut(row).zip_mut_with(&pi, |r, &v| *r -= eta * v);
            self.f.row_mut(row).zip_mut_with(&pi, |f, &v| *f += eta * v);
        }
        for (row, &i) in self.rest.iter().enumerate() {
            self.r_prime
                .row_mut(row)
                .zip_mut_with(&p.row(i), |r, &v| *r -= eta * v);
        }
        self.t += 1;
    }
}

/// Linear map `S [R, 0]` driving an RP iteration.
pub trait ResidualOperator {
    fn n(&self) -> usize;
    /// Returns the full `n x c` matrix `S [R, 0]` for the state's residuals.
    fn apply(&self, state: &ResidualState) -> Result<Array2<f64>>;
}

fn require_normalized(g: &SparseGraph) -> Result<()> {
    if g.is_normalized() {
        Ok(())
    } else {
        Err(Error::NotNormalized)
    }
}

fn check_state(n: usize, state: &ResidualState) -> Result<()> {
    if state.n() != n {
        return Err(Error::shape(format!(
            "state covers {} nodes, operator {}",
            state.n(),
            n
        )));
    }
    Ok(())
}

/// `S = A^K`, applied as `K` sparse products.
#[derive(Debug, Clone, Copy)]
pub struct GraphOperator<'a> {
    g: &'a SparseGraph,
    k: usize,
}

impl<'a> GraphOperator<'a> {
    pub fn new(g: &'a SparseGraph, k: usize) -> Result<Self> {
        require_normalized(g)?;
        Ok(Self { g, k })
    }
}

impl ResidualOperator for GraphOperator<'_> {
    fn n(&self) -> usize {
        self.g.n()
    }

    fn apply(&self, state: &ResidualState) -> Result<Array2<f64>> {
        check_state(self.n(), state)?;
        self.g.propagate(state.padded_residual().view(), self.k)
    }
}

/// `S = A^K K A^K`: two sparse propagations around one dense kernel product.
#[derive(Debug, Clone, Copy)]
pub struct KernelOperator<'a> {
    g: &'a SparseGraph,
    k: usize,
    kernel: &'a KernelMatrix,
}

impl<'a> KernelOperator<'a> {
    pub fn new(g: &'a SparseGraph, k: usize, kernel: &'a KernelMatrix) -> Result<Self> {
        require_normalized(g)?;
        if kernel.n() != g.n() {
            return Err(Error::shape(format!(
                "kernel is {}x{}, graph has {} nodes",
                kernel.n(),
                kernel.n(),
                g.n()
            )));
        }
        Ok(Self { g, k, kernel })
    }
}

impl ResidualOperator for KernelOperator<'_> {
    fn n(&self) -> usize {
        self.g.n()
    }

    fn apply(&self, state: &ResidualState) -> Result<Array2<f64>> {
        check_state(self.n(), state)?;
        let inner = self.g.propagate(state.padded_residual().view(), self.k)?;
        let mixed = self.kernel.view().dot(&inner);
        self.g.propagate(mixed.view(), self.k)
    }
}

/// The training columns `S[:, X]` of a dense operator. Since `[R, 0]` is
/// zero off the training rows, one step costs `O(n * n_l * c)`.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    columns: Array2<f64>,
    train: Vec<usize>,
}

impl DenseOperator {
    /// Keeps the training columns of a dense symmetric `s`.
    pub fn from_dense(s: ArrayView2<'_, f64>, train: &[usize]) -> Result<Self> {
        let n = linalg::check_square(s, "propagation operator")?;
        if let Some(&i) = train.iter().find(|&&i| i >= n) {
            return Err(Error::IndexOutOfRange { index: i, n });
        }
        Ok(Self {
            columns: s.select(Axis(1), train),
            train: train.to_vec(),
        })
    }

    /// `(A^K K A^K)[:, X]`, formed as `A^K (K (A^K E_X))`.
    pub fn generalized(
        g: &SparseGraph,
        k: usize,
        kernel: &KernelMatrix,
        train: &[usize],
    ) -> Result<Self> {
        KernelOperator::new(g, k, kernel)?;
        let n = g.n();
        let mut indicator = Array2::zeros((n, train.len()));
        for (col, &i) in train.iter().enumerate() {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, n });
            }
            indicator[[i, col]] = 1.0;
        }
        let inner = g.propagate(indicator.view(), k)?;
        let mixed = kernel.view().dot(&inner);
        Ok(Self {
            columns: g.propagate(mixed.view(), k)?,
            train: train.to_vec(),
        })
    }

    pub fn columns(&self) -> &Array2<f64> {
        &self.columns
    }

    /// `S_XX`, symmetrized.
    pub fn train_block(&self) -> Array2<f64> {
        let mut b = self.columns.select(Axis(0), &self.train);
        linalg::symmetrize_in_place(&mut b);
        b
    }

    /// `2 / sigma_max(S_XX)`.
    pub fn max_step_size(&self) -> Result<f64> {
        step_from_sigma(
            linalg::symmetric_eigenvalues(self.train_block().view())
                .iter()
                .fold(0.0f64, |m, v| m.max(v.abs())),
        )
    }
}

impl ResidualOperator for DenseOperator {
    fn n(&self) -> usize {
        self.columns.nrows()
    }

    fn apply(&self, state: &ResidualState) -> Result<Array2<f64>> {
        check_state(self.n(), state)?;
        if state.train() != self.train.as_slice() {
            return Err(Error::shape("operator built for a different training set"));
        }
        Ok(self.columns.dot(&state.r))
    }
}

/// One update with a caller-supplied operator.
pub fn step_with<O: ResidualOperator + ?Sized>(
    op: &O,
    state: &ResidualState,
    eta: f64,
) -> Result<ResidualState> {
    let mut next = state.clone();
    let p = op.apply(state)?;
    next.apply(p.view(), eta);
    Ok(next)
}

/// Runs `steps` updates in place; stops with [`Error::Divergence`] at the
/// first non-finite residual.
pub fn run_steps<O: ResidualOperator + ?Sized>(
    op: &O,
    state: &mut ResidualState,
    eta: f64,
    steps: usize,
) -> Result<()> {
    for _ in 0..steps {
        let p = op.apply(state)?;
        state.apply(p.view(), eta);
        if !state.is_finite() {
            return Err(Error::Divergence { step: state.t });
        }
    }
    Ok(())
}

/// One basic RP step, `S = A^K`.
pub fn rp_step(
    state: &ResidualState,
    g_norm: &SparseGraph,
    cfg: &RpConfig,
) -> Result<ResidualState> {
    cfg.check_eta()?;
    step_with(&GraphOperator::new(g_norm, cfg.k)?, state, cfg.eta)
}

/// One generalized RP step, `S = A^K K A^K`.
pub fn generalized_rp_step(
    state: &ResidualState,
    g_norm: &SparseGraph,
    kernel: &KernelMatrix,
    cfg: &RpConfig,
) -> Result<ResidualState> {
    cfg.check_eta()?;
    step_with(&KernelOperator::new(g_norm, cfg.k, kernel)?, state, cfg.eta)
}

/// Ground truth used to score predictions.
#[derive(Debug, Clone)]
pub enum Targets {
    /// One class per node, `-1` for unknown. Scored by accuracy.
    Classes {
        labels: Vec<i64>,
        num_classes: usize,
    },
    /// Independent binary columns (`n x c`, entries 0 or 1). Scored by
    /// ROC-AUC averaged over columns.
    Binary(Array2<f64>),
}

impl Targets {
    pub fn from_dataset(ds: &NodeDataset) -> Self {
        Targets::Classes {
            labels: ds.labels.clone(),
            num_classes: ds.num_classes,
        }
    }

    pub fn metric_name(&self) -> &'static str {
        match self {
            Targets::Classes { .. } => "accuracy",
            Targets::Binary(_) => "roc_auc",
        }
    }

    /// `Y` for the given training nodes.
    pub fn train_matrix(&self, train: &[usize]) -> Result<Array2<f64>> {
        match self {
            Targets::Classes {
                labels,
                num_classes,
            } => crate::dataset::one_hot(labels, *num_classes, train),
            Targets::Binary(y) => {
                if let Some(&i) = train.iter().find(|&&i| i >= y.nrows()) {
                    return Err(Error::IndexOutOfRange {
                        index: i,
                        n: y.nrows(),
                    });
                }
                Ok(y.select(Axis(0), train))
            }
        }
    }

    fn n(&self) -> usize {
        match self {
            Targets::Classes { labels, .. } => labels.len(),
            Targets::Binary(y) => y.nrows(),
        }
    }

    /// Metric over `nodes` given `n x c` predictions. NaN if undefined
    /// (no labelled node, or no column with both classes).
    pub fn score(&self, predictions: ArrayView2<'_, f64>, nodes: &[usize]) -> f64 {
        match self {
            Targets::Classes { labels, .. } => {
                let mut hit = 0usize;
                let mut total = 0usize;
                for &i in nodes {
                    if labels[i] < 0 {
                        continue;
                    }
                    total += 1;
                    if argmax(predictions.row(i).iter().copied()) as i64 == labels[i] {
                        hit += 1;
                    }
                }
                if total == 0 {
                    f64::NAN
                } else {
                    hit as f64 / total as f64
                }
            }
            Targets::Binary(y) => {
                let mut sum = 0.0;
                let mut cols = 0usize;
                for c in 0..y.ncols() {
                    let scores: Vec<f64> = nodes.iter().map(|&i| predictions[[i, c]]).collect();
                    let truth: Vec<bool> = nodes.iter().map(|&i| y[[i, c]] > 0.5).collect();
                    if let Some(auc) = roc_auc(&scores, &truth) {
                        sum += auc;
                        cols += 1;
                    }
                }
                if cols == 0 {
                    f64::NAN
                } else {
                    sum / cols as f64
                }
            }
        }
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_v = f64::NEG_INFINITY;
    for (i, v) in values.into_iter().enumerate() {
        if v > best_v {
            best = i;
            best_v = v;
        }
    }
    best
}

pub fn argmax_rows(m: ArrayView2<'_, f64>) -> Vec<usize> {
    m.rows()
        .into_iter()
        .map(|r| argmax(r.iter().copied()))
        .collect()
}

/// Area under the ROC curve via the rank-sum statistic with average ranks
/// for ties. `None` when only one class is present.
pub fn roc_auc(scores: &[f64], truth: &[bool]) -> Option<f64> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| truth[k]).count() as f64 * avg;
        i = j + 1;
    }
    let pos = pos as f64;
    Some((rank_sum - pos * (pos + 1.0) / 2.0) / (pos * neg as f64))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CurvePoint {
    pub step: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub test_metric: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub metric: String,
    pub eta: f64,
    pub k: usize,
    pub steps_run: usize,
    pub best_step: usize,
    pub best_val_metric: f64,
    pub test_metric: f64,
    pub stopped_early: bool,
    /// Step at which residuals became non-finite, if they did.
    pub diverged_at: Option<usize>,
    pub total_seconds: f64,
    pub curves: Vec<CurvePoint>,
}

impl RunReport {
    pub fn write_curves_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| Error::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
        writeln!(w, "step,train_loss,val_metric,test_metric,seconds").map_err(io)?;
        for p in &self.curves {
            writeln!(
                w,
                "{},{},{},{},{}",
                p.step, p.train_loss, p.val_metric, p.test_metric, p.seconds
            )
            .map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn mean_step_seconds(&self) -> f64 {
        if self.steps_run == 0 {
            0.0
        } else {
            self.curves.iter().skip(1).map(|p| p.seconds).sum::<f64>() / self.steps_run as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: RunReport,
    /// `n x c` predictions at the best validation step.
    pub predictions: Array2<f64>,
    /// Row-wise argmax of `predictions`.
    pub predicted: Vec<usize>,
}

/// Iterates `op` from the initial state, tracking validation and test
/// metrics, and keeps the predictions of the first step with the best
/// validation score. With an empty validation set the last step is kept.
pub fn run_with<O: ResidualOperator + ?Sized>(
    op: &O,
    train: &[usize],
    val: &[usize],
    test: &[usize],
    targets: &Targets,
    cfg: &RpConfig,
) -> Result<RunOutcome> {
    cfg.check_run()?;
    if targets.n() != op.n() {
        return Err(Error::shape(format!(
            "targets cover {} nodes, operator {}",
            targets.n(),
            op.n()
        )));
    }
    if val.is_empty() && cfg.patience.is_some() {
        return Err(Error::config(
            "early stopping needs a non-empty validation set",
        ));
    }
    let mut state = ResidualState::new(op.n(), train, targets.train_matrix(train)?)?;
    let started = Instant::now();

    let mut preds = state.predictions();
    let mut curves = vec![CurvePoint {
        step: 0,
        train_loss: state.train_loss(),
        val_metric: targets.score(preds.view(), val),
        test_metric: targets.score(preds.view(), test),
        seconds: 0.0,
    }];
    let mut best_step = 0;
    let mut best_val = curves[0].val_metric;
    let mut best_preds = preds.clone();
    let mut stopped_early = false;
    let mut diverged_at = None;

    for step in 1..=cfg.max_steps {
        let tick = Instant::now();
        let p = op.apply(&state)?;
        state.apply(p.view(), cfg.eta);
        if !state.is_finite() {
            diverged_at = Some(step);
            break;
        }
        preds = state.predictions();
        let point = CurvePoint {
            step,
            train_loss: state.train_loss(),
            val_metric: targets.score(preds.view(), val),
            test_metric: targets.score(preds.view(), test),
            seconds: tick.elapsed().as_secs_f64(),
        };
        let improved = if val.is_empty() {
            true
        } else {
            point.val_metric > best_val || (best_val.is_nan() && !point.val_metric.is_nan())
        };
        curves.push(point);
        if improved {
            best_step = step;
            best_val = curves[step].val_metric;
            best_preds.assign(&preds);
        }
        if let Some(patience) = cfg.patience {
            if step - best_step >= patience {
                stopped_early = true;
                break;
            }
        }
    }

    let report = RunReport {
        metric: targets.metric_name().to_string(),
        eta: cfg.eta,
        k: cfg.k,
        steps_run: curves.len() - 1,
        best_step,
        best_val_metric: best_val,
        test_metric: curves[best_step].test_metric,
        stopped_early,
        diverged_at,
        total_seconds: started.elapsed().as_secs_f64(),
        curves,
    };
    Ok(RunOutcome {
        predicted: argmax_rows(best_preds.view()),
        predictions: best_preds,
        report,
    })
}

/// Basic RP on a dataset. `g_norm` must be the normalized dataset graph.
pub fn rp_run(ds: &NodeDataset, g_norm: &SparseGraph, cfg: &RpConfig) -> Result<RunOutcome> {
    let op = GraphOperator::new(g_norm, cfg.k)?;
    let s = &ds.split;
    run_with(
        &op,
        &s.train,
        &s.val,
        &s.test,
        &Targets::from_dataset(ds),
        cfg,
    )
}

/// Generalized RP on a dataset, using the precomputed training columns of
/// `A^K K A^K`.
pub fn generalized_rp_run(
    ds: &NodeDataset,
    g_norm: &SparseGraph,
    kernel: &KernelMatrix,
    cfg: &RpConfig,
) -> Result<RunOutcome> {
    let op = DenseOperator::generalized(g_norm, cfg.k, kernel, &ds.split.train)?;
    let s = &ds.split;
    run_with(
        &op,
        &s.train,
        &s.val,
        &s.test,
        &Targets::from_dataset(ds),
        cfg,
    )
}

/// Step size: a fixed value or `AUTO_ETA_FRACTION` of the convergence bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EtaChoice {
    Auto,
    Fixed(f64),
}

impl EtaChoice {
    fn resolve(self, bound: impl FnOnce() -> Result<f64>) -> Result<f64> {
        match self {
            EtaChoice::Auto => Ok(AUTO_ETA_FRACTION * bound()?),
            EtaChoice::Fixed(eta) => Ok(eta),
        }
    }
}

/// `--eta auto` for basic RP.
pub fn auto_eta(g_norm: &SparseGraph, k: usize, train: &[usize]) -> Result<f64> {
    Ok(AUTO_ETA_FRACTION * max_step_size(g_norm, k, train)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridPoint {
    pub k: usize,
    /// Gaussian bandwidth; `None` for basic RP.
    pub sigma: Option<f64>,
    pub eta: f64,
    pub best_step: usize,
    pub val_metric: f64,
    pub test_metric: f64,
}

#[derive(Debug, Clone)]
pub struct GridSearch {
    pub points: Vec<GridPoint>,
    /// Index into `points` of the selected configuration: the first with
    /// the highest validation score.
    pub best: usize,
    pub outcome: RunOutcome,
}

impl GridSearch {
    pub fn best_point(&self) -> &GridPoint {
        &self.points[self.best]
    }
}

fn keep_better(best: &mut Option<(usize, RunOutcome)>, idx: usize, outcome: RunOutcome) {
    let score = outcome.report.best_val_metric;
    let better = match best {
        None => true,
        Some((_, b)) => score > b.report.best_val_metric,
    };
    if better {
        *best = Some((idx, outcome));
    }
}

/// Basic RP over a grid of step sizes, selected on validation.
pub fn rp_eta_grid(
    ds: &NodeDataset,
    g_norm: &SparseGraph,
    etas: &[f64],
    base: &RpConfig,
) -> Result<GridSearch> {
    if etas.is_empty() {
        return Err(Error::config("empty step-size grid"));
    }
    let mut points = Vec::with_capacity(etas.len());
    let mut best = None;
    for (idx, &eta) in etas.iter().enumerate() {
        let out = rp_run(ds, g_norm, &RpConfig { eta, ..*base })?;
        points.push(GridPoint {
            k: base.k,
            sigma: None,
            eta,
            best_step: out.report.best_step,
            val_metric: out.report.best_val_metric,
            test_metric: out.report.test_metric,
        });
        keep_better(&mut best, idx, out);
    }
    let (best, outcome) = best.expect("non-empty grid");
    Ok(GridSearch {
        points,
        best,
        outcome,
    })
}

/// Generalized RP with Gaussian kernels over `sigmas x ks` (bandwidth
/// outer), selected on validation. The squared-distance matrix is shared
/// across bandwidths.
pub fn generalized_rp_grid(
    ds: &NodeDataset,
    g_norm: &SparseGraph,
    ks: &[usize],
    sigmas: &[f64],
    eta: EtaChoice,
    base: &RpConfig,
) -> Result<GridSearch> {
    if ks.is_empty() || sigmas.is_empty() {
        return Err(Error::config("empty hyperparameter grid"));
    }
    let d2 = crate::kernels::squared_distances(ds.features.view())?;
    let train = &ds.split.train;
    let mut points = Vec::with_capacity(ks.len() * sigmas.len());
    let mut best = None;
    for &sigma in sigmas {
        let kernel = crate::kernels::gaussian_from_squared_distances(d2.view(), sigma)?;
        for &k in ks {
            let op = DenseOperator::generalized(g_norm, k, &kernel, train)?;
            let cfg = RpConfig {
                eta: eta.resolve(|| op.max_step_size())?,
                k,
                ..*base
            };
            let s = &ds.split;
            let out = run_with(
                &op,
                &s.train,
                &s.val,
                &s.test,
                &Targets::from_dataset(ds),
                &cfg,
            )?;
            points.push(GridPoint {
                k,
                sigma: Some(sigma),
                eta: cfg.eta,
                best_step: out.report.best_step,
                val_metric: out.report.best_val_metric,
                test_metric: out.report.test_metric,
            });
            keep_better(&mut best, points.len() - 1, out);
        }
    }
    let (best, outcome) = best.expect("non-empty grid");
    Ok(GridSearch {
        points,
        best,
        outcome,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpMode {
    Steps(usize),
    /// Closed form `(1 - alpha)(I - alpha A)^{-1} [Y, 0]`; needs `alpha < 1`.
    Converged,
}

/// Label propagation `F <- alpha A F + (1 - alpha) [Y, 0]` from `F = [Y, 0]`.
/// Returns `n x c` scores.
pub fn lp_run(
    g_norm: &SparseGraph,
    train: &[usize],
    y: ArrayView2<'_, f64>,
    alpha: f64,
    mode: LpMode,
) -> Result<Array2<f64>> {
    require_normalized(g_norm)?;
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    let seed = ResidualState::new(g_norm.n(), train, y.to_owned())?.padded_residual();
    match mode {
        LpMode::Steps(k) => {
            let mut f = seed.clone();
            for _ in 0..k {
                f = g_norm.propagate(f.view(), 1)?;
                if alpha < 1.0 {
                    f.zip_mut_with(&seed, |v, &s| *v = alpha * *v + (1.0 - alpha) * s);
                }
            }
            Ok(f)
        }
        LpMode::Converged => {
            if alpha >= 1.0 {
                return Err(Error::config("converged label propagation needs alpha < 1"));
            }
            let n = g_norm.n();
            if n > DEFAULT_DENSE_LIMIT {
                return Err(Error::DenseLimit {
                    n,
                    limit: DEFAULT_DENSE_LIMIT,
                });
            }
            let mut system = g_norm.to_dense() * -alpha;
            system.diag_mut().mapv_inplace(|v| v + 1.0);
            let f = linalg::cholesky_solve(system.view(), seed.view())?;
            Ok(f * (1.0 - alpha))
        }
    }
}

fn step_from_sigma(sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::config(format!(
            "training block has spectral norm {sigma}; no finite step bound"
        )));
    }
    Ok(2.0 / sigma)
}

/// `2 / sigma_max(A^K_XX)`: dense for graphs up to the dense limit,
/// otherwise power iteration on the implicit restricted operator.
pub fn max_step_size(g_norm: &SparseGraph, k: usize, train: &[usize]) -> Result<f64> {
    max_step_size_with(g_norm, k, train, DEFAULT_DENSE_LIMIT)
}

pub fn max_step_size_with(
    g_norm: &SparseGraph,
    k: usize,
    train: &[usize],
    dense_limit: usize,
) -> Result<f64> {
    require_normalized(g_norm)?;
    let n = g_norm.n();
    if train.is_empty() {
        return Err(Error::Inconsistent("training set is empty".into()));
    }
    if let Some(&i) = train.iter().find(|&&i| i >= n) {
        return Err(Error::IndexOutOfRange { index: i, n });
    }
    let sigma = if n <= dense_limit {
        let s = g_norm.densify_power(k, dense_limit)?;
        let block = linalg::submatrix(s.view(), train, train);
        crate::graph::max_eigenvalue(block.view())?.abs()
    } else {
        let mut padded = Array2::zeros((n, 1));
        linalg::power_iteration(
            train.len(),
            |x, y| {
                padded.fill(0.0);
                for (&i, &v) in train.iter().zip(x) {
                    padded[[i, 0]] = v;
                }
                let out = g_norm
                    .propagate(padded.view(), k)
                    .expect("padded vector has n rows");
                for (yi, &i) in y.iter_mut().zip(train) {
                    *yi = out[[i, 0]];
                }
            },
            PowerIterationOptions::default(),
        )?
        .magnitude
    };
    step_from_sigma(sigma)
}

/// Which row of the convergence table applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `S_XX` positive definite: `R -> 0`, `R' -> -S_X'X S_XX^{-1} Y`.
    PositiveDefinite,
    /// `S_XX` singular PSD and `S` PSD: both limits exist, via the
    /// pseudo-inverse.
    SemiDefinite,
    /// `S_XX` singular PSD but `S` indefinite: `R` converges, `R'` does
    /// not. The returned `R'` limit is only a candidate.
    SemiDefiniteDivergent,
    /// `S_XX` indefinite: no convergence guarantee.
    Indefinite,
}

impl Regime {
    pub fn converges(self) -> bool {
        matches!(self, Regime::PositiveDefinite | Regime::SemiDefinite)
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub regime: Regime,
    /// `R_inf` on training nodes.
    pub train_residual: Array2<f64>,
    /// `F_inf = Y - R_inf`.
    pub train_predictions: Array2<f64>,
    /// `F'_inf = -R'_inf`, rows in `rest` order.
    pub rest_predictions: Array2<f64>,
    pub rest: Vec<usize>,
    pub min_train_eigenvalue: f64,
    /// Smallest eigenvalue of the full operator; computed only when `S_XX`
    /// is singular.
    pub min_operator_eigenvalue: Option<f64>,
}

/// Limit of RP with a dense symmetric operator `s`.
pub fn converged_fixed_point(
    s: ArrayView2<'_, f64>,
    train: &[usize],
    y: ArrayView2<'_, f64>,
) -> Result<FixedPoint> {
    let n = linalg::check_symmetric(s, 1e-8, "propagation operator")?;
    let state = ResidualState::new(n, train, y.to_owned())?;
    let rest = state.rest().to_vec();
    let sxx = linalg::submatrix(s, train, train);
    let srx = linalg::submatrix(s, &rest, train);
    let min_train = linalg::min_eigenvalue(sxx.view());

    if min_train > DEFINITENESS_TOL {
        let coef = linalg::cholesky_solve(sxx.view(), y)?;
        return Ok(FixedPoint {
            regime: Regime::PositiveDefinite,
            train_residual: Array2::zeros(y.raw_dim()),
            train_predictions: y.to_owned(),
            rest_predictions: srx.dot(&coef),
            rest,
            min_train_eigenvalue: min_train,
            min_operator_eigenvalue: None,
        });
    }

    let pinv = linalg::symmetric_pinv(sxx.view(), DEFINITENESS_TOL);
    let coef = pinv.dot(&y);
    let fitted = sxx.dot(&coef);
    let min_full = linalg::min_eigenvalue(s);
    let regime = if min_train < -DEFINITENESS_TOL {
        Regime::Indefinite
    } else if min_full >= -DEFINITENESS_TOL {
        Regime::SemiDefinite
    } else {
        Regime::SemiDefiniteDivergent
    };
    Ok(FixedPoint {
        regime,
        train_residual: &y - &fitted,
        train_predictions: fitted,
        rest_predictions: srx.dot(&coef),
        rest,
        min_train_eigenvalue: min_train,
        min_operator_eigenvalue: Some(min_full),
    })
}

/// Limit of basic RP, `S = A^K`.
pub fn converged_rp_solution(
    g_norm: &SparseGraph,
    k: usize,
    train: &[usize],
    y: ArrayView2<'_, f64>,
) -> Result<FixedPoint> {
    require_normalized(g_norm)?;
    let s = g_norm.densify_power(k, DEFAULT_DENSE_LIMIT)?;
    converged_fixed_point(s.view(), train, y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn path2() -> SparseGraph {
        SparseGraph::from_edges(2, [(0, 1, 1.0)], true)
            .unwrap()
            .normalize()
            .unwrap()
    }

    fn cfg(eta: f64, k: usize) -> RpConfig {
        RpConfig {
            eta,
            k,
            ..Default::default()
        }
    }

    #[test]
    fn one_step_on_path() {
        let g = path2();
        let s0 = ResidualState::new(2, &[0], array![[1.0]]).unwrap();
        let s1 = rp_step(&s0, &g, &cfg(1.0, 1)).unwrap();
        assert_abs_diff_eq!(s1.r[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s1.r_prime[[0, 0]], -0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(s1.rest_predictions()[[0, 0]], 0.5, epsilon = 1e-15);
        assert_eq!(s1.t, 1);
    }

    #[test]
    fn zero_step_and_zero_labels() {
        let g = path2();
        let s0 = ResidualState::new(2, &[0], array![[1.0]]).unwrap();
        let s1 = rp_step(&s0, &g, &cfg(0.0, 1)).unwrap();
        assert_eq!(s1.r, s0.r);
        assert_eq!(s1.r_prime, s0.r_prime);
        assert_eq!(s1.t, 1);

        let mut z = ResidualState::new(2, &[0], array![[0.0]]).unwrap();
        run_steps(&GraphOperator::new(&g, 2).unwrap(), &mut z, 1.0, 10).unwrap();
        assert!(z.r.iter().chain(z.r_prime.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn identity_kernel_step_matches_doubled_power() {
        let g = path2();
        let kernel = KernelMatrix::new(Array2::eye(2)).unwrap();
        let s0 = ResidualState::new(2, &[0], array![[1.0]]).unwrap();
        let a = generalized_rp_step(&s0, &g, &kernel, &cfg(1.0, 1)).unwrap();
        let b = rp_step(&s0, &g, &cfg(1.0, 2)).unwrap();
        assert_abs_diff_eq!(a.rest_predictions()[[0, 0]], 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(a.r, b.r, epsilon = 1e-15);
    }

    #[test]
    fn unnormalized_graph_rejected() {
        let raw = SparseGraph::from_edges(2, [(0, 1, 1.0)], true).unwrap();
        let s0 = ResidualState::new(2, &[0], array![[1.0]]).unwrap();
        assert!(matches!(
            rp_step(&s0, &raw, &cfg(1.0, 1)),
            Err(Error::NotNormalized)
        ));
    }

    #[test]
    fn state_shape_mismatch() {
        let g = path2();
        let s0 = ResidualState::new(3, &[0], array![[1.0]]).unwrap();
        assert!(matches!(
            rp_step(&s0, &g, &cfg(1.0, 1)),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(ResidualState::new(2, &[0], array![[1.0], [0.0]]).is_err());
    }

    #[test]
    fn lp_examples() {
        let g = path2();
        let y = array![[1.0]];
        let f = lp_run(&g, &[0], y.view(), 1.0, LpMode::Steps(1)).unwrap();
        assert_abs_diff_eq!(f[[1, 0]], 0.5, epsilon = 1e-15);
        let f0 = lp_run(&g, &[0], y.view(), 0.7, LpMode::Steps(0)).unwrap();
        assert_eq!(f0, array![[1.0], [0.0]]);
        assert!(lp_run(&g, &[0], y.view(), 1.0, LpMode::Converged).is_err());
    }

    #[test]
    fn lp_converged_matches_long_iteration() {
        let g = SparseGraph::from_edges(4, [(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0)], true)
            .unwrap()
            .normalize()
            .unwrap();
        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let exact = lp_run(&g, &[0, 3], y.view(), 0.8, LpMode::Converged).unwrap();
        let iter = lp_run(&g, &[0, 3], y.view(), 0.8, LpMode::Steps(400)).unwrap();
        assert_abs_diff_eq!(exact, iter, epsilon = 1e-12);
    }

    #[test]
    fn step_size_examples() {
        let edgeless = SparseGraph::from_edges(3, [], true)
            .unwrap()
            .normalize()
            .unwrap();
        assert_abs_diff_eq!(
            max_step_size(&edgeless, 3, &[0, 2]).unwrap(),
            2.0,
            epsilon = 1e-6
        );
        let g = path2();
        assert_abs_diff_eq!(max_step_size(&g, 2, &[0, 1]).unwrap(), 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(max_step_size(&g, 2, &[0]).unwrap(), 4.0, epsilon = 1e-6);
        // Implicit operator path.
        assert_abs_diff_eq!(
            max_step_size_with(&g, 2, &[0], 0).unwrap(),
            4.0,
            epsilon = 1e-6
        );
    }

    #[test]
    fn fixed_point_examples() {
        let g = path2();
        let fp = converged_rp_solution(&g, 2, &[0], array![[1.0]].view()).unwrap();
        assert_eq!(fp.regime, Regime::PositiveDefinite);
        assert_abs_diff_eq!(fp.rest_predictions[[0, 0]], 1.0, epsilon = 1e-12);

        let y = array![[1.0, 0.0], [0.0, 1.0]];
        let fp = converged_rp_solution(&g, 1, &[0, 1], y.view());
        // A on the 2-path is singular (eigenvalues 0 and 1).
        let fp = fp.unwrap();
        assert_eq!(fp.regime, Regime::SemiDefinite);
    }

    #[test]
    fn full_training_set_interpolates() {
        let g = SparseGraph::from_edges(3, [(0, 1, 1.0), (1, 2, 1.0)], true)
            .unwrap()
            .normalize()
            .unwrap();
        let y = array![[1.0], [0.0], [2.0]];
        let fp = converged_rp_solution(&g, 2, &[0, 1, 2], y.view()).unwrap();
        assert_eq!(fp.regime, Regime::PositiveDefinite);
        assert_eq!(fp.train_predictions, y);
        assert!(fp.rest.is_empty());
    }

    #[test]
    fn argmax_ties_lowest() {
        assert_eq!(argmax([1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax([0.0, 0.0]), 0);
    }

    #[test]
    fn roc_auc_examples() {
        assert_eq!(roc_auc(&[0.1, 0.9], &[false, true]), Some(1.0));
        assert_eq!(roc_auc(&[0.9, 0.1], &[false, true]), Some(0.0));
        assert_eq!(roc_auc(&[0.5, 0.5], &[false, true]), Some(0.5));
        assert_eq!(roc_auc(&[0.5, 0.5], &[true, true]), None);
    }

    #[test]
    fn run_requires_validation_for_patience() {
        let g = path2();
        let op = GraphOperator::new(&g, 1).unwrap();
        let t = Targets::Classes {
            labels: vec![0, 1],
            num_classes: 2,
        };
        assert!(run_with(&op, &[0], &[], &[1], &t, &cfg(1.0, 1)).is_err());
        let no_patience = RpConfig {
            patience: None,
            max_steps: 3,
            ..cfg(1.0, 1)
        };
        let out = run_with(&op, &[0], &[], &[1], &t, &no_patience).unwrap();
        assert_eq!(out.report.best_step, 3);
        assert_eq!(out.report.steps_run, 3);
    }
}
