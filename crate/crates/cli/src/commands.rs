use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use ndarray::Array2;
use resprop::alignment::{
    alignment_report, generalization_bound, homophily, AlignOptions, BoundConfig,
};
use resprop::dataset::{load_dataset, write_dataset, LoadOptions, NodeDataset};
use resprop::gntk::{
    deep_decoupled_gntk, gntk_compute, linear_gnn_gntk, read_theta, two_layer_gntk, write_theta,
    InputMode,
};
use resprop::graph::DEFAULT_DENSE_LIMIT;
use resprop::kernels::{
    kernel_matrix, kernel_regression, median_bandwidth, KernelMatrix, KernelSpec,
};
use resprop::linalg;
use resprop::propagation::{
    generalized_rp_grid, lp_run, rp_eta_grid, rp_run, run_with, DenseOperator, EtaChoice,
    GridSearch, LpMode, RpConfig, RunOutcome, Targets, AUTO_ETA_FRACTION, ETA_GRID,
};
use resprop::synth::{sbm_generate, SbmConfig};
use resprop::verify::{run_suite, Suite};
use resprop::{Error, Result, SparseGraph};
use serde_json::{json, Value};

use crate::output::{OutputDir, CURVES_FILE, THETA_FILE};
use crate::{
    AlignArgs, BoundArgs, Command, DataArgs, GntkArgs, GntkForm, GrpArgs, KernelArgs, KernelKind,
    KernelRegArgs, LpArgs, RpArgs, SbmArgs, SuiteArg, TrainArgs, VerifyArgs,
};

const SIGMA_MULTIPLIERS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];
const GRID_POWERS: std::ops::RangeInclusive<usize> = 1..=10;

pub fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Rp(a) => rp(a),
        Command::Grp(a) => grp(a),
        Command::Lp(a) => lp(a),
        Command::KernelReg(a) => kernel_reg(a),
        Command::Gntk(a) => gntk(a),
        Command::Align(a) => align(a),
        Command::Bound(a) => bound(a),
        Command::Sbm(a) => sbm(a),
        Command::Verify(a) => verify(a),
    }
    .map(|()| ExitCode::SUCCESS)
    .or_else(|e| match e {
        Failure::Checks => Ok(ExitCode::FAILURE),
        Failure::Lib(e) => Err(e),
    })
}

enum Failure {
    /// Checks ran but some failed.
    Checks,
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Error {
    Error::InvalidConfig(msg.into())
}

struct Loaded {
    ds: NodeDataset,
    g: SparseGraph,
}

fn load(args: &DataArgs) -> Result<Loaded> {
    let ds = load_dataset(
        &args.data,
        LoadOptions {
            row_normalize: args.row_normalize,
        },
    )?;
    let g = ds.graph.normalize()?;
    Ok(Loaded { ds, g })
}

fn data_echo(args: &DataArgs, ds: &NodeDataset) -> Value {
    json!({
        "path": args.data,
        "row_normalize": args.row_normalize,
        "nodes": ds.n(),
        "edges": ds.graph.upper_entries().filter(|&(i, j, _)| i != j).count(),
        "feature_dim": ds.features.ncols(),
        "classes": ds.num_classes,
        "train": ds.split.train.len(),
        "val": ds.split.val.len(),
        "test": ds.split.test.len(),
    })
}

fn rp_config(t: &TrainArgs, eta: f64) -> RpConfig {
    RpConfig {
        eta,
        k: t.k,
        max_steps: t.max_steps,
        patience: (t.patience > 0).then_some(t.patience),
    }
}

fn outcome_results(out: &RunOutcome) -> Value {
    let r = &out.report;
    json!({
        "metric": r.metric,
        "best_step": r.best_step,
        "val_metric": r.best_val_metric,
        "test_metric": r.test_metric,
        "steps_run": r.steps_run,
        "stopped_early": r.stopped_early,
        "diverged_at": r.diverged_at,
        "total_seconds": r.total_seconds,
        "mean_step_seconds": r.mean_step_seconds(),
    })
}

fn summarize(command: &str, out: &RunOutcome, metrics: &Path) {
    let r = &out.report;
    println!(
        "{command}: best step {}, val {} {:.4}, test {} {:.4}, {:.2}s -> {}",
        r.best_step,
        r.metric,
        r.best_val_metric,
        r.metric,
        r.test_metric,
        r.total_seconds,
        metrics.display()
    );
}

fn grid_results(grid: &GridSearch) -> Value {
    json!({ "selected": grid.best_point(), "points": grid.points })
}

fn rp(a: RpArgs) -> CmdResult {
    let Loaded { ds, g } = load(&a.data)?;
    let out_dir = OutputDir::create(&a.out.out)?;
    let (outcome, eta_choice, grid) = if a.eta_grid {
        let grid = rp_eta_grid(&ds, &g, &ETA_GRID, &rp_config(&a.train, 1.0))?;
        (
            grid.outcome.clone(),
            json!({ "grid": ETA_GRID }),
            Some(grid),
        )
    } else {
        let eta = match a.train.eta {
            EtaChoice::Auto => resprop::propagation::auto_eta(&g, a.train.k, &ds.split.train)?,
            EtaChoice::Fixed(v) => v,
        };
        let out = rp_run(&ds, &g, &rp_config(&a.train, eta))?;
        (out, json!(a.train.eta), None)
    };
    outcome.report.write_curves_csv(out_dir.path(CURVES_FILE))?;
    let config = json!({
        "data": data_echo(&a.data, &ds),
        "k": a.train.k,
        "eta": outcome.report.eta,
        "eta_choice": eta_choice,
        "auto_eta_fraction": AUTO_ETA_FRACTION,
        "max_steps": a.train.max_steps,
        "patience": a.train.patience,
        "seed": a.out.seed,
    });
    let mut results = outcome_results(&outcome);
    if let Some(grid) = &grid {
        results["grid"] = grid_results(grid);
    }
    let path = out_dir.write_record("rp", config, results)?;
    summarize("rp", &outcome, &path);
    Ok(())
}

fn require_features(ds: &NodeDataset) -> Result<()> {
    if ds.features.ncols() == 0 {
        return Err(usage(
            "this command needs node features, but the dataset has none",
        ));
    }
    Ok(())
}

fn build_kernel(k: &KernelArgs, ds: &NodeDataset, seed: u64) -> Result<(KernelMatrix, KernelSpec)> {
    require_features(ds)?;
    let x = ds.features.view();
    let spec = match k.kernel {
        KernelKind::Linear => KernelSpec::Linear,
        KernelKind::Sigmoid => KernelSpec::sigmoid_default(x.ncols()),
        KernelKind::Gaussian => KernelSpec::Gaussian {
            sigma: match k.sigma {
                Some(s) => s,
                None => median_bandwidth(x, seed)?,
            },
        },
    };
    if k.sigma.is_some() && k.kernel != KernelKind::Gaussian {
        return Err(usage("--sigma only applies to the gaussian kernel"));
    }
    Ok((kernel_matrix(spec, x)?, spec))
}

fn check_dense(n: usize) -> Result<()> {
    if n > DEFAULT_DENSE_LIMIT {
        return Err(Error::DenseLimit {
            n,
            limit: DEFAULT_DENSE_LIMIT,
        });
    }
    Ok(())
}

fn grp(a: GrpArgs) -> CmdResult {
    let Loaded { ds, g } = load(&a.data)?;
    check_dense(ds.n())?;
    let out_dir = OutputDir::create(&a.out.out)?;
    let base = rp_config(&a.train, 1.0);
    let (outcome, kernel_echo, grid) = if a.grid {
        if a.kernel.kernel != KernelKind::Gaussian {
            return Err(usage("--grid searches Gaussian bandwidths; use --kernel gaussian").into());
        }
        require_features(&ds)?;
        let median = median_bandwidth(ds.features.view(), a.out.seed)?;
        let sigmas: Vec<f64> = SIGMA_MULTIPLIERS.iter().map(|m| m * median).collect();
        let ks: Vec<usize> = GRID_POWERS.collect();
        let grid = generalized_rp_grid(&ds, &g, &ks, &sigmas, a.train.eta, &base)?;
        let best = grid.best_point();
        let echo = json!({
            "kind": "gaussian",
            "sigma": best.sigma,
            "median_distance": median,
            "sigma_multipliers": SIGMA_MULTIPLIERS,
            "k_grid": ks,
        });
        (grid.outcome.clone(), echo, Some(grid))
    } else {
        let (kernel, spec) = build_kernel(&a.kernel, &ds, a.out.seed)?;
        let op = DenseOperator::generalized(&g, a.train.k, &kernel, &ds.split.train)?;
        let eta = match a.train.eta {
            EtaChoice::Auto => AUTO_ETA_FRACTION * op.max_step_size()?,
            EtaChoice::Fixed(v) => v,
        };
        let s = &ds.split;
        let cfg = rp_config(&a.train, eta);
        let out = run_with(
            &op,
            &s.train,
            &s.val,
            &s.test,
            &Targets::from_dataset(&ds),
            &cfg,
        )?;
        (out, json!(spec), None)
    };
    outcome.report.write_curves_csv(out_dir.path(CURVES_FILE))?;
    let config = json!({
        "data": data_echo(&a.data, &ds),
        "k": outcome.report.k,
        "eta": outcome.report.eta,
        "eta_choice": a.train.eta,
        "kernel": kernel_echo,
        "max_steps": a.train.max_steps,
        "patience": a.train.patience,
        "seed": a.out.seed,
    });
    let mut results = outcome_results(&outcome);
    if let Some(grid) = &grid {
        results["grid"] = grid_results(grid);
    }
    let path = out_dir.write_record("grp", config, results)?;
    summarize("grp", &outcome, &path);
    Ok(())
}

fn score_split(ds: &NodeDataset, predictions: &Array2<f64>) -> (f64, f64) {
    let targets = Targets::from_dataset(ds);
    (
        targets.score(predictions.view(), &ds.split.val),
        targets.score(predictions.view(), &ds.split.test),
    )
}

fn lp(a: LpArgs) -> CmdResult {
    let start = Instant::now();
    let Loaded { ds, g } = load(&a.data)?;
    let out_dir = OutputDir::create(&a.out.out)?;
    let mode = match a.k {
        Some(k) => LpMode::Steps(k),
        None => LpMode::Converged,
    };
    let y = ds.train_targets()?;
    let scores = lp_run(&g, &ds.split.train, y.view(), a.alpha, mode)?;
    let (val, test) = score_split(&ds, &scores);
    let seconds = start.elapsed().as_secs_f64();
    let config = json!({
        "data": data_echo(&a.data, &ds),
        "alpha": a.alpha,
        "mode": mode,
        "seed": a.out.seed,
    });
    let results = json!({ "metric": "accuracy", "val_metric": val, "test_metric": test, "total_seconds": seconds });
    let path = out_dir.write_record("lp", config, results)?;
    println!(
        "lp: val accuracy {val:.4}, test accuracy {test:.4}, {seconds:.2}s -> {}",
        path.display()
    );
    Ok(())
}

/// Dense `A^K M A^K` for symmetric `M`.
fn sandwich(g: &SparseGraph, m: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    let left = g.propagate(m.view(), k)?;
    let mut s = g.propagate(left.t(), k)?;
    linalg::symmetrize_in_place(&mut s);
    Ok(s)
}

fn kernel_reg(a: KernelRegArgs) -> CmdResult {
    let start = Instant::now();
    let Loaded { ds, g } = load(&a.data)?;
    check_dense(ds.n())?;
    let out_dir = OutputDir::create(&a.out.out)?;
    let (kernel, spec) = build_kernel(&a.kernel, &ds, a.out.seed)?;
    let s = sandwich(&g, kernel.values(), a.k)?;
    let y = ds.train_targets()?;
    let fit = kernel_regression(s.view(), &ds.split.train, y.view(), a.ridge)?;
    let mut predictions = Array2::zeros((ds.n(), ds.num_classes));
    for (row, &i) in ds.split.train.iter().enumerate() {
        predictions.row_mut(i).assign(&y.row(row));
    }
    for (row, &i) in fit.nodes.iter().enumerate() {
        predictions.row_mut(i).assign(&fit.predictions.row(row));
    }
    let (val, test) = score_split(&ds, &predictions);
    let seconds = start.elapsed().as_secs_f64();
    let config = json!({
        "data": data_echo(&a.data, &ds),
        "k": a.k,
        "kernel": spec,
        "ridge": a.ridge,
        "seed": a.out.seed,
    });
    let results = json!({
        "metric": "accuracy",
        "val_metric": val,
        "test_metric": test,
        "min_train_eigenvalue": fit.min_train_eigenvalue,
        "total_seconds": seconds,
    });
    let path = out_dir.write_record("kernel-reg", config, results)?;
    println!(
        "kernel-reg: val accuracy {val:.4}, test accuracy {test:.4}, {seconds:.2}s -> {}",
        path.display()
    );
    Ok(())
}

/// Nodes with known labels and their labels, for alignment against the
/// optimal kernel.
fn labelled(ds: &NodeDataset) -> (Vec<usize>, Vec<i64>) {
    ds.labels
        .iter()
        .enumerate()
        .filter(|(_, &l)| l >= 0)
        .map(|(i, &l)| (i, l))
        .unzip()
}

fn alignment_on_labelled(
    theta: &Array2<f64>,
    a: &Array2<f64>,
    ds: &NodeDataset,
    center: bool,
) -> Result<Value> {
    let (nodes, labels) = labelled(ds);
    let opts = AlignOptions { center };
    let report = if nodes.len() == ds.n() {
        alignment_report(theta.view(), a.view(), &labels, opts)?
    } else {
        let t = linalg::submatrix(theta.view(), &nodes, &nodes);
        let s = linalg::submatrix(a.view(), &nodes, &nodes);
        alignment_report(t.view(), s.view(), &labels, opts)?
    };
    Ok(json!({ "labelled_nodes": nodes.len(), "report": report }))
}

fn gntk(a: GntkArgs) -> CmdResult {
    let start = Instant::now();
    let Loaded { ds, g } = load(&a.data)?;
    check_dense(ds.n())?;
    let out_dir = OutputDir::create(&a.out.out)?;
    let adj = g.to_dense();
    let onehot = a.onehot || ds.features.ncols() == 0;
    let theta = match a.form {
        GntkForm::Recurrence if onehot => {
            gntk_compute(Array2::eye(ds.n()).view(), adj.view(), a.layers)?
        }
        GntkForm::Recurrence => gntk_compute(ds.features.view(), adj.view(), a.layers)?,
        GntkForm::TwoLayer => two_layer_gntk(adj.view(), InputMode::Onehot)?.theta,
        GntkForm::Decoupled => deep_decoupled_gntk(adj.view(), a.layers, a.c)?,
        GntkForm::Linear => linear_gnn_gntk(adj.view(), a.layers, InputMode::Onehot)?,
    };
    let alignment = alignment_on_labelled(&theta, &adj, &ds, false)?;
    let theta_path = if a.no_dump {
        None
    } else {
        let p = out_dir.path(THETA_FILE);
        write_theta(&p, theta.view())?;
        Some(p)
    };
    let seconds = start.elapsed().as_secs_f64();
    let config = json!({
        "data": data_echo(&a.data, &ds),
        "form": format!("{:?}", a.form).to_lowercase(),
        "layers": a.layers,
        "c": a.c,
        "inputs": if onehot { "onehot" } else { "features" },
    });
    let results = json!({
        "alignment": alignment,
        "min_eigenvalue": linalg::min_eigenvalue(theta.view()),
        "theta": theta_path,
        "total_seconds": seconds,
    });
    let path = out_dir.write_record("gntk", config, results)?;
    println!(
        "gntk: {} x {} kernel, kernel-graph alignment {:.4}, {seconds:.2}s -> {}",
        theta.nrows(),
        theta.ncols(),
        alignment["report"]["kernel_graph"]
            .as_f64()
            .unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn align(a: AlignArgs) -> CmdResult {
    let Loaded { ds, g } = load(&a.data)?;
    check_dense(ds.n())?;
    let theta = read_theta(&a.theta)?;
    if theta.nrows() != ds.n() {
        return Err(Error::Inconsistent(format!(
            "kernel dump covers {} nodes, dataset {}",
            theta.nrows(),
            ds.n()
        ))
        .into());
    }
    let out_dir = OutputDir::create(&a.out.out)?;
    let adj = g.to_dense();
    let alignment = alignment_on_labelled(&theta, &adj, &ds, a.center)?;
    let config = json!({ "data": data_echo(&a.data, &ds), "theta": a.theta, "center": a.center });
    let path = out_dir.write_record("align", config, alignment.clone())?;
    let r = &alignment["report"];
    println!(
        "align: kernel-graph {:.4}, kernel-target {:.4}, homophily {:.4} -> {}",
        r["kernel_graph"].as_f64().unwrap_or(f64::NAN),
        r["kernel_target"].as_f64().unwrap_or(f64::NAN),
        r["homophily"].as_f64().unwrap_or(f64::NAN),
        path.display()
    );
    Ok(())
}

fn bound(a: BoundArgs) -> CmdResult {
    let Loaded { ds, g } = load(&a.data)?;
    let out_dir = OutputDir::create(&a.out.out)?;
    let train = &ds.split.train;
    let a_train = Array2::from_shape_fn((train.len(), train.len()), |(r, c)| {
        g.get(train[r], train[c]).unwrap_or(0.0)
    });
    let cfg = BoundConfig {
        alpha: a.alpha,
        delta: a.delta,
    };
    let report = generalization_bound(a_train.view(), ds.train_targets()?.view(), &cfg)?;
    let config = json!({ "data": data_echo(&a.data, &ds), "alpha": a.alpha, "delta": a.delta });
    let path = out_dir.write_record("bound", config, json!(report))?;
    println!(
        "bound: {:.4} (complexity {:.4}, confidence {:.4}) -> {}",
        report.bound,
        report.complexity_term,
        report.confidence_term,
        path.display()
    );
    Ok(())
}

fn sbm(a: SbmArgs) -> CmdResult {
    let cfg = SbmConfig {
        num_blocks: a.blocks,
        block_size: a.block_size,
        feature_dim: a.features,
        lambda: a.lambda,
        intra_p: a.intra_p,
        inter_p: a.inter_p,
        train_size: a.train,
        val_size: a.val,
        test_size: a.test,
        seed: a.seed,
        ..SbmConfig::default()
    };
    let ds = sbm_generate(&cfg)?;
    write_dataset(&ds, &a.out)?;
    let hom = if ds.n() <= DEFAULT_DENSE_LIMIT {
        Some(homophily(
            ds.graph.normalize()?.to_dense().view(),
            &ds.labels,
        )?)
    } else {
        None
    };
    let edges = ds.graph.upper_entries().filter(|&(i, j, _)| i != j).count();
    let out_dir = OutputDir::create(&a.out)?;
    let results = json!({ "nodes": ds.n(), "edges": edges, "homophily": hom });
    let path = out_dir.write_record("sbm", json!(cfg), results)?;
    println!(
        "sbm: {} nodes, {edges} edges, homophily {} -> {}",
        ds.n(),
        hom.map_or("n/a".into(), |h| format!("{h:.4}")),
        path.display()
    );
    Ok(())
}

fn verify(a: VerifyArgs) -> CmdResult {
    let suites: Vec<Suite> = match a.suite {
        SuiteArg::All => Suite::ALL.to_vec(),
        SuiteArg::Graph => vec![Suite::Graph],
        SuiteArg::Propagation => vec![Suite::Propagation],
        SuiteArg::Gntk => vec![Suite::Gntk],
        SuiteArg::Oracle => vec![Suite::Oracle],
        SuiteArg::Alignment => vec![Suite::Alignment],
    };
    let mut results = Vec::new();
    for suite in suites {
        for r in run_suite(suite) {
            let tag = if r.passed { "PASS" } else { "FAIL" };
            println!(
                "[{tag}] {}/{}: {} ({:.2}s)",
                r.suite, r.name, r.detail, r.seconds
            );
            results.push(r);
        }
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("verify: {} checks, {failed} failed", results.len());
    if let Some(dir) = &a.out {
        let out_dir = OutputDir::create(dir)?;
        let suite = format!("{:?}", a.suite).to_lowercase();
        out_dir.write_record("verify", json!({ "suite": suite }), json!(results))?;
    }
    if failed > 0 {
        Err(Failure::Checks)
    } else {
        Ok(())
    }
}
