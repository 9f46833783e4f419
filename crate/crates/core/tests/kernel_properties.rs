mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use resprop::alignment::{
    alignment, alignment_report, generalization_bound, optimal_kernel, AlignOptions, BoundConfig,
};
use resprop::gntk::{
    gntk_compute, gntk_compute_with, gntk_stack, linear_gnn_gntk, two_layer_gntk, GntkOptions,
    InputMode,
};
use resprop::oracle::{
    empirical_ntk, finite_gnn_forward, init_weights, jacobian, train_linear_gnn_gd, FiniteGnnConfig,
};

fn symmetric_error(m: &Array2<f64>) -> f64 {
    max_abs_diff(m.view(), m.t())
}

fn random_matrix(n: usize, rng: &mut impl Rng) -> Array2<f64> {
    Array2::from_shape_fn((n, n), |_| rng.random_range(-1.0..1.0))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn gntk_symmetric_psd(n in 1usize..60, p in 0.0f64..0.4, layers in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let a = dense_normalized(n, &edges);
        let x = Array2::from_shape_fn((n, 5), |_| rng.random_range(-1.0..1.0));
        let theta = gntk_compute(x.view(), a.view(), layers).unwrap();
        prop_assert!(symmetric_error(&theta) <= 1e-8);
        prop_assert!(eigenvalues(theta.view())[0] >= -1e-6);
        let closed = two_layer_gntk(a.view(), InputMode::Onehot).unwrap().theta;
        prop_assert!(eigenvalues(closed.view())[0] >= -1e-6);
        let linear = linear_gnn_gntk(a.view(), 1, InputMode::Onehot).unwrap();
        prop_assert!(eigenvalues(linear.view())[0] >= -1e-6);
    }

    #[test]
    fn recurrence_equals_closed_form(n in 1usize..=60, p in 0.0f64..0.5, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let a = dense_normalized(n, &edges);
        let x = Array2::<f64>::eye(n);
        let rec = gntk_compute_with(x.view(), a.view(), 2, &GntkOptions::first_layer_only()).unwrap();
        let closed = two_layer_gntk(a.view(), InputMode::Onehot).unwrap().theta;
        prop_assert!(max_abs_diff(rec.view(), closed.view()) <= 1e-8);
    }

    #[test]
    fn input_layer_is_homogeneous(n in 1usize..30, p in 0.0f64..0.4, s in 0.1f64..10.0, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let a = dense_normalized(n, &edges);
        let x = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
        let opts = GntkOptions::default();
        let base = gntk_stack(x.view(), a.view(), 2, &opts).unwrap();
        let scaled = gntk_stack((&x * s).view(), a.view(), 2, &opts).unwrap();
        let expect = &base.layers[0].theta * (s * s);
        let tol = 1e-10 * (1.0 + s * s);
        prop_assert!(max_abs_diff(scaled.layers[0].theta.view(), expect.view()) <= tol);
    }

    #[test]
    fn jacobian_matches_central_differences(n in 1usize..=6, width in 1usize..=8, layers in 1usize..=3, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, 0.5, &mut rng);
        let a = dense_normalized(n, &edges);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mut cfg = FiniteGnnConfig::new(layers, width);
        cfg.trainable = (0..layers).map(|_| rng.random()).collect();
        prop_assume!(cfg.trainable.iter().any(|&t| t));
        let w = init_weights(&cfg, 3, seed).unwrap();
        let jac = jacobian(&cfg, &w, x.view(), a.view()).unwrap();
        let h = 1e-6;
        let mut col = 0;
        for l in (0..layers).filter(|&l| cfg.trainable[l]) {
            for idx in 0..w[l].len() {
                let mut plus = w.clone();
                let mut minus = w.clone();
                plus[l].as_slice_mut().unwrap()[idx] += h;
                minus[l].as_slice_mut().unwrap()[idx] -= h;
                let fp = finite_gnn_forward(&cfg, &plus, x.view(), a.view()).unwrap();
                let fm = finite_gnn_forward(&cfg, &minus, x.view(), a.view()).unwrap();
                for i in 0..n {
                    let fd = (fp[[i, 0]] - fm[[i, 0]]) / (2.0 * h);
                    let exact = jac[[i, col]];
                    // ReLU kinks inside the stencil give first-order error;
                    // the relative bound applies away from them.
                    prop_assert!((fd - exact).abs() <= 1e-3 * exact.abs().max(1.0), "{fd} vs {exact}");
                }
                col += 1;
            }
        }
        prop_assert_eq!(col, jac.ncols());
    }

    #[test]
    fn empirical_ntk_symmetric_psd(n in 1usize..12, width in 1usize..32, seeds in 1usize..4, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, 0.4, &mut rng);
        let a = dense_normalized(n, &edges);
        let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let mut cfg = FiniteGnnConfig::new(2, width);
        cfg.seed = seed;
        let ntk = empirical_ntk(&cfg, x.view(), a.view(), seeds).unwrap();
        prop_assert!(symmetric_error(&ntk) <= 1e-8);
        prop_assert!(eigenvalues(ntk.view())[0] >= -1e-8 * (1.0 + frobenius(ntk.view())));
    }

    #[test]
    fn linear_gnn_starts_at_zero(n in 2usize..20, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, 0.3, &mut rng);
        let a = dense_normalized(n, &edges);
        let x = Array2::<f64>::eye(n);
        let train = vec![0, n - 1];
        let y = Array2::from_shape_fn((2, 2), |_| rng.random_range(-1.0..1.0));
        let snaps = train_linear_gnn_gd(a.view(), 1, x.view(), &train, y.view(), 0.1, 0).unwrap();
        prop_assert_eq!(snaps.len(), 1);
        prop_assert_eq!(&snaps[0].r, &y);
        prop_assert!(snaps[0].r_prime.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn alignment_is_a_cosine(n in 1usize..15, s in 0.01f64..100.0, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let k1 = random_matrix(n, &mut rng);
        let k2 = random_matrix(n, &mut rng);
        let a12 = alignment(k1.view(), k2.view()).unwrap();
        prop_assert_eq!(a12, alignment(k2.view(), k1.view()).unwrap());
        prop_assert!((alignment((&k1 * s).view(), k2.view()).unwrap() - a12).abs() <= 1e-12);
        prop_assert!((a12 - cosine(k1.view(), k2.view())).abs() <= 1e-12);
        prop_assert!((-1.0..=1.0).contains(&a12));
        prop_assert!((alignment(k1.view(), (-&k1).view()).unwrap() + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn report_angles_satisfy_triangle_inequality(n in 2usize..40, p in 0.05f64..0.5, classes in 1usize..5, center in any::<bool>(), seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let a = dense_normalized(n, &edges);
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..classes as i64)).collect();
        let theta = two_layer_gntk(a.view(), InputMode::Onehot).unwrap().theta;
        let opts = AlignOptions { center };
        let report = alignment_report(theta.view(), a.view(), &labels, opts);
        // Centering can annihilate a constant matrix.
        prop_assume!(report.is_ok());
        let r = report.unwrap();
        let (ab, bc, ac) = (r.kernel_graph.acos(), r.homophily.acos(), r.kernel_target.acos());
        for (x, y, z) in [(ab, bc, ac), (ab, ac, bc), (bc, ac, ab)] {
            prop_assert!(z <= x + y + 1e-8);
        }
        prop_assert_eq!(r.centered, center);
    }

    #[test]
    fn optimal_kernel_is_psd(labels in prop::collection::vec(0i64..5, 1..60)) {
        let t = optimal_kernel(&labels, 5).unwrap();
        prop_assert!(eigenvalues(t.view())[0] >= -1e-10);
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                prop_assert_eq!(t[[i, j]], f64::from(u8::from(labels[i] == labels[j])));
            }
        }
    }

    #[test]
    fn bound_matches_direct_evaluation(n in 1usize..30, p in 0.0f64..0.5, alpha in 0.05f64..0.95, delta in 0.01f64..1.0, seed in any::<u64>()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let a = dense_normalized(n, &edges);
        let labels: Vec<i64> = (0..n).map(|_| rng.random_range(0..3)).collect();
        let nodes: Vec<usize> = (0..n).collect();
        let y = one_hot(&labels, &nodes, 3);
        let cfg = BoundConfig { alpha, delta };
        let report = generalization_bound(a.view(), y.view(), &cfg).unwrap();

        let system = Array2::<f64>::eye(n) - &a * alpha;
        let theta = inverse(system.view());
        let quadratic: f64 = (0..3)
            .map(|c| {
                let col = y.column(c).to_owned();
                col.dot(&system.dot(&col))
            })
            .sum();
        let trace: f64 = theta.diag().sum();
        let nl = n as f64;
        let direct = (quadratic * trace).sqrt() / nl + ((1.0 / delta).ln() / nl).sqrt();
        prop_assert!((report.bound - direct).abs() <= 1e-9 * direct.max(1.0));
        prop_assert!((report.quadratic - quadratic).abs() <= 1e-9 * nl);
        prop_assert!((report.trace - trace).abs() <= 1e-9 * trace);
    }
}

#[test]
fn bound_on_edgeless_graph_is_one_plus_confidence() {
    let a = Array2::<f64>::zeros((4, 4));
    let y = Array2::from_shape_fn((4, 1), |_| 1.0);
    let r = generalization_bound(
        a.view(),
        y.view(),
        &BoundConfig {
            alpha: 0.5,
            delta: 1.0,
        },
    )
    .unwrap();
    assert!((r.bound - 1.0).abs() < 1e-15);
    assert_eq!(r.confidence_term, 0.0);
    assert!(r.homophily.is_none());
}
