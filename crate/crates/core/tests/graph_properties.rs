mod common;

use common::*;
use ndarray::Array2;
use proptest::prelude::*;
use rand::Rng;
use resprop::graph::{densify_power, max_eigenvalue};

fn graph_params() -> impl Strategy<Value = (usize, f64, u64)> {
    (1usize..60, 0.0f64..0.5, any::<u64>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalization_is_entrywise_degree_scaling((n, p, seed) in graph_params()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let g = sparse_normalized(n, &edges);
        let dense = dense_normalized(n, &edges);
        let mut deg = vec![1.0f64; n];
        for &(i, j, _) in &edges {
            deg[i] += 1.0;
            deg[j] += 1.0;
        }
        for i in 0..n {
            let (cols, vals) = g.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                prop_assert!((v - 1.0 / (deg[i] * deg[j]).sqrt()).abs() <= 1e-15);
            }
        }
        prop_assert!(max_abs_diff(g.to_dense().view(), dense.view()) <= 1e-15);
    }

    #[test]
    fn propagate_equals_dense_power((n, p, seed) in graph_params(), k in 0usize..=6) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let g = sparse_normalized(n, &edges);
        let m = Array2::from_shape_fn((n, 4), |_| rng.random_range(-1.0..1.0));
        let sparse = g.propagate(m.view(), k).unwrap();
        let dense = densify_power(&g, k).unwrap().dot(&m);
        prop_assert!(max_abs_diff(sparse.view(), dense.view()) <= 1e-10);
        let naive = naive_matmul(naive_power(dense_normalized(n, &edges).view(), k).view(), m.view());
        prop_assert!(max_abs_diff(sparse.view(), naive.view()) <= 1e-10);
    }

    #[test]
    fn propagate_is_linear((n, p, seed) in graph_params(), k in 0usize..=6, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let g = sparse_normalized(n, &edges);
        let m = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let q = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
        let combined = g.propagate((&m * a + &q * b).view(), k).unwrap();
        let separate = g.propagate(m.view(), k).unwrap() * a + g.propagate(q.view(), k).unwrap() * b;
        prop_assert!(max_abs_diff(combined.view(), separate.view()) <= 1e-10);
    }

    #[test]
    fn normalized_spectral_radius_at_most_one((n, p, seed) in graph_params()) {
        let mut rng = rng(seed);
        let edges = random_edges(n, p, &mut rng);
        let a = sparse_normalized(n, &edges).to_dense();
        let top = max_eigenvalue(a.view()).unwrap();
        prop_assert!(top <= 1.0 + 1e-6);
        let exact = eigenvalues(a.view());
        prop_assert!(exact.last().unwrap() <= &(1.0 + 1e-10));
        prop_assert!(exact[0] >= -1.0 - 1e-10);
    }
}
