mod common;

use common::*;
use proptest::prelude::*;
use resprop::alignment::homophily;
use resprop::dataset::{load_dataset, one_hot, write_dataset, LoadOptions};
use resprop::synth::{sbm_generate, SbmConfig};

fn small_sbm(lambda: f64, seed: u64) -> SbmConfig {
    SbmConfig {
        num_blocks: 3,
        block_size: 12,
        feature_dim: 5,
        lambda,
        intra_p: 0.3,
        inter_p: 0.05,
        train_size: 6,
        val_size: 9,
        test_size: 12,
        seed,
        ..SbmConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn dataset_round_trips_through_directory(lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let ds = sbm_generate(&small_sbm(lambda, seed)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path(), LoadOptions::default()).unwrap();
        prop_assert_eq!(&back.graph, &ds.graph);
        prop_assert_eq!(&back.labels, &ds.labels);
        prop_assert_eq!(&back.features, &ds.features);
        prop_assert_eq!(&back.split, &ds.split);
        prop_assert_eq!(back.num_classes, ds.num_classes);
    }

    #[test]
    fn generation_is_deterministic(lambda in 0.0f64..=1.0, seed in any::<u64>()) {
        let cfg = small_sbm(lambda, seed);
        let a = sbm_generate(&cfg).unwrap();
        let b = sbm_generate(&cfg).unwrap();
        prop_assert_eq!(&a.graph, &b.graph);
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert!(a.features.iter().zip(b.features.iter()).all(|(x, y)| x.to_bits() == y.to_bits()));
        prop_assert_eq!(&a.split, &b.split);
    }

    #[test]
    fn one_hot_rows_sum_to_one(labels in prop::collection::vec(0i64..6, 1..50)) {
        let nodes: Vec<usize> = (0..labels.len()).collect();
        let y = one_hot(&labels, 6, &nodes).unwrap();
        for row in y.rows() {
            prop_assert_eq!(row.sum(), 1.0);
        }
    }
}

#[test]
fn homophily_strictly_decreasing_in_lambda() {
    let mut values = Vec::new();
    for lambda in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let ds = sbm_generate(&SbmConfig {
            lambda,
            ..SbmConfig::default()
        })
        .unwrap();
        let a = ds.graph.normalize().unwrap().to_dense();
        values.push(homophily(a.view(), &ds.labels).unwrap());
    }
    assert!(values.windows(2).all(|w| w[1] < w[0]), "{values:?}");
}

#[test]
fn shipped_datasets_load() {
    for (name, n, c) in [("cora", 2708, 7), ("citeseer", 3327, 6)] {
        let dir = data_dir(name);
        if !dir.exists() {
            continue;
        }
        let ds = load_dataset(&dir, LoadOptions::default()).unwrap();
        assert_eq!(ds.n(), n);
        assert_eq!(ds.num_classes, c);
        assert_eq!(ds.split.train.len(), 20 * c);
        assert_eq!(ds.split.val.len(), 500);
        assert_eq!(ds.split.test.len(), 1000);
    }
}
