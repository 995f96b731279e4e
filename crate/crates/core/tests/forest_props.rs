mod common;

use rand::Rng;
use seqling::featurize::FeatureMatrix;
use seqling::forest::*;

use common::rng;

fn noisy_data(seed: u64, n: usize, d: usize) -> (FeatureMatrix, Vec<u8>) {
    let mut r = rng(seed);
    let mut rows = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let label = (i % 5 == 0) as u8;
        let row: Vec<f64> = (0..d)
            .map(|j| {
                let signal = if j == 1 { label as f64 * 0.8 } else { 0.0 };
                // coarse grid so that ties between values occur
                ((r.gen_range(0.0..1.0) + signal) * 8.0).round() / 8.0
            })
            .collect();
        rows.push(row);
        y.push(label);
    }
    let names = (0..d).map(|j| format!("x{j}")).collect();
    (FeatureMatrix::new(names, rows).unwrap(), y)
}

fn hp(n_trees: usize, seed: u64) -> ForestHyperparams {
    ForestHyperparams {
        n_trees,
        seed,
        ..Default::default()
    }
}

#[test]
fn ensemble_is_the_mean_of_its_trees() {
    let (x, y) = noisy_data(1, 150, 6);
    let m = ForestModel::train(&x, &y, &hp(25, 3)).unwrap();
    let mut r = rng(99);
    for _ in 0..100 {
        let row: Vec<f64> = (0..6).map(|_| r.gen_range(-0.5..2.0)).collect();
        let each: Vec<f64> = m.trees().iter().map(|t| t.predict_proba(&row)).collect();
        let mean = each.iter().sum::<f64>() / each.len() as f64;
        let p = m.predict_proba(&row).unwrap();
        assert!((p - mean).abs() < 1e-15);
        let lo = each.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = each.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(lo - 1e-15 <= p && p <= hi + 1e-15);
    }
}

#[test]
fn serialized_model_is_identical_across_thread_counts() {
    let (x, y) = noisy_data(2, 200, 8);
    let train_with = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ForestModel::train(&x, &y, &hp(40, 7)).unwrap().to_json())
    };
    let one = train_with(1);
    assert_eq!(one, train_with(4));
    assert_eq!(one, train_with(8));
}

#[test]
fn adding_trees_keeps_existing_trees() {
    let (x, y) = noisy_data(3, 120, 5);
    let small = ForestModel::train(&x, &y, &hp(10, 11)).unwrap();
    let large = ForestModel::train(&x, &y, &hp(30, 11)).unwrap();
    assert_eq!(small.trees(), &large.trees()[..10]);
}

#[test]
fn split_decreases_and_importances_are_well_formed() {
    let (x, y) = noisy_data(4, 200, 6);
    let m = ForestModel::train(&x, &y, &hp(30, 5)).unwrap();
    for t in m.trees() {
        for node in t.nodes() {
            if let Node::Split { gini_decrease, .. } = node {
                assert!(*gini_decrease >= 0.0);
            }
        }
    }
    let imp = m.gini_importance();
    assert!(imp.iter().all(|&v| v >= 0.0));
    assert!((imp.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    let top = (0..imp.len()).max_by(|&a, &b| imp[a].total_cmp(&imp[b])).unwrap();
    assert_eq!(top, 1, "only x1 carries signal: {imp:?}");
}

#[test]
fn perfect_separator_is_used_at_every_root() {
    let mut r = rng(6);
    let rows: Vec<Vec<f64>> = (0..60)
        .map(|i| {
            let label = (i % 3 == 0) as u8 as f64;
            vec![label * 10.0 + r.gen_range(0.0..1.0), r.gen_range(0.0..1.0), r.gen_range(0.0..1.0)]
        })
        .collect();
    let y: Vec<u8> = (0..60).map(|i| (i % 3 == 0) as u8).collect();
    let x = FeatureMatrix::new(vec!["a".into(), "b".into(), "c".into()], rows).unwrap();
    let h = ForestHyperparams {
        features_per_split: FeaturesPerSplit::All,
        ..hp(15, 1)
    };
    let m = ForestModel::train(&x, &y, &h).unwrap();
    for t in m.trees() {
        assert!(matches!(t.nodes()[0], Node::Split { feature: 0, .. }));
    }
    for (i, &label) in y.iter().enumerate() {
        let p = m.predict_proba(x.row(i)).unwrap();
        assert_eq!((p >= 0.5) as u8, label);
    }
}

#[test]
fn relabeled_leaves_mirror_probabilities() {
    let split = |counts: [usize; 2], l: [usize; 2], r: [usize; 2]| {
        vec![
            Node::Split {
                feature: 0,
                threshold: 0.5,
                left: 1,
                right: 2,
                counts,
                gini_decrease: 0.1,
            },
            Node::Leaf { counts: l },
            Node::Leaf { counts: r },
        ]
    };
    let names = vec!["f".to_string()];
    let a = DecisionTree::from_nodes(split([7, 5], [6, 1], [1, 4]), 1).unwrap();
    let b = DecisionTree::from_nodes(split([5, 7], [1, 6], [4, 1]), 1).unwrap();
    let fa = ForestModel::from_parts(vec![a], names.clone(), ForestHyperparams::default()).unwrap();
    let fb = ForestModel::from_parts(vec![b], names, ForestHyperparams::default()).unwrap();
    for v in [0.0, 1.0] {
        let pa = fa.predict_proba(&[v]).unwrap();
        let pb = fb.predict_proba(&[v]).unwrap();
        assert!((pa - (1.0 - pb)).abs() < 1e-15);
    }
}

#[test]
fn gini_matches_definition_on_all_small_multisets() {
    for n in 1..=8usize {
        for pos in 0..=n {
            let labels: Vec<u8> = (0..n).map(|i| (i < pos) as u8).collect();
            let p1 = pos as f64 / n as f64;
            let expect = 1.0 - p1 * p1 - (1.0 - p1) * (1.0 - p1);
            assert!((gini_impurity(&labels) - expect).abs() < 1e-15);
        }
    }
}
