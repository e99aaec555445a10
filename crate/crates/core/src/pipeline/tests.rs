use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::make_folds;

/// Toy data: label 1 iff the mean of column 0 is positive.
fn toy(n: usize, f: usize, seed: u64) -> Vec<Sample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let t = rng.random_range(3..7);
            let shift = if i % 2 == 0 { 1.0 } else { -1.0 };
            let mut data = Vec::new();
            for _ in 0..t {
                for j in 0..f {
                    let v: f64 = rng.random_range(-1.0..1.0);
                    data.push(if j == 0 { v * 0.5 + shift } else { v });
                }
            }
            Sample {
                id: format!("s{i:03}"),
                contour: Tensor::new(vec![t, f], data).unwrap(),
                fluency: Some(std::array::from_fn(|_| rng.random_range(0.0..1.0))),
                topic: Some(crate::corpus::Topic::ALL[i % 3]),
                label: if shift > 0.0 { 1.0 } else { 0.0 },
            }
        })
        .collect()
}

fn tiny_arch(f: usize) -> Architecture {
    Architecture {
        input_dim: f,
        layers: 1,
        hidden: 6,
        head_width: 6,
        dropout: 0.0,
        finetune: None,
    }
}

fn tiny_ft() -> FineTuneArch {
    FineTuneArch {
        width: 6,
        extra_dims: EXTRA_DIMS,
        dropout: 0.0,
    }
}

fn quick_cfg() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.02,
        batch_size: 8,
        max_epochs: 30,
        patience: 5,
        seed: 3,
        dropout: 0.0,
        optimizer: crate::neural::OptimizerKind::Adam,
        val_fraction: 0.2,
    }
}

#[test]
fn topic_follows_fluency_in_extras() {
    let samples = toy(6, 3, 1);
    let refs: Vec<&Sample> = samples.iter().collect();
    let norm = Normalizer::fit(&refs, true).unwrap();
    let mut s = samples[0].clone();
    s.topic = Some(crate::corpus::Topic::B);
    let x = norm.prepare(&s).unwrap();
    assert_eq!(x.extras.len(), 10);
    assert_eq!(&x.extras[7..], &[0.0, 1.0, 0.0]);
}

#[test]
fn missing_fluency_lists_ids() {
    let mut samples = toy(6, 3, 1);
    samples[2].fluency = None;
    samples[4].topic = None;
    let refs: Vec<&Sample> = samples.iter().collect();
    let base = Classifier::new(tiny_arch(3), 1).unwrap();
    match finetune(&base, &refs, tiny_ft(), &quick_cfg()) {
        Err(Error::MissingFluency(ids)) => {
            assert_eq!(ids, vec!["s002".to_string(), "s004".to_string()])
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn single_class_training_is_rejected() {
    let mut samples = toy(6, 3, 1);
    samples.iter_mut().for_each(|s| s.label = 1.0);
    let refs: Vec<&Sample> = samples.iter().collect();
    assert!(matches!(
        pretrain(&refs, tiny_arch(3), &quick_cfg()),
        Err(Error::SingleClass(_))
    ));
}

#[test]
fn zero_epoch_finetune_keeps_stack() {
    let samples = toy(10, 3, 2);
    let refs: Vec<&Sample> = samples.iter().collect();
    let base = Classifier::new(tiny_arch(3), 4).unwrap();
    let mut cfg = quick_cfg();
    cfg.max_epochs = 0;
    let t = finetune(&base, &refs, tiny_ft(), &cfg).unwrap();
    assert_eq!(t.model.stack, base.stack);
    let fresh = base.clone().into_finetune(tiny_ft(), cfg.seed).unwrap();
    assert!(t.model.head == fresh.head);
}

#[test]
fn finetune_head_input_dimension() {
    let base = Classifier::new(Architecture::new(4), 1).unwrap();
    let ft = base.into_finetune(FineTuneArch::default(), 2).unwrap();
    match &ft.head.out {
        crate::neural::Output::FineTune(h) => assert_eq!(h.fc_a.input_dim(), 400 + 7 + 3),
        _ => unreachable!(),
    }
}

#[test]
fn mismatched_feature_count_is_rejected() {
    let samples = toy(6, 3, 1);
    let refs: Vec<&Sample> = samples.iter().collect();
    let base = Classifier::new(tiny_arch(4), 1).unwrap();
    match finetune(&base, &refs, tiny_ft(), &quick_cfg()) {
        Err(Error::ArchitectureMismatch { field, .. }) => assert_eq!(field, "input_dim"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn validation_split_is_stratified() {
    let labels: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i < 8))).collect();
    let (tr, va) = split_validation(&labels, 0.25, 1);
    assert_eq!(tr.len() + va.len(), 20);
    assert_eq!(va.iter().filter(|&&i| labels[i] == 1.0).count(), 2);
    assert_eq!(va.iter().filter(|&&i| labels[i] == 0.0).count(), 3);
    assert_eq!(split_validation(&labels, 0.25, 1), (tr, va));
}

#[test]
fn pretraining_learns_toy_task() {
    let samples = toy(80, 3, 5);
    let (train_s, test_s) = samples.split_at(60);
    let refs: Vec<&Sample> = train_s.iter().collect();
    let t = pretrain(&refs, tiny_arch(3), &quick_cfg()).unwrap();
    assert!((t.outcome.p1 - 0.5).abs() < 0.05);
    let test: Vec<&Sample> = test_s.iter().collect();
    let probs = t.predict(&test).unwrap();
    let targets: Vec<f64> = test.iter().map(|s| s.label).collect();
    let m = compute_metrics(&probs, &targets, 0.5).unwrap();
    assert!(m.accuracy >= 0.9, "accuracy {}", m.accuracy);
}

#[test]
fn crossvalidation_covers_every_sample_once() {
    let samples = toy(30, 3, 6);
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let plan = make_folds(&ids, 5, 1).unwrap();
    let mut cfg = quick_cfg();
    cfg.max_epochs = 2;
    let setup = CvSetup {
        arch: tiny_arch(3),
        finetune: tiny_ft(),
        train: cfg,
        threshold: 0.5,
        init: None,
    };
    let cv = crossvalidate(&samples, &plan, &setup).unwrap();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();
    for f in &cv.folds {
        for p in &f.predictions {
            *seen.entry(p.id.clone()).or_default() += 1;
        }
    }
    assert_eq!(seen.len(), 30);
    assert!(seen.values().all(|&c| c == 1));
    let again = crossvalidate(&samples, &plan, &setup).unwrap();
    assert_eq!(cv.mean, again.mean);
}

#[test]
fn fold_statistics_ignore_test_fold_contents() {
    let samples = toy(20, 3, 7);
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let plan = make_folds(&ids, 5, 2).unwrap();
    let before = fold_normalizer(&samples, &plan, 1, true).unwrap();
    let p_before = fold_prior(&samples, &plan, 1).unwrap();
    let mut altered = samples.clone();
    for s in altered.iter_mut().filter(|s| plan.assignments[&s.id] == 1) {
        s.contour.data_mut().iter_mut().for_each(|v| *v = 1e6);
        s.fluency = Some([42.0; 7]);
        s.label = 1.0 - s.label;
    }
    assert_eq!(fold_normalizer(&altered, &plan, 1, true).unwrap(), before);
    assert_eq!(fold_prior(&altered, &plan, 1).unwrap(), p_before);
}

#[test]
fn grid_counts_and_ties() {
    let base = quick_cfg();
    let mut grid = Grid::new();
    grid.insert("learning_rate".into(), vec![1e-3, 1e-4]);
    grid.insert("batch_size".into(), vec![8.0, 16.0]);
    assert_eq!(grid_configs(&base, &grid).unwrap().len(), 4);
    // constant score: lowest lr, then smallest batch wins
    let r = grid_search(&base, &grid, |_| Ok(0.5)).unwrap();
    assert_eq!(r.best_cell().config.learning_rate, 1e-4);
    assert_eq!(r.best_cell().config.batch_size, 8);
    let r2 = grid_search(&base, &grid, |c| {
        Ok(c.learning_rate * 1e3 + c.batch_size as f64)
    })
    .unwrap();
    assert_eq!(r2.best_cell().config.batch_size, 16);
    assert_eq!(r2.best_cell().config.learning_rate, 1e-3);

    let mut single = Grid::new();
    single.insert("learning_rate".into(), vec![5e-4]);
    let r = grid_search(&base, &single, |_| Ok(0.1)).unwrap();
    assert_eq!(r.cells.len(), 1);
    assert_eq!(r.best_cell().config.learning_rate, 5e-4);
    assert!(grid_search(&base, &Grid::new(), |_| Ok(0.0)).is_err());
    let mut bad = Grid::new();
    bad.insert("momentum".into(), vec![0.9]);
    assert!(grid_configs(&base, &bad).is_err());
}

#[test]
fn results_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("results.csv");
    let m = Metrics {
        accuracy: 0.75,
        recall: Some(0.7),
        precision: None,
        f1: Some(0.1 + 0.2),
        partial: true,
    };
    let rows = vec![
        ResultRow::new("funny", "0", &m, true),
        ResultRow::new("funny", "mean", &m, true),
    ];
    write_results_csv(&path, &rows).unwrap();
    assert_eq!(read_results_csv(&path).unwrap(), rows);
}
