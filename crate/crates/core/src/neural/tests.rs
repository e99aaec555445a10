use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Affine, BatchNorm, PRelu};
use super::*;
use crate::contour::pad_batch;

const FD_EPS: f64 = 1e-5;
/// Denominator floor for relative errors: below this magnitude both
/// gradients count as zero and the absolute difference is compared.
const REL_FLOOR: f64 = 1e-6;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = rng.random_range(-1.0..1.0);
    }
    t
}

/// Compares analytic gradients stored in `m` against central differences of
/// `loss`, perturbing every trainable scalar. Returns the worst relative error.
fn max_fd_error<M: Module>(m: &mut M, loss: &dyn Fn(&mut M) -> f64) -> f64 {
    let mut analytic = Vec::new();
    m.visit("", &mut |_, p| {
        if p.trainable {
            analytic.extend_from_slice(p.grad.data());
        }
    });
    let mut coords = Vec::new();
    let mut count = 0;
    m.visit("", &mut |name, p| {
        if p.trainable {
            for k in 0..p.value.len() {
                coords.push((name.to_string(), k));
            }
            count += p.value.len();
        }
    });
    assert_eq!(count, analytic.len());
    let mut worst: f64 = 0.0;
    for (i, (name, k)) in coords.iter().enumerate() {
        let nudge = |m: &mut M, d: f64| {
            m.visit_mut("", &mut |n, p| {
                if n == name {
                    p.value.data_mut()[*k] += d;
                }
            })
        };
        nudge(m, FD_EPS);
        let up = loss(m);
        nudge(m, -2.0 * FD_EPS);
        let down = loss(m);
        nudge(m, FD_EPS);
        let numeric = (up - down) / (2.0 * FD_EPS);
        worst = worst.max(rel_err(analytic[i], numeric));
    }
    worst
}

fn small_arch(f: usize) -> Architecture {
    Architecture {
        input_dim: f,
        layers: 2,
        hidden: 8,
        head_width: 8,
        dropout: 0.5,
        finetune: None,
    }
}

fn random_batch(f: usize, lengths: &[usize], n: usize, rng: &mut ChaCha8Rng) -> PaddedBatch {
    let seqs: Vec<Tensor> = lengths
        .iter()
        .map(|&l| random_tensor(&[l, f], rng))
        .collect();
    let refs: Vec<&Tensor> = seqs.iter().collect();
    pad_batch(&refs, n).unwrap()
}

fn classifier_loss(
    m: &mut Classifier,
    batch: &PaddedBatch,
    extras: Option<&Tensor>,
    targets: &[f64],
    p1: f64,
) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let probs = m.forward_train(batch, extras, Some(&mut rng)).unwrap();
    weighted_bce(&probs, targets, p1).unwrap().0
}

#[test]
fn classifier_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let f = 6;
    let batch = random_batch(f, &[2, 2, 1], 3, &mut rng);
    let targets = [1.0, 0.0, 1.0];
    let mut m = Classifier::new(small_arch(f), 17).unwrap();
    classifier_loss(&mut m, &batch, None, &targets, 0.4);
    let mut drng = ChaCha8Rng::seed_from_u64(99);
    let probs = m.forward_train(&batch, None, Some(&mut drng)).unwrap();
    let (_, g) = weighted_bce(&probs, &targets, 0.4).unwrap();
    m.backward(&g).unwrap();
    let worst = max_fd_error(&mut m, &|m| classifier_loss(m, &batch, None, &targets, 0.4));
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn finetune_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let f = 6;
    let batch = random_batch(f, &[2, 3, 1, 2], 3, &mut rng);
    let ft = FineTuneArch {
        width: 6,
        extra_dims: 10,
        dropout: 0.5,
    };
    let extras = random_tensor(&[4, 10], &mut rng);
    let targets = [1.0, 0.0, 0.0, 1.0];
    let mut m = Classifier::new(small_arch(f), 3)
        .unwrap()
        .into_finetune(ft, 4)
        .unwrap();
    let mut drng = ChaCha8Rng::seed_from_u64(99);
    let probs = m
        .forward_train(&batch, Some(&extras), Some(&mut drng))
        .unwrap();
    let (_, g) = weighted_bce(&probs, &targets, 0.7).unwrap();
    m.backward(&g).unwrap();
    let worst = max_fd_error(&mut m, &|m| {
        classifier_loss(m, &batch, Some(&extras), &targets, 0.7)
    });
    assert!(worst < 1e-5, "max relative error {worst:e}");
}

#[test]
fn lstm_cell_gradients_in_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut cell = LstmCell::new(4, 5, &mut rng);
    let xs: Vec<Vec<f64>> = (0..3)
        .map(|_| random_tensor(&[4], &mut rng).into_data())
        .collect();
    let r: Vec<Vec<f64>> = (0..3)
        .map(|_| random_tensor(&[5], &mut rng).into_data())
        .collect();
    let loss = |c: &mut LstmCell| -> f64 {
        let tr = c.run(xs.iter().map(Vec::as_slice));
        tr.hidden_states()
            .iter()
            .zip(&r)
            .map(|(h, r)| h.iter().zip(r).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    };
    let tr = cell.run(xs.iter().map(Vec::as_slice));
    cell.zero_grad();
    cell.backward(&tr, &r);
    assert!(max_fd_error(&mut cell, &loss) < 1e-5);
}

#[test]
fn batchnorm_gradients_in_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut bn = BatchNorm::new(3);
    bn.gamma.value = random_tensor(&[3], &mut rng);
    let x = random_tensor(&[4, 3], &mut rng).into_data();
    let r = random_tensor(&[4, 3], &mut rng).into_data();
    let loss = |b: &mut BatchNorm| -> f64 {
        let (y, _) = b.forward_train(&x, 4);
        y.iter().zip(&r).map(|(a, b)| a * b).sum()
    };
    let (_, cache) = bn.forward_train(&x, 4);
    bn.zero_grad();
    let dx = bn.backward(&cache, &r, 4);
    assert!(max_fd_error(&mut bn, &loss) < 1e-5);
    // input gradient
    for k in 0..x.len() {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += FD_EPS;
        xm[k] -= FD_EPS;
        let f = |xx: &[f64]| -> f64 {
            let (y, _) = bn.clone().forward_train(xx, 4);
            y.iter().zip(&r).map(|(a, b)| a * b).sum()
        };
        let n = (f(&xp) - f(&xm)) / (2.0 * FD_EPS);
        assert!(rel_err(dx[k], n) < 1e-5);
    }
}

#[test]
fn prelu_and_affine_gradients_in_isolation() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_tensor(&[3, 4], &mut rng).into_data();
    let r = random_tensor(&[3, 4], &mut rng).into_data();
    let mut p = PRelu::default();
    let loss = |p: &mut PRelu| -> f64 { p.forward(&x).iter().zip(&r).map(|(a, b)| a * b).sum() };
    p.zero_grad();
    p.backward(&x, &r);
    assert!(max_fd_error(&mut p, &loss) < 1e-5);

    let mut a = Affine::new(4, 2, &mut rng);
    let r2 = random_tensor(&[3, 2], &mut rng).into_data();
    let loss =
        |a: &mut Affine| -> f64 { a.forward(&x, 3).iter().zip(&r2).map(|(u, v)| u * v).sum() };
    a.zero_grad();
    a.backward(&x, &r2, 3);
    assert!(max_fd_error(&mut a, &loss) < 1e-5);
}

#[test]
fn outputs_are_probabilities() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let m = Classifier::new(small_arch(5), 1).unwrap();
    let batch = random_batch(5, &[3, 1, 4], 4, &mut rng);
    for p in m.predict(&batch, None).unwrap() {
        assert!(p > 0.0 && p < 1.0);
    }
}

#[test]
fn zero_weights_give_one_half() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let batch = random_batch(5, &[3, 1], 4, &mut rng);
    let zero = Classifier::zeros(small_arch(5)).unwrap();
    assert!(zero
        .predict(&batch, None)
        .unwrap()
        .iter()
        .all(|&p| p == 0.5));
    let mut m = Classifier::new(small_arch(5), 1).unwrap();
    m.zero_weights();
    assert!(m.predict(&batch, None).unwrap().iter().all(|&p| p == 0.5));
}

#[test]
fn padding_does_not_change_outputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let seqs: Vec<Tensor> = [4usize, 2, 6]
        .iter()
        .map(|&l| random_tensor(&[l, 6], &mut rng))
        .collect();
    let refs: Vec<&Tensor> = seqs.iter().collect();
    let m = Classifier::new(small_arch(6), 2).unwrap();
    let short = m.predict(&pad_batch(&refs, 6).unwrap(), None).unwrap();
    let mut long_batch = pad_batch(&refs, 16).unwrap();
    // garbage in the padding must be ignored as well
    for b in 0..3 {
        for t in long_batch.lengths[b]..16 {
            let off = (b * 16 + t) * 6;
            long_batch.data.data_mut()[off..off + 6].fill(1e3);
        }
    }
    let long = m.predict(&long_batch, None).unwrap();
    for (a, b) in short.iter().zip(&long) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn wrong_feature_count_is_rejected_with_both_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let m = Classifier::new(small_arch(6), 2).unwrap();
    let batch = random_batch(5, &[2], 2, &mut rng);
    match m.predict(&batch, None) {
        Err(Error::ShapeMismatch { expected, actual }) => {
            assert_eq!(expected, vec![1, 2, 6]);
            assert_eq!(actual, vec![1, 2, 5]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn step_requires_backward() {
    let mut m = Classifier::new(small_arch(3), 2).unwrap();
    let mut opt = Optimizer::adam(1e-3).unwrap();
    assert!(matches!(m.step(&mut opt), Err(Error::StepBeforeBackward)));
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = random_batch(3, &[2, 2], 2, &mut rng);
    let p = m.forward_train(&batch, None, None).unwrap();
    let (_, g) = weighted_bce(&p, &[0.0, 1.0], 0.5).unwrap();
    // forward alone is not enough
    assert!(matches!(m.step(&mut opt), Err(Error::StepBeforeBackward)));
    m.backward(&g).unwrap();
    m.step(&mut opt).unwrap();
    assert!(matches!(m.step(&mut opt), Err(Error::StepBeforeBackward)));
}

#[test]
fn zero_learning_rate_leaves_trainables_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let batch = random_batch(4, &[3, 2, 1], 3, &mut rng);
    let mut m = Classifier::new(small_arch(4), 2).unwrap();
    let before = m.clone();
    let mut opt = Optimizer::adam(0.0).unwrap();
    m.train_batch(&batch, None, &[1.0, 0.0, 1.0], 0.5, &mut opt, None)
        .unwrap();
    let mut a = Vec::new();
    before.visit("", &mut |_, p| {
        if p.trainable {
            a.push(p.value.clone())
        }
    });
    let mut b = Vec::new();
    m.visit("", &mut |_, p| {
        if p.trainable {
            b.push(p.value.clone())
        }
    });
    assert_eq!(a, b);
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let batch = random_batch(4, &[3, 2, 1, 4], 4, &mut rng);
        let mut m = Classifier::new(small_arch(4), 2).unwrap();
        let mut opt = Optimizer::adam(1e-2).unwrap();
        let mut drng = ChaCha8Rng::seed_from_u64(3);
        let losses: Vec<f64> = (0..5)
            .map(|_| {
                m.train_batch(
                    &batch,
                    None,
                    &[1.0, 0.0, 1.0, 0.0],
                    0.5,
                    &mut opt,
                    Some(&mut drng),
                )
                .unwrap()
            })
            .collect();
        (losses, m)
    };
    let (l1, m1) = run();
    let (l2, m2) = run();
    assert_eq!(l1, l2);
    assert!(m1 == m2);
}

#[test]
fn training_reduces_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let batch = random_batch(4, &[3, 2, 3, 4], 4, &mut rng);
    let targets = [1.0, 0.0, 1.0, 0.0];
    let mut arch = small_arch(4);
    arch.dropout = 0.0;
    let mut m = Classifier::new(arch, 2).unwrap();
    let mut opt = Optimizer::adam(1e-2).unwrap();
    let first = m
        .train_batch(&batch, None, &targets, 0.5, &mut opt, None)
        .unwrap();
    let mut last = first;
    for _ in 0..60 {
        last = m
            .train_batch(&batch, None, &targets, 0.5, &mut opt, None)
            .unwrap();
    }
    assert!(last < 0.5 * first, "{first} -> {last}");
}

#[test]
fn train_and_eval_differ_only_through_batchnorm_and_dropout() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let batch = random_batch(4, &[3, 2, 3], 3, &mut rng);
    let mut m = Classifier::new(small_arch(4), 2).unwrap();
    // After setting running stats to the batch statistics (momentum 1) and
    // disabling dropout, both modes agree.
    m.head.bn.momentum = 1.0;
    m.head.dropout = 0.0;
    let train = m.forward_train(&batch, None, None).unwrap();
    // running variance uses the unbiased estimate; undo it for the comparison
    let n = 3.0;
    for v in m.head.bn.running_var.value.data_mut() {
        *v *= (n - 1.0) / n;
    }
    let eval = m.predict(&batch, None).unwrap();
    for (a, b) in train.iter().zip(&eval) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let mut m = Classifier::new(small_arch(5), 21).unwrap();
    // move running statistics away from their initial values
    let batch = random_batch(5, &[2, 3], 3, &mut rng);
    m.forward_train(&batch, None, None).unwrap();
    let meta = serde_json::json!({"feature_ids": ["a", "b"], "window": {"size": 5, "step": 1}});
    save_checkpoint(&path, &m, &meta).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert!(ck.model == m);
    assert_eq!(ck.metadata, meta);
    let mut same = true;
    let mut orig = Vec::new();
    m.visit("", &mut |_, p| {
        orig.extend(p.value.data().iter().map(|v| v.to_bits()))
    });
    let mut back = Vec::new();
    ck.model.visit("", &mut |_, p| {
        back.extend(p.value.data().iter().map(|v| v.to_bits()))
    });
    same &= orig == back;
    assert!(same);

    let ft = Classifier::new(small_arch(5), 1)
        .unwrap()
        .into_finetune(FineTuneArch::default(), 2)
        .unwrap();
    save_checkpoint(&path, &ft, &serde_json::Value::Null).unwrap();
    assert!(load_checkpoint(&path).unwrap().model == ft);
}

#[test]
fn checkpoint_input_dim_mismatch_names_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Classifier::new(small_arch(20), 1).unwrap();
    save_checkpoint(&path, &m, &serde_json::Value::Null).unwrap();
    let err = Checkpoint::load_expecting(&path, &small_arch(21)).unwrap_err();
    match &err {
        Error::ArchitectureMismatch {
            field,
            expected,
            found,
        } => {
            assert_eq!(field, "input_dim");
            assert_eq!(expected, "21");
            assert_eq!(found, "20");
        }
        other => panic!("unexpected {other:?}"),
    }
    assert!(err.to_string().contains("input_dim"));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let m = Classifier::new(small_arch(3), 1).unwrap();
    save_checkpoint(&path, &m, &serde_json::Value::Null).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    std::fs::write(&path, &bad).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn finetune_keeps_stack_parameters() {
    let pre = Classifier::new(small_arch(4), 8).unwrap();
    let ft = pre
        .clone()
        .into_finetune(FineTuneArch::default(), 9)
        .unwrap();
    assert_eq!(pre.stack, ft.stack);
    assert_eq!(pre.head.fc1, ft.head.fc1);
    assert_eq!(ft.extra_dims(), 10);
    match &ft.head.out {
        Output::FineTune(h) => assert_eq!(h.fc_a.input_dim(), 8 + 10),
        Output::Linear(_) => panic!("head not replaced"),
    }
}

#[test]
fn finetune_requires_extras() {
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let m = Classifier::new(small_arch(4), 8)
        .unwrap()
        .into_finetune(FineTuneArch::default(), 9)
        .unwrap();
    let batch = random_batch(4, &[2], 2, &mut rng);
    assert!(matches!(
        m.predict(&batch, None),
        Err(Error::ShapeMismatch { .. })
    ));
    let extras = random_tensor(&[1, 10], &mut rng);
    assert!(m.predict(&batch, Some(&extras)).is_ok());
}
