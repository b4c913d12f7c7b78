use super::*;
use crate::synth;
use std::f64::consts::LN_2;

fn small() -> HyperParams {
    HyperParams {
        d_model: 8,
        n_heads: 2,
        segment_half_len: 3,
        max_contacts: 4,
        d_contact: 8,
        cnn_channels: [4, 6, 6],
        head_hidden: 4,
        n_enc_layers: 1,
        n_tx_layers: 1,
        ffn_mult: 2,
        ..Default::default()
    }
}

fn quick(epochs: usize, batches: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batches_per_epoch: batches,
        seed: 7,
        ..Default::default()
    }
}

#[test]
fn bce_examples() {
    assert!((bce_loss(&[0.0], &[1.0]).unwrap() - LN_2).abs() < 1e-15);
    let l = bce_loss(&[20.0], &[1.0]).unwrap();
    assert!(l < 1e-8 && l >= 0.0);
    assert!(bce_loss(&[-800.0], &[1.0]).unwrap().is_finite());
    let z = 1.7;
    let pair = bce_loss(&[z, -z], &[1.0, 0.0]).unwrap();
    assert!((pair - bce_loss(&[z], &[1.0]).unwrap()).abs() < 1e-15);
    assert!(bce_loss(&[], &[]).is_err());
    assert!(bce_loss(&[0.0], &[1.0, 0.0]).is_err());
}

#[test]
fn cosine_endpoints_and_midpoint() {
    assert_eq!(cosine_lr(0, 1000, 1e-4, 1e-6), 1e-4);
    assert_eq!(cosine_lr(1000, 1000, 1e-4, 1e-6), 1e-6);
    assert!((cosine_lr(500, 1000, 1e-4, 1e-6) - (1e-4 + 1e-6) / 2.0).abs() < 1e-18);
    let cfg = quick(3, 100);
    assert_eq!(cfg.lr_at(0), 1e-4);
    assert_eq!(cfg.lr_at(299), 1e-6);
    let lrs: Vec<f64> = (0..300).map(|s| cfg.lr_at(s)).collect();
    assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
}

fn one(v: f64) -> Vec<Tensor<f64>> {
    vec![Tensor::new(vec![1], vec![v]).unwrap()]
}

#[test]
fn adamw_examples() {
    let hp = AdamParams {
        beta1: 0.9,
        beta2: 0.999,
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut p = one(0.3);
    let mut st = OptimizerState::new(&p);
    adamw_step(&mut p, &one(0.0), &[true], &mut st, 1e-3, &hp).unwrap();
    assert_eq!(p[0].item(), 0.3);

    // First step: bias correction makes the update lr·g/(|g| + eps).
    for g in [2.5, -0.01] {
        let mut p = one(1.0);
        let mut st = OptimizerState::new(&p);
        adamw_step(&mut p, &one(g), &[true], &mut st, 1e-3, &hp).unwrap();
        let expected = 1.0 - 1e-3 * g / (g.abs() + 1e-8);
        assert!((p[0].item() - expected).abs() < 1e-15);
    }

    let decay = AdamParams { weight_decay: 5e-3, ..hp };
    let mut p = vec![Tensor::new(vec![1], vec![2.0]).unwrap(), Tensor::new(vec![1], vec![2.0]).unwrap()];
    let mut st = OptimizerState::new(&p);
    let zero = vec![Tensor::zeros(vec![1]), Tensor::zeros(vec![1])];
    for _ in 0..10 {
        adamw_step(&mut p, &zero, &[true, false], &mut st, 1e-2, &decay).unwrap();
    }
    assert!((p[0].item() - 2.0 * (1.0 - 1e-2 * 5e-3f64).powi(10)).abs() < 1e-15);
    assert_eq!(p[1].item(), 2.0);
}

/// Textbook Adam, written out per coordinate, on f(x, y) = 3x² + 0.5(y − 1)².
#[test]
fn adam_matches_reference_trace() {
    let (b1, b2, eps, lr) = (0.9f64, 0.999f64, 1e-8, 0.05);
    let grad = |x: f64, y: f64| (6.0 * x, y - 1.0);
    let (mut x, mut y) = (1.5, -2.0);
    let (mut mx, mut my, mut vx, mut vy) = (0.0, 0.0, 0.0, 0.0);
    let mut p = vec![Tensor::new(vec![2], vec![1.5, -2.0]).unwrap()];
    let mut st = OptimizerState::new(&p);
    let hp = AdamParams {
        beta1: b1,
        beta2: b2,
        eps,
        weight_decay: 0.0,
    };
    for t in 1..=100 {
        let (gx, gy) = grad(x, y);
        mx = b1 * mx + (1.0 - b1) * gx;
        my = b1 * my + (1.0 - b1) * gy;
        vx = b2 * vx + (1.0 - b2) * gx * gx;
        vy = b2 * vy + (1.0 - b2) * gy * gy;
        let (bc1, bc2) = (1.0 - b1.powi(t), 1.0 - b2.powi(t));
        x -= lr * (mx / bc1) / ((vx / bc2).sqrt() + eps);
        y -= lr * (my / bc1) / ((vy / bc2).sqrt() + eps);

        let d = p[0].data();
        let (gx, gy) = grad(d[0], d[1]);
        let g = vec![Tensor::new(vec![2], vec![gx, gy]).unwrap()];
        adamw_step(&mut p, &g, &[true], &mut st, lr, &hp).unwrap();
        assert!((p[0].data()[0] - x).abs() < 1e-10 && (p[0].data()[1] - y).abs() < 1e-10);
    }
    assert!(x.abs() < 0.1 && (y - 1.0).abs() < 0.5);
}

#[test]
fn adamw_rejects_mismatched_shapes() {
    let mut p = one(1.0);
    let mut st = OptimizerState::new(&p);
    let hp = AdamParams::from(&TrainConfig::default());
    assert!(adamw_step(&mut p, &[Tensor::zeros(vec![2])], &[true], &mut st, 1e-3, &hp).is_err());
    assert!(adamw_step(&mut p, &[], &[true], &mut st, 1e-3, &hp).is_err());
}

#[test]
fn config_validation() {
    TrainConfig::default().validate().unwrap();
    assert_eq!(TrainConfig::default().positives_per_batch(), 13);
    for bad in [
        TrainConfig { positive_fraction: 0.0, ..Default::default() },
        TrainConfig { positive_fraction: 1.0, ..Default::default() },
        TrainConfig { batch_size: 50, ..Default::default() },
        TrainConfig { epochs: 0, ..Default::default() },
        TrainConfig { lr_floor: 1.0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))), "{bad:?}");
    }
}

#[test]
fn micro_corpus_labels_come_from_assessment() {
    let set = synth::micro_corpus(1, 2, 4, 4).unwrap();
    assert_eq!(set.decoys.len(), 16);
    for (k, d) in set.decoys.iter().enumerate() {
        assert_eq!(d.positive(), k % 8 < 4, "{} {:?}", d.decoy_id, d.capri());
    }
    let contacts = set.contacts(&HyperParams::default());
    assert!(contacts.iter().all(|c| !c.is_empty()));
}

#[test]
fn batches_are_balanced_and_spread_over_cases() {
    let set = synth::micro_corpus(2, 3, 2, 3).unwrap();
    let cfg = TrainConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..50 {
        let b = sample_batch(&set, &cfg, &mut rng).unwrap();
        assert_eq!(b.len(), 52);
        assert_eq!(b.iter().filter(|&&k| set.decoys[k].positive()).count(), 13);
        assert!(b[..13].iter().all(|&k| set.decoys[k].positive()));
        assert!(b[13..].iter().all(|&k| !set.decoys[k].positive()));
        // Rounds of three distinct cases.
        for chunk in b[..12].chunks(3) {
            let mut cs: Vec<usize> = chunk.iter().map(|&k| set.decoys[k].case).collect();
            cs.sort_unstable();
            assert_eq!(cs, vec![0, 1, 2]);
        }
    }
    let mut a = ChaCha8Rng::seed_from_u64(9);
    let mut c = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..5 {
        assert_eq!(sample_batch(&set, &cfg, &mut a).unwrap(), sample_batch(&set, &cfg, &mut c).unwrap());
    }
}

#[test]
fn many_cases_give_distinct_cases_per_batch() {
    let set = synth::micro_corpus(4, 60, 1, 1).unwrap();
    let (np, nn) = set.counts();
    assert_eq!((np, nn), (60, 60));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let b = sample_batch(&set, &TrainConfig::default(), &mut rng).unwrap();
    let mut cases: Vec<usize> = b.iter().map(|&k| set.decoys[k].case).collect();
    cases.sort_unstable();
    cases.dedup();
    assert_eq!(cases.len(), 52);
}

#[test]
fn missing_label_is_a_config_error() {
    let mut set = synth::micro_corpus(6, 1, 2, 2).unwrap();
    set.decoys.retain(|d| !d.positive());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = sample_batch(&set, &TrainConfig::default(), &mut rng).unwrap_err();
    assert!(matches!(&err, Error::Config(m) if m.contains("0 positive and 2 negative")), "{err}");
    assert!(Trainer::new(&set, &small(), quick(1, 1)).is_err());
}

#[test]
fn assemble_examples() {
    let ids: Vec<String> = (0..3000).map(|k| format!("d{k:04}")).collect();
    let scores: Vec<f64> = (0..3000).map(|k| -(k as f64)).collect();
    let mut pos = vec![false; 3000];
    for p in pos.iter_mut().take(100) {
        *p = true;
    }
    assert_eq!(assemble_case_decoys(&ids, &scores, &pos, 2500, 50).unwrap().len(), 2500);

    let mut pos = vec![false; 3000];
    for p in pos.iter_mut().skip(2940) {
        *p = true;
    }
    let got = assemble_case_decoys(&ids, &scores, &pos, 2500, 50).unwrap();
    assert_eq!(got.len(), 2550);
    assert_eq!(&got[2500..], &(2940..2990).collect::<Vec<_>>()[..]);

    let got = assemble_case_decoys(&ids[..10], &scores[..10], &pos[..10], 2500, 50).unwrap();
    assert_eq!(got, (0..10).collect::<Vec<_>>());

    // Positives inside the top-K count towards the cap.
    let mut pos = vec![false; 3000];
    for k in (0..10).chain(2600..2700) {
        pos[k] = true;
    }
    assert_eq!(assemble_case_decoys(&ids, &scores, &pos, 2500, 50).unwrap().len(), 2540);
}

#[test]
fn initial_loss_is_calibrated() {
    let set = synth::micro_corpus(8, 2, 6, 6).unwrap();
    let trainer = Trainer::new(&set, &HyperParams::default(), quick(1, 1)).unwrap();
    let pos: Vec<usize> = (0..set.decoys.len()).filter(|&k| set.decoys[k].positive()).collect();
    let neg: Vec<usize> = (0..set.decoys.len()).filter(|&k| !set.decoys[k].positive()).collect();
    let balanced: Vec<usize> = pos.iter().chain(&neg).copied().collect();
    let (s, _) = trainer.batch_gradients(&balanced).unwrap();
    let l = s.loss.unwrap();
    assert!((l - LN_2).abs() < 0.2 * LN_2, "{l}");

    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let batch = sample_batch(&set, trainer.config(), &mut rng).unwrap();
    let (s, _) = trainer.batch_gradients(&batch).unwrap();
    let l = s.loss.unwrap();
    assert!((l - LN_2).abs() < 0.2 * LN_2, "{l}");
}

#[test]
fn duplicate_items_weight_the_loss() {
    let set = synth::micro_corpus(9, 1, 2, 2).unwrap();
    let trainer = Trainer::new(&set, &small(), quick(1, 1)).unwrap();
    let single = |k: usize| trainer.batch_gradients(&[k]).unwrap().0.loss.unwrap();
    let (s, _) = trainer.batch_gradients(&[0, 0, 0, 2]).unwrap();
    let expected = (3.0 * single(0) + single(2)) / 4.0;
    assert!((s.loss.unwrap() - expected).abs() < 1e-12);
    assert_eq!(s.items, 4);
}

#[test]
fn batch_gradients_match_finite_differences() {
    let set = synth::micro_corpus(10, 2, 1, 1).unwrap();
    let mut trainer = Trainer::new(&set, &small(), quick(1, 1)).unwrap();
    let batch = [0, 1, 2, 3, 3];
    // Zero-initialised biases put fully padded pixels exactly on a relu kink.
    trainer.step(&batch).unwrap();
    let (_, g) = trainer.batch_gradients(&batch).unwrap();
    let g = g.unwrap();
    let w0 = trainer.state().weights.clone();
    let cfg = crate::tensor::GradCheckConfig {
        max_coords: 8,
        ..Default::default()
    };
    let report = crate::tensor::grad_check(
        w0.tensors(),
        &g,
        |ps| {
            let state = TrainState {
                weights: w0.with_tensors(ps.to_vec())?,
                optimizer: OptimizerState::new(ps),
                epoch: 0,
            };
            let t = Trainer::resume(&set, quick(1, 1), state)?;
            Ok(t.batch_gradients(&batch)?.0.loss.unwrap())
        },
        &cfg,
    )
    .unwrap();
    assert!(report.max_rel_error < 1e-3, "{}", report.max_rel_error);
}

#[test]
fn same_seed_same_loss_curve() {
    let set = synth::micro_corpus(11, 2, 3, 3).unwrap();
    let run = || Trainer::new(&set, &small(), quick(2, 5)).unwrap().run().unwrap();
    let (a, b) = (run(), run());
    assert_eq!(a.step_losses, b.step_losses);
    assert_eq!(a.weights, b.weights);
    assert_eq!(a.history.len(), 2);
    assert_eq!(a.history[1].lr, 1e-6);
}

#[test]
fn resume_reproduces_the_next_step() {
    let dir = tempfile::tempdir().unwrap();
    let set = synth::micro_corpus(12, 2, 3, 3).unwrap();
    let full = Trainer::new(&set, &small(), quick(3, 4)).unwrap().run().unwrap();

    let mut first = Trainer::new(&set, &small(), quick(3, 4)).unwrap().with_checkpoints(dir.path());
    first.run_epoch().unwrap();
    let ckpt = dir.path().join("epoch_0001.cnwt");
    assert!(ckpt.exists() && dir.path().join("epoch_0001.state.json").exists());
    let state = TrainState::load(&ckpt).unwrap();
    assert_eq!(state.weights, first.state().weights);
    assert_eq!(state.optimizer, first.state().optimizer);
    assert_eq!(state.epoch, 1);
    let rest = Trainer::resume(&set, quick(3, 4), state).unwrap().run().unwrap();
    assert_eq!(rest.step_losses[..], full.step_losses[4..]);
    assert_eq!(rest.weights, full.weights);
}

#[test]
fn non_finite_loss_aborts_with_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let set = synth::micro_corpus(13, 1, 2, 2).unwrap();
    let mut t = Trainer::new(&set, &small(), quick(3, 2)).unwrap().with_checkpoints(dir.path());
    t.run_epoch().unwrap();
    let k = t.state.weights.position("head.fc2.b").unwrap();
    t.state.weights.tensors_mut()[k].data_mut()[0] = f64::NAN;
    match t.run_epoch() {
        Err(Error::NonFiniteLoss { epoch, checkpoint, .. }) => {
            assert_eq!(epoch, 1);
            assert_eq!(checkpoint, Some(dir.path().join("epoch_0001.cnwt")));
        }
        other => panic!("expected a non-finite loss error, got {:?}", other.map(|r| r.0)),
    }
}

#[test]
fn validation_hook_selects_best_epoch() {
    let set = synth::micro_corpus(14, 1, 2, 2).unwrap();
    let calls = std::cell::Cell::new(0);
    let out = Trainer::new(&set, &small(), quick(3, 1))
        .unwrap()
        .with_validation(|_| {
            calls.set(calls.get() + 1);
            Ok([0.2, 0.9, 0.5][calls.get() - 1])
        })
        .run()
        .unwrap();
    assert_eq!(out.best_epoch, 2);
    assert_eq!(out.history[1].validation, Some(0.9));
    assert_ne!(out.weights, out.state.weights);
}

#[test]
fn small_model_fits_micro_corpus() {
    let set = synth::micro_corpus(15, 2, 4, 4).unwrap();
    let cfg = TrainConfig {
        lr0: 1e-2,
        lr_floor: 1e-4,
        ..quick(1, 60)
    };
    let out = Trainer::new(&set, &small(), cfg).unwrap().run().unwrap();
    let acc = training_accuracy(&set, &out.weights).unwrap();
    assert!(acc >= 0.95, "{acc}");
    let first: f64 = out.step_losses[..10].iter().map(|l| l.unwrap()).sum();
    let last: f64 = out.step_losses[50..].iter().map(|l| l.unwrap()).sum();
    assert!(last < first);
}

#[test]
fn history_csv_layout() {
    let csv = history_csv(&[EpochRecord {
        epoch: 1,
        mean_loss: 0.5,
        train_acc: 0.75,
        lr: 1e-4,
        wall_seconds: 1.25,
        validation: None,
    }]);
    assert_eq!(csv, "epoch,mean_loss,train_acc,lr,wall_seconds,validation\n1,0.50000000,0.750000,1.000000e-4,1.250,\n");
}

#[test]
fn loss_decreases_over_ten_step_windows() {
    let set = synth::micro_corpus(16, 2, 4, 4).unwrap();
    let cfg = TrainConfig {
        lr0: 3e-3,
        lr_floor: 3e-5,
        ..quick(1, 100)
    };
    let out = Trainer::new(&set, &small(), cfg).unwrap().run().unwrap();
    let losses: Vec<f64> = out.step_losses.iter().map(|l| l.unwrap()).collect();
    let windows: Vec<f64> = losses.chunks(10).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(windows.windows(2).all(|p| p[1] <= p[0]), "{windows:?}");
}
