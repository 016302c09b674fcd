mod common;

use bandsel::dataio::SamplePair;
use bandsel::model::{init_params, ModelConfig};
use bandsel::training::{class_from_logits, predict, train, TrainConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn micro() -> ModelConfig {
    ModelConfig::micro(1, 2, 2, 8, 2)
}

/// Two classes separated by the sign of band 0.
fn separable(n: usize, seed: u64) -> Vec<SamplePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let label = (i % 2) as u32 + 1;
            let sign = if label == 1 { -1.0 } else { 1.0 };
            SamplePair {
                hsi_patch: vec![sign * rng.gen_range(0.5..1.5), rng.gen_range(-1.0..1.0)],
                lidar_patch: vec![rng.gen_range(-1.0..1.0)],
                patch_size: 1,
                bands: 2,
                channels: 1,
                label,
                center: (i, 0),
            }
        })
        .collect()
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 8,
        max_epochs: epochs,
        learning_rate: 1e-3,
        augment: false,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn single_epoch_with_zero_patience() {
    let cfg = TrainConfig {
        early_stop_patience: 0,
        ..quick(1)
    };
    let (_, log) = train(init_params(&micro()).unwrap(), &separable(20, 0), &cfg).unwrap();
    assert_eq!(log.epochs(), 1);
    assert_eq!(log.val_loss.len(), 1);
    assert_eq!(log.val_oa.len(), 1);
    assert_eq!(log.stopped_epoch, 1);
}

#[test]
fn same_seed_same_run() {
    let data = separable(24, 1);
    let p = init_params(&micro()).unwrap();
    let (a, la) = train(p.clone(), &data, &quick(5)).unwrap();
    let (b, lb) = train(p, &data, &quick(5)).unwrap();
    assert_eq!(la.train_loss, lb.train_loss);
    assert_eq!(la.val_loss, lb.val_loss);
    assert_eq!(a.tensors(), b.tensors());
}

#[test]
fn thread_count_does_not_change_result() {
    let data = separable(24, 2);
    let p = init_params(&micro()).unwrap();
    let (a, _) = train(p.clone(), &data, &quick(3)).unwrap();
    let (b, _) = train(p, &data, &TrainConfig { threads: 4, ..quick(3) }).unwrap();
    for (x, y) in a.tensors().iter().zip(b.tensors()) {
        assert!(x.data().iter().zip(y.data()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }
}

#[test]
fn loss_descends_on_separable_set() {
    let cfg = TrainConfig {
        early_stop_patience: 100,
        ..quick(10)
    };
    let (params, log) = train(init_params(&micro()).unwrap(), &separable(40, 4), &cfg).unwrap();
    assert_eq!(log.epochs(), 10);
    assert!(log.train_loss[9] < log.train_loss[0], "{:?}", log.train_loss);
    let test = separable(40, 5);
    let correct = test.iter().filter(|s| predict(&params, s).unwrap() == s.label).count();
    assert!(correct >= 30, "{correct}/40");
}

#[test]
fn adam_steps_match_batches() {
    let data = separable(21, 6);
    let cfg = TrainConfig {
        batch_size: 4,
        early_stop_patience: 100,
        augment: true,
        ..quick(3)
    };
    let (_, log) = train(init_params(&micro()).unwrap(), &data, &cfg).unwrap();
    assert_eq!(log.train_samples, 5 * (21 - log.val_samples));
    let per_epoch = (log.train_samples + 3) / 4;
    assert_eq!(log.adam_steps, (per_epoch * log.epochs()) as u64);
}

#[test]
fn restores_best_validation_epoch() {
    let cfg = TrainConfig {
        learning_rate: 0.05,
        early_stop_patience: 2,
        min_delta: 0.0,
        ..quick(30)
    };
    let (_, log) = train(init_params(&micro()).unwrap(), &separable(40, 7), &cfg).unwrap();
    let min = log.val_loss.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(log.val_loss[log.best_epoch - 1], min);
    assert!(log.stopped_epoch - log.best_epoch <= 3);
}

#[test]
fn rejects_bad_inputs() {
    let p = init_params(&micro()).unwrap();
    assert!(train(p.clone(), &[], &quick(1)).is_err());
    let mut bad = separable(4, 8);
    bad[2].label = 3;
    let err = train(p.clone(), &bad, &quick(1)).unwrap_err();
    assert!(err.to_string().contains("label 3"), "{err}");
    bad[2].label = 0;
    assert!(train(p, &bad, &quick(1)).is_err());
}

#[test]
fn runlog_csv_has_one_row_per_epoch() {
    let (_, log) = train(init_params(&micro()).unwrap(), &separable(20, 9), &quick(4)).unwrap();
    let csv = log.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,train_loss,val_loss,val_oa");
    assert_eq!(lines.len(), log.epochs() + 1);
    assert!(lines[1].starts_with("1,"));
}

#[test]
fn prediction_rule() {
    assert_eq!(class_from_logits(&[0.2, 0.9]), 2);
    assert_eq!(class_from_logits(&[0.5, 0.5]), 1);
    assert_eq!(class_from_logits(&[-1.0, 3.0, 3.0]), 2);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..100 {
        let k = rng.gen_range(1..10);
        let logits: Vec<f64> = (0..k).map(|_| rng.gen_range(-3i32..3) as f64).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let oracle = logits.iter().position(|&v| v == max).unwrap() as u32 + 1;
        assert_eq!(class_from_logits(&logits), oracle);
    }
}

#[test]
fn predict_matches_forward_argmax() {
    let cfg = micro();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = common::random_params(&cfg, &mut rng);
    for _ in 0..20 {
        let s = common::random_sample(&cfg, &mut rng);
        let logits = p.forward(&s).unwrap().logits;
        assert_eq!(predict(&p, &s).unwrap(), class_from_logits(logits.data()));
    }
}
