mod common;

use std::collections::BTreeMap;

use common::gradcheck;
use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use ttseval::ratings::SbsPair;
use ttseval::sbs::{self, SbsModelFile, SbsModelParams, SbsTrainConfig};

fn pair(a: &str, b: &str, label: u8) -> SbsPair {
    SbsPair {
        clip_a: a.into(),
        clip_b: b.into(),
        label,
        margin: 1.0,
        text_id: "t".into(),
    }
}

/// Clips with embedding (mos, 1 + small noise, noise); pairs labelled by MOS order.
fn separable(n_clips: usize, n_pairs: usize, seed: u64) -> (Vec<SbsPair>, BTreeMap<String, Vec<f64>>) {
    let mut r = common::rng(seed);
    let g = Normal::new(0.0, 0.05).unwrap();
    let mos: Vec<f64> = (0..n_clips).map(|_| r.random_range(1.0..5.0)).collect();
    let emb = (0..n_clips)
        .map(|i| (format!("c{i}"), vec![mos[i] - 3.0, 1.0 + g.sample(&mut r), g.sample(&mut r)]))
        .collect();
    let mut pairs = Vec::new();
    while pairs.len() < n_pairs {
        let (i, j) = (r.random_range(0..n_clips), r.random_range(0..n_clips));
        if (mos[i] - mos[j]).abs() > 0.3 {
            pairs.push(pair(&format!("c{i}"), &format!("c{j}"), u8::from(mos[i] > mos[j])));
        }
    }
    (pairs, emb)
}

#[test]
fn hand_score_and_sigmoid() {
    let p = SbsModelParams::new(DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]));
    assert_eq!(sbs::score(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
    assert!((sbs::predict(&p, &[1.0, 0.0], &[0.0, 1.0]).unwrap() - 0.731_058_578_630_005).abs() < 1e-12);
    assert_eq!(sbs::predict(&p, &[0.3, 0.2], &[0.3, 0.2]).unwrap(), 0.5);
}

#[test]
fn score_scales_quadratically_with_inputs_and_linearly_with_w() {
    let mut r = common::rng(8);
    for _ in 0..50 {
        let d = r.random_range(2..10);
        let w = DMatrix::from_fn(d, d, |_, _| r.random_range(-1.0..1.0));
        let a: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
        let c = r.random_range(0.1..3.0);
        let s = sbs::score(&SbsModelParams::new(w.clone()), &a, &b).unwrap();
        let ca: Vec<f64> = a.iter().map(|v| v * c).collect();
        let cb: Vec<f64> = b.iter().map(|v| v * c).collect();
        let s_in = sbs::score(&SbsModelParams::new(w.clone()), &ca, &cb).unwrap();
        let s_w = sbs::score(&SbsModelParams::new(w * c), &a, &b).unwrap();
        assert!((s_in - c * c * s).abs() < 1e-12 * (1.0 + s.abs()));
        assert!((s_w - c * s).abs() < 1e-12 * (1.0 + s.abs()));
    }
}

#[test]
fn gradients_match_finite_differences() {
    for seed in 0..5 {
        let e = gradcheck::sbs_instance(seed, 4, 4, 1e-3);
        assert!(e <= 1e-4, "seed {seed}: {e}");
        let e = gradcheck::sbs_instance(100 + seed, 3, 6, 0.0);
        assert!(e <= 1e-4, "seed {seed}: {e}");
    }
}

#[test]
fn gradient_flips_with_label_at_zero_score() {
    let p = SbsModelParams::new(DMatrix::zeros(3, 3));
    let (a, b) = ([1.0, 0.0, 2.0], [0.0, 1.0, -1.0]);
    let g1 = sbs::loss_and_grad(&p, &[(&a, &b, 1)], 0.0).unwrap();
    let g0 = sbs::loss_and_grad(&p, &[(&a, &b, 0)], 0.0).unwrap();
    assert!((g1.loss - std::f64::consts::LN_2).abs() < 1e-15);
    assert!((g1.grad_w + g0.grad_w).norm() < 1e-15);
}

#[test]
fn separable_pairs_are_learned() {
    let (pairs, emb) = separable(80, 600, 2);
    let cfg = SbsTrainConfig {
        epochs: 50,
        ..SbsTrainConfig::default()
    };
    let t = sbs::train_sbs(&pairs, &emb, &cfg).unwrap();
    let (acc, auc) = sbs::evaluate_sbs(&t.params, &pairs, &emb).unwrap();
    assert!(acc >= 0.95 && auc >= 0.95, "{acc} {auc}");
    assert!(t.loss_history.last().unwrap() < &t.loss_history[0]);

    let again = sbs::train_sbs(&pairs, &emb, &cfg).unwrap();
    assert_eq!(again.params, t.params);
    assert_eq!(again.loss_history, t.loss_history);
}

#[test]
fn projection_training_runs_and_learns() {
    let (pairs, emb) = separable(60, 400, 5);
    let cfg = SbsTrainConfig {
        epochs: 60,
        projection_dim: Some(2),
        ..SbsTrainConfig::default()
    };
    let t = sbs::train_sbs(&pairs, &emb, &cfg).unwrap();
    assert_eq!(t.params.input_dim(), 3);
    assert_eq!(t.params.d(), 2);
    let (acc, _) = sbs::evaluate_sbs(&t.params, &pairs, &emb).unwrap();
    assert!(acc >= 0.9, "{acc}");
}

#[test]
fn identical_embeddings_stay_at_chance() {
    let emb: BTreeMap<String, Vec<f64>> = (0..10).map(|i| (format!("c{i}"), vec![0.4, -1.0, 2.0])).collect();
    let pairs: Vec<_> = (0..40).map(|i| pair(&format!("c{}", i % 10), &format!("c{}", (i + 3) % 10), (i % 2) as u8)).collect();
    let cfg = SbsTrainConfig {
        l2_weight: 0.0,
        epochs: 10,
        ..SbsTrainConfig::default()
    };
    let t = sbs::train_sbs(&pairs, &emb, &cfg).unwrap();
    for l in &t.loss_history {
        assert!((l - std::f64::consts::LN_2).abs() < 1e-6);
    }
    let (acc, auc) = sbs::evaluate_sbs(&t.params, &pairs, &emb).unwrap();
    assert_eq!(acc, 0.5);
    assert_eq!(auc, 0.5);
}

#[test]
fn constant_half_model_scores_negative_rate() {
    let (mut pairs, emb) = separable(20, 50, 9);
    pairs.iter_mut().take(10).for_each(|p| p.label = 0);
    let zero = SbsModelParams::new(DMatrix::zeros(3, 3));
    let (acc, auc) = sbs::evaluate_sbs(&zero, &pairs, &emb).unwrap();
    let negatives = pairs.iter().filter(|p| p.label == 0).count() as f64 / pairs.len() as f64;
    assert_eq!(acc, negatives);
    assert_eq!(auc, 0.5);
}

#[test]
fn model_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let mut r = common::rng(4);
    let params = SbsModelParams::with_projection(
        DMatrix::from_fn(2, 2, |_, _| r.random_range(-1.0..1.0)),
        DMatrix::from_fn(5, 2, |_, _| r.random_range(-1.0..1.0)),
    );
    let path = dir.path().join("m.json");
    SbsModelFile::new(&params, SbsTrainConfig::default()).save(&path).unwrap();
    let back = SbsModelFile::load(&path).unwrap().params().unwrap();
    assert_eq!(back, params);

    let mut bad = SbsModelFile::new(&params, SbsTrainConfig::default());
    bad.w.pop();
    bad.save(&path).unwrap();
    assert!(SbsModelFile::load(&path).is_err());
    std::fs::write(&path, "{\"format\":\"other\"}").unwrap();
    assert!(SbsModelFile::load(&path).is_err());
}

#[test]
fn training_rejects_bad_inputs() {
    let emb: BTreeMap<String, Vec<f64>> = [("a".to_string(), vec![1.0, 2.0])].into();
    let cfg = SbsTrainConfig::default();
    assert!(sbs::train_sbs(&[], &emb, &cfg).is_err());
    assert!(sbs::train_sbs(&[pair("a", "missing", 1)], &emb, &cfg).is_err());
    let zero_lr = SbsTrainConfig {
        learning_rate: 0.0,
        ..cfg
    };
    assert!(sbs::train_sbs(&[pair("a", "a", 1)], &emb, &zero_lr).is_err());
}
