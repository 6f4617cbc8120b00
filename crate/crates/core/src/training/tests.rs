use super::*;
use crate::encoder::ShiftMode;

fn small_config() -> EncoderConfig {
    EncoderConfig {
        num_layers: 1,
        model_dim: 16,
        num_heads: 2,
        ffn_dim: 32,
        max_seq_len: 24,
        seed: 3,
        ..EncoderConfig::default()
    }
}

fn tiny_corpus() -> PairDataset {
    generate_synthetic_corpus(11, 120)
}

#[test]
fn corpus_is_deterministic_and_disjoint() {
    let a = generate_synthetic_corpus(5, 300);
    let b = generate_synthetic_corpus(5, 300);
    assert_eq!(a, b);
    let mut ba = Vec::new();
    let mut bb = Vec::new();
    write_pairs(&a.train, &mut ba).unwrap();
    write_pairs(&b.train, &mut bb).unwrap();
    assert_eq!(ba, bb);
    a.validate().unwrap();
    assert_eq!(a.len(), 300);
    assert_eq!(a.train.len(), 240);
    assert_ne!(a, generate_synthetic_corpus(6, 300));
}

#[test]
fn corpus_labels_in_range_and_graded() {
    let ds = generate_synthetic_corpus(1, 500);
    let all: Vec<&PairRecord> = ds.train.iter().chain(&ds.dev).chain(&ds.test).collect();
    assert!(all.iter().all(|r| (0.0..=1.0).contains(&r.label)));
    let distinct: BTreeSet<u64> = all
        .iter()
        .map(|r| (r.label * 10.0).round() as u64)
        .collect();
    assert!(distinct.len() >= 6, "{distinct:?}");
    assert!(all.iter().filter(|r| r.a == r.b).all(|r| r.label == 1.0));
    assert!(!all
        .iter()
        .any(|r| r.a.starts_with(&format!("this {PROBE_NOUN} "))));
}

use std::collections::BTreeSet;

#[test]
fn pairs_round_trip_through_tsv() {
    let recs = vec![
        PairRecord::new("a dog runs.", "a cat sat.", 0.25),
        PairRecord::new("x", "y", 1.0),
    ];
    let mut buf = Vec::new();
    write_pairs(&recs, &mut buf).unwrap();
    assert_eq!(read_pairs(buf.as_slice(), false).unwrap(), recs);
}

#[test]
fn bad_rows_are_rejected() {
    assert!(matches!(
        read_pairs("a\tb\t1.5\n".as_bytes(), false),
        Err(TrainError::Label { line: 1, .. })
    ));
    assert!(matches!(
        read_pairs("a\tb\tx\n".as_bytes(), false),
        Err(TrainError::Format { line: 1, .. })
    ));
    assert!(read_pairs("a\tb\n".as_bytes(), false).is_err());
}

#[test]
fn overlapping_splits_are_rejected() {
    let r = PairRecord::new("a", "b", 0.5);
    let swapped = PairRecord::new("b", "a", 0.5);
    assert!(matches!(
        PairDataset::new(vec![r], vec![], vec![swapped]),
        Err(TrainError::Overlap {
            split: Split::Test,
            ..
        })
    ));
}

#[test]
fn schedule_warms_up_then_decays() {
    let cfg = TrainConfig {
        warmup_fraction: 0.1,
        learning_rate: 1.0,
        ..TrainConfig::default()
    };
    let lrs: Vec<f64> = (0..100).map(|s| learning_rate_at(&cfg, s, 100)).collect();
    assert!((lrs[0] - 0.1).abs() < 1e-12);
    assert!((lrs[9] - 1.0).abs() < 1e-12);
    assert!((lrs[10] - 1.0).abs() < 1e-12);
    assert!(lrs[10..].windows(2).all(|w| w[1] < w[0]));
    assert!(lrs[99] > 0.0);
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let ds = tiny_corpus();
    let model = init_model(small_config(), ds.train_texts()).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        learning_rate: 0.0,
        ..TrainConfig::default()
    };
    let out = train(&model, &ds.train, &cfg).unwrap();
    assert_eq!(out.model.params(), model.params());
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let ds = tiny_corpus();
    let model = init_model(small_config(), ds.train_texts()).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&model, &ds.train, &cfg).unwrap();
    let b = train(&model, &ds.train, &cfg).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.epoch_losses, b.epoch_losses);
    let before = mean_squared_error(&model, &ds.train).unwrap();
    let after = mean_squared_error(&a.model, &ds.train).unwrap();
    assert!(after < before, "{before} -> {after}");
}

#[test]
fn shifted_training_matches_gradient_path() {
    let ds = tiny_corpus();
    let cfg = EncoderConfig {
        shift_mode: ShiftMode::ReferenceShift,
        ..small_config()
    };
    let model = init_model(cfg, ds.train_texts()).unwrap();
    let out = train(
        &model,
        &ds.train[..32],
        &TrainConfig {
            epochs: 1,
            ..TrainConfig::default()
        },
    )
    .unwrap();
    assert!(out.model.params().iter().all(Tensor::is_finite));
    assert_ne!(out.model.params(), model.params());
}

#[test]
fn diverging_rate_is_reported() {
    let ds = tiny_corpus();
    let model = init_model(small_config(), ds.train_texts()).unwrap();
    let cfg = TrainConfig {
        epochs: 2,
        learning_rate: 1e300,
        ..TrainConfig::default()
    };
    let r = train(&model, &ds.train, &cfg);
    assert!(matches!(r, Err(TrainError::NonFiniteLoss { .. })), "{r:?}");
}

#[test]
fn empty_inputs_are_errors() {
    let model = init_model(small_config(), ["a b"]).unwrap();
    assert!(matches!(
        train(&model, &[], &TrainConfig::default()),
        Err(TrainError::Empty(_))
    ));
    assert!(evaluate_spearman(&model, &[]).is_err());
}
