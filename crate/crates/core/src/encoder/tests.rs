use super::*;
use crate::numerics::{finite_diff_jacobian, jacobian, NumericsError, Tensor};

fn vocab() -> Vocab {
    Vocab::from_words([
        "a", "dog", ".", "runs", "b", "the", "cat", "sat", "##s", "play",
    ])
}

fn tiny(shift: ShiftMode, head: Head) -> SiameseEncoder {
    let config = EncoderConfig {
        num_layers: 2,
        model_dim: 8,
        num_heads: 2,
        ffn_dim: 16,
        max_seq_len: 12,
        projection: true,
        head,
        shift_mode: shift,
        seed: 7,
    };
    SiameseEncoder::new(config, vocab()).unwrap()
}

fn ids(v: &Vocab, words: &[&str]) -> Vec<u32> {
    words.iter().map(|w| v.id(w).unwrap()).collect()
}

#[test]
fn tokenize_direct_lookup() {
    let v = vocab();
    let t = v.tokenize("A dog.");
    let mut expected = vec![CLS];
    expected.extend(ids(&v, &["a", "dog", "."]));
    expected.push(EOS);
    assert_eq!(t.ids, expected);
    assert_eq!(t.word_spans, vec![(1, 2), (2, 3), (3, 4)]);
}

#[test]
fn tokenize_empty_input() {
    let t = vocab().tokenize("");
    assert_eq!(t.ids, vec![CLS, EOS]);
    assert!(t.word_spans.is_empty());
}

#[test]
fn tokenize_unknown_word() {
    let v = vocab();
    let t = v.tokenize("zzzqqq runs");
    assert_eq!(t.ids, vec![CLS, UNK, v.id("runs").unwrap(), EOS]);
}

#[test]
fn tokenize_word_pieces_share_a_span() {
    let v = vocab();
    let t = v.tokenize("plays");
    assert_eq!(
        t.ids,
        vec![CLS, v.id("play").unwrap(), v.id("##s").unwrap(), EOS]
    );
    assert_eq!(t.word_spans, vec![(1, 3)]);
    assert_eq!(t.word_units(&v), vec!["[CLS]", "plays", "[EOS]"]);
}

#[test]
fn vocab_serde_round_trip() {
    let v = vocab();
    let json = serde_json::to_string(&v).unwrap();
    let back: Vocab = serde_json::from_str(&json).unwrap();
    assert_eq!(v, back);
    assert!(serde_json::from_str::<Vocab>("[\"a\"]").is_err());
}

#[test]
fn reference_examples() {
    let v = vocab();
    let t = v.tokenize("a dog");
    assert_eq!(make_reference(&t).ids, vec![CLS, PAD, PAD, EOS]);
    let empty = v.tokenize("");
    assert_eq!(make_reference(&empty).ids, vec![CLS, EOS]);
    let seven = v.tokenize("the cat sat a dog");
    assert_eq!(seven.len(), 7);
    assert_eq!(make_reference(&seven).len(), 7);
}

#[test]
fn shifted_reference_encodes_to_zero() {
    let m = tiny(ShiftMode::ReferenceShift, Head::Dot);
    let t = m.tokenize("the cat sat");
    let r = make_reference(&t);
    let e = m.embedding(&r).unwrap();
    assert!(e.data().iter().all(|&x| x == 0.0));
    assert_eq!(m.similarity(&t, &r).unwrap(), 0.0);
    assert_eq!(m.similarity(&r, &t).unwrap(), 0.0);
}

#[test]
fn pooling_only_is_mean_of_embedding_rows() {
    let m = SiameseEncoder::new(EncoderConfig::pooling_only(4), vocab()).unwrap();
    let t = m.tokenize("a dog");
    let (e, acts) = m.encode(&t).unwrap();
    assert_eq!(acts.len(), 1);
    let tok = &m.params()[0];
    let pos = &m.params()[1];
    for k in 0..4 {
        let mean: f64 = t
            .ids
            .iter()
            .enumerate()
            .map(|(p, &id)| tok.get2(id as usize, k) + pos.get2(p, k))
            .sum::<f64>()
            / t.len() as f64;
        assert!((e.data()[k] - mean).abs() < 1e-15);
    }
}

// Regenerate with `cargo test -p siamattr print_golden -- --ignored --nocapture`
// after an intentional change to initialization or the forward pass.
const GOLDEN_A_B: [f64; 8] = [
    0.43700515395262834,
    -0.3256686166751859,
    0.12630442022200153,
    -0.5800807868023995,
    -0.2649510571372432,
    0.3888216352940957,
    0.6454893655244489,
    0.011446653860965897,
];

#[test]
fn golden_embedding() {
    let m = tiny(ShiftMode::None, Head::Cosine);
    let e = m.embedding(&m.tokenize("a b")).unwrap();
    for (got, want) in e.data().iter().zip(GOLDEN_A_B) {
        assert!((got - want).abs() < 1e-12, "{:?}", e.data());
    }
}

#[test]
fn cosine_self_similarity() {
    let m = tiny(ShiftMode::None, Head::Cosine);
    let t = m.tokenize("the dog runs");
    assert!((m.similarity(&t, &t).unwrap() - 1.0).abs() < 1e-6);
}

#[test]
fn cosine_conventions() {
    assert_eq!(cosine(&[1.0, 0.0], &[0.0, 1.0]), 0.0);
    assert_eq!(cosine(&[0.0, 0.0], &[0.0, 1.0]), 0.0);
    assert!((cosine(&[2.0, 0.0], &[3.0, 0.0]) - 1.0).abs() < 1e-15);
}

#[test]
fn similarity_is_symmetric() {
    for (shift, head) in [
        (ShiftMode::None, Head::Cosine),
        (ShiftMode::ReferenceShift, Head::Dot),
        (ShiftMode::ReferenceShift, Head::Cosine),
    ] {
        let m = tiny(shift, head);
        let a = m.tokenize("the cat sat");
        let b = m.tokenize("a dog runs .");
        let ab = m.similarity(&a, &b).unwrap();
        let ba = m.similarity(&b, &a).unwrap();
        assert!((ab - ba).abs() < 1e-12);
    }
}

#[test]
fn overlong_sequence_names_the_limit() {
    let m = tiny(ShiftMode::None, Head::Dot);
    let t = m.tokenize(&"a ".repeat(20));
    let err = m.embedding(&t).unwrap_err();
    assert!(matches!(
        err,
        EncoderError::SequenceTooLong {
            max_seq_len: 12,
            ..
        }
    ));
    assert!(err.to_string().contains("max_seq_len"));
}

#[test]
fn invalid_config_rejected() {
    let config = EncoderConfig {
        model_dim: 10,
        num_heads: 4,
        ..EncoderConfig::default()
    };
    assert!(matches!(
        SiameseEncoder::new(config, vocab()),
        Err(EncoderError::Config(_))
    ));
}

#[test]
fn tail_reproduces_encode_at_every_layer() {
    for shift in [ShiftMode::None, ShiftMode::ReferenceShift] {
        let m = tiny(shift, Head::Cosine);
        let t = m.tokenize("the cat sat .");
        let (e, acts) = m.encode(&t).unwrap();
        assert_eq!(acts.len(), 3);
        for act in &acts {
            let tail = m.encode_tail(act).unwrap();
            let gap = tail.sub(&e).unwrap().max_abs();
            assert!(gap < 1e-12, "layer {} gap {gap}", act.layer_index);
        }
    }
}

#[test]
fn tail_at_last_layer_is_pooling() {
    let mut config = tiny(ShiftMode::None, Head::Dot).config().clone();
    config.projection = false;
    let m = SiameseEncoder::new(config, vocab()).unwrap();
    let repr = Tensor::from_rows(&[vec![1.0; 8], vec![3.0; 8]]).unwrap();
    let e = m.encode_tail(&LayerActivation::new(2, repr)).unwrap();
    assert_eq!(e.data(), &[2.0; 8]);
}

#[test]
fn tail_rejects_bad_shapes() {
    let m = tiny(ShiftMode::None, Head::Dot);
    let bad = LayerActivation::new(1, Tensor::zeros(&[3, 5]));
    assert!(matches!(
        m.encode_tail(&bad),
        Err(EncoderError::ActivationShape { .. })
    ));
    let deep = LayerActivation::new(3, Tensor::zeros(&[3, 8]));
    assert!(matches!(
        m.encode_tail(&deep),
        Err(EncoderError::LayerOutOfRange { .. })
    ));
}

#[test]
fn tail_jacobian_matches_finite_differences() {
    use rand::{Rng, SeedableRng};
    let m = tiny(ShiftMode::None, Head::Cosine);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let data: Vec<f64> = (0..4 * 8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let x = Tensor::new(vec![4, 8], data).unwrap();
    for layer in [0, 1] {
        let jac = jacobian(
            |tape, v| {
                let bound = m.bind(tape, false);
                m.tail_on_tape(tape, &bound, layer, v)
                    .map_err(|_| NumericsError::NotDifferentiable)
            },
            &x,
        )
        .unwrap();
        let fd = finite_diff_jacobian(
            |p: &Tensor| m.encode_tail(&LayerActivation::new(layer, p.clone())),
            &x,
            1e-6,
        )
        .unwrap();
        let mut worst: f64 = 0.0;
        for (a, f) in jac.data().iter().zip(fd.data()) {
            worst = worst.max((a - f).abs() / a.abs().max(f.abs()).max(1e-6));
        }
        assert!(worst < 1e-4, "layer {layer}: {worst}");
    }
}

#[test]
fn save_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let m = tiny(ShiftMode::ReferenceShift, Head::Cosine);
    let p1 = dir.path().join("m1.bin");
    let p2 = dir.path().join("m2.bin");
    save_model(&m, &p1).unwrap();
    let loaded = load_model(&p1).unwrap();
    save_model(&loaded, &p2).unwrap();
    assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    assert_eq!(loaded, m);
    let a = m.tokenize("the cat sat");
    let b = m.tokenize("a dog runs");
    assert_eq!(
        m.similarity(&a, &b).unwrap().to_bits(),
        loaded.similarity(&a, &b).unwrap().to_bits()
    );
}

#[test]
fn load_reports_distinct_errors() {
    let m = tiny(ShiftMode::None, Head::Dot);
    let bytes = to_bytes(&m).unwrap();

    let mut corrupted = bytes.clone();
    let last = corrupted.len() - 1;
    corrupted[last] ^= 0xff;
    assert!(matches!(
        from_bytes(&corrupted),
        Err(EncoderError::Checksum)
    ));

    let mut weights = bytes.clone();
    let mid = weights.len() - 100;
    weights[mid] ^= 0x01;
    assert!(matches!(from_bytes(&weights), Err(EncoderError::Checksum)));

    let mut version = bytes.clone();
    version[8] = 99;
    assert!(matches!(
        from_bytes(&version),
        Err(EncoderError::VersionMismatch { found: 99, .. })
    ));

    assert!(matches!(
        from_bytes(&bytes[..bytes.len() - 40]),
        Err(EncoderError::Truncated { .. })
    ));
    assert!(matches!(
        from_bytes(&bytes[..10]),
        Err(EncoderError::Truncated { .. })
    ));
    assert!(matches!(
        from_bytes(b"NOTMODEL0000000000000"),
        Err(EncoderError::BadMagic)
    ));
}
