use super::*;
use crate::encoder::{EncoderConfig, ShiftMode, Vocab};

fn vocab() -> Vocab {
    Vocab::from_words([
        "a", "dog", "cat", "runs", "sat", "the", "on", "mat", ".", ",",
    ])
}

fn toy(shift: ShiftMode, head: Head) -> SiameseEncoder {
    let config = EncoderConfig {
        num_layers: 2,
        model_dim: 8,
        num_heads: 2,
        ffn_dim: 16,
        max_seq_len: 16,
        projection: true,
        head,
        shift_mode: shift,
        seed: 11,
    };
    SiameseEncoder::new(config, vocab()).unwrap()
}

fn pooling_only(shift: ShiftMode, head: Head, projection: bool) -> SiameseEncoder {
    let config = EncoderConfig {
        projection,
        head,
        shift_mode: shift,
        seed: 5,
        ..EncoderConfig::pooling_only(4)
    };
    SiameseEncoder::new(config, vocab()).unwrap()
}

fn request(
    model: &SiameseEncoder,
    layer: usize,
    steps: usize,
    reduce: Reduce,
) -> AttributionRequest {
    AttributionRequest {
        layer,
        steps,
        reduce,
        ..AttributionRequest::for_model(model)
    }
}

#[test]
fn path_midpoint_and_endpoint() {
    let x = Tensor::vector(vec![2.0]);
    let r = Tensor::vector(vec![0.0]);
    let path = interpolation_path(&x, &r, 2).unwrap();
    assert_eq!(
        path,
        vec![Tensor::vector(vec![1.0]), Tensor::vector(vec![2.0])]
    );
    assert_eq!(interpolation_path(&x, &r, 1).unwrap(), vec![x.clone()]);
    assert_eq!(interpolation_path(&x, &x, 3).unwrap(), vec![x.clone(); 3]);
    assert!(matches!(
        interpolation_path(&x, &r, 0),
        Err(AttributionError::ZeroSteps)
    ));
    assert!(interpolation_path(&x, &Tensor::vector(vec![0.0, 1.0]), 2).is_err());
}

#[test]
fn linear_model_integrated_jacobian_is_the_map() {
    let m = pooling_only(ShiftMode::ReferenceShift, Head::Dot, false);
    let t = m.tokenize("the dog runs");
    let len = t.len();
    for steps in [1, 7, 100] {
        let j = integrated_jacobian(&m, &t, 0, steps).unwrap();
        assert_eq!(j.values.shape(), &[4, len * 4]);
        for k in 0..4 {
            for c in 0..len * 4 {
                let want = if c % 4 == k { 1.0 / len as f64 } else { 0.0 };
                assert!((j.values.get2(k, c) - want).abs() < 1e-15);
            }
        }
    }
}

#[test]
fn more_steps_approach_the_fine_grid() {
    let m = toy(ShiftMode::None, Head::Dot);
    let t = m.tokenize("the cat sat on the mat");
    let fine = integrated_jacobian(&m, &t, 0, 10_000).unwrap().values;
    let gap = |n| {
        integrated_jacobian(&m, &t, 0, n)
            .unwrap()
            .values
            .sub(&fine)
            .unwrap()
            .max_abs()
    };
    assert!(gap(200) < gap(1));
}

#[test]
fn constant_path_repeats_the_reference_jacobian() {
    let m = toy(ShiftMode::None, Head::Dot);
    let t = m.tokenize("");
    let j = integrated_jacobian(&m, &t, 1, 5).unwrap();
    let r = model_reference_layer(&m, &t, 1);
    let single = jacobian_at(&m, 1, &r, Target::Embedding, 1.0).unwrap();
    assert!(j.values.sub(&single).unwrap().max_abs() < 1e-14);
}

fn model_reference_layer(m: &SiameseEncoder, t: &TokenSeq, layer: usize) -> Tensor {
    m.activations(&make_reference(t)).unwrap()[layer]
        .repr
        .clone()
}

#[test]
fn identity_encoder_feature_pairs() {
    let id = Tensor::identity(2);
    let a = attribution_matrix(&id, &id, &[1.0, 2.0], &[3.0, 4.0]).unwrap();
    assert_eq!(
        a,
        Tensor::from_rows(&[vec![3.0, 0.0], vec![0.0, 8.0]]).unwrap()
    );
    assert_eq!(a.sum(), 11.0);
    let zero = Tensor::zeros(&[2, 2]);
    assert_eq!(
        attribution_matrix(&zero, &id, &[1.0, 2.0], &[3.0, 4.0])
            .unwrap()
            .max_abs(),
        0.0
    );
    assert!(attribution_matrix(&id, &Tensor::identity(3), &[1.0, 2.0], &[3.0, 4.0, 5.0]).is_err());
}

#[test]
fn feature_pairs_match_the_linear_oracle() {
    let m = pooling_only(ShiftMode::ReferenceShift, Head::Dot, true);
    let a = m.tokenize("the dog");
    let b = m.tokenize("a cat sat");
    let res = attribute_pair(&m, &a, &b, &request(&m, 0, 1, Reduce::Feature)).unwrap();
    let w = &m.params()[2];
    let d = 4;
    let delta = |t: &TokenSeq| {
        let acts = m.activations(t).unwrap();
        let refs = m.activations(&make_reference(t)).unwrap();
        acts[0].repr.sub(&refs[0].repr).unwrap().into_data()
    };
    let (da, db) = (delta(&a), delta(&b));
    let (ta, tb) = (a.len() as f64, b.len() as f64);
    let mut worst: f64 = 0.0;
    for i in 0..da.len() {
        for j in 0..db.len() {
            // e = W^T mean(x): d e_k / d x_{t,i} = W[i,k] / T
            let wtw: f64 = (0..d).map(|k| w.get2(i % d, k) * w.get2(j % d, k)).sum();
            let want = da[i] * wtw / (ta * tb) * db[j];
            worst = worst.max((res.matrix.get2(i, j) - want).abs());
        }
    }
    assert!(worst < 1e-12, "{worst}");
    assert!(res.attribution_error < 1e-12);
}

#[test]
fn token_reduction_sums_blocks() {
    let m = reduce_to_tokens(&Tensor::identity(4), 2).unwrap();
    assert_eq!(
        m,
        Tensor::from_rows(&[vec![2.0, 0.0], vec![0.0, 2.0]]).unwrap()
    );
    let single = Tensor::from_rows(&[vec![1.5, -0.25], vec![0.5, 2.0]]).unwrap();
    let one = reduce_to_tokens(&single, 2).unwrap();
    assert_eq!(one.shape(), &[1, 1]);
    assert_eq!(one.data()[0], single.sum());
    assert!(reduce_to_tokens(&Tensor::identity(3), 2).is_err());
}

#[test]
fn token_reduction_conserves_the_total() {
    let m = toy(ShiftMode::ReferenceShift, Head::Dot);
    let a = m.tokenize("the dog runs");
    let b = m.tokenize("a cat sat on the mat");
    let feat = attribute_pair(&m, &a, &b, &request(&m, 1, 3, Reduce::Feature)).unwrap();
    let tok = attribute_pair(&m, &a, &b, &request(&m, 1, 3, Reduce::Token)).unwrap();
    let reduced = reduce_to_tokens(&feat.matrix, 8).unwrap();
    assert!((reduced.sum() - feat.matrix.sum()).abs() < 1e-12);
    assert!(reduced.sub(&tok.matrix).unwrap().max_abs() < 1e-12);
}

#[test]
fn word_reduction_averages_blocks() {
    let ones = Tensor::from_rows(&[vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
    let w = tokens_to_words(&ones, &[(0, 2)], &[(0, 2)]).unwrap();
    assert_eq!(w.mean.data(), &[1.0]);
    assert_eq!(w.sum.data(), &[4.0]);

    let block = Tensor::from_rows(&[vec![0.0, 2.0], vec![4.0, 6.0]]).unwrap();
    assert_eq!(
        tokens_to_words(&block, &[(0, 2)], &[(0, 2)])
            .unwrap()
            .mean
            .data(),
        &[3.0]
    );

    let m = Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap();
    let w = tokens_to_words(&m, &[(0, 1), (1, 2)], &[(0, 1), (1, 2), (2, 3)]).unwrap();
    assert_eq!(w.mean, m);

    // CLS and EOS stay separate units around a two-piece word
    let m = Tensor::from_rows(&[
        vec![1.0, 0.0, 0.0, 0.0],
        vec![0.0, 1.0, 3.0, 0.0],
        vec![0.0, 5.0, 7.0, 0.0],
        vec![0.0, 0.0, 0.0, 1.0],
    ])
    .unwrap();
    let w = tokens_to_words(&m, &[(1, 3)], &[(1, 3)]).unwrap();
    assert_eq!(w.mean.shape(), &[3, 3]);
    assert_eq!(w.mean.get2(1, 1), 4.0);
    assert_eq!(w.sum.sum(), m.sum());

    assert!(matches!(
        tokens_to_words(&m, &[(0, 2), (1, 3)], &[]),
        Err(AttributionError::Spans(_))
    ));
}

#[test]
fn pooling_only_shifted_dot_is_exact_at_one_step() {
    let m = pooling_only(ShiftMode::ReferenceShift, Head::Dot, true);
    for (a, b) in [("the dog", "a cat runs"), ("dog", "dog"), ("the mat .", "")] {
        let res = attribute_texts(&m, a, b, &request(&m, 0, 1, Reduce::Token)).unwrap();
        assert!(
            res.attribution_error < 1e-12,
            "{a} / {b}: {}",
            res.attribution_error
        );
    }
}

#[test]
fn exact_mode_reference_terms_are_zero() {
    for head in [Head::Dot, Head::Cosine] {
        let m = toy(ShiftMode::ReferenceShift, head);
        let res = attribute_texts(
            &m,
            "the dog runs",
            "a cat sat",
            &request(&m, 1, 20, Reduce::Token),
        )
        .unwrap();
        assert_eq!(res.mode, Mode::Exact);
        assert_eq!(res.ref_sim_a, 0.0);
        assert_eq!(res.ref_sim_b, 0.0);
        assert_eq!(res.ref_term, 0.0);
        assert!(res.approximate_check.is_none());
    }
}

#[test]
fn exact_mode_needs_a_shifted_model() {
    let m = toy(ShiftMode::None, Head::Cosine);
    let req = AttributionRequest {
        mode: Mode::Exact,
        ..AttributionRequest::for_model(&m)
    };
    assert!(matches!(
        attribute_texts(&m, "a", "b", &req),
        Err(AttributionError::ExactNeedsShift)
    ));
}

#[test]
fn shifted_cosine_error_shrinks_with_steps() {
    let m = toy(ShiftMode::ReferenceShift, Head::Cosine);
    let a = m.tokenize("the dog sat on the mat");
    let b = m.tokenize("a cat runs");
    let res = attribute_pair_multi(
        &m,
        &a,
        &b,
        &request(&m, 0, 1, Reduce::Token),
        &[10, 100, 1000],
    )
    .unwrap();
    let errs: Vec<f64> = res.iter().map(|r| r.attribution_error).collect();
    assert!(errs[1] < errs[0] && errs[2] < errs[1], "{errs:?}");
    assert!(errs[2] < 1e-2 * res[2].score.abs().max(1.0));
}

#[test]
fn shared_nodes_match_separate_runs() {
    let m = toy(ShiftMode::None, Head::Cosine);
    let a = m.tokenize("the dog runs");
    let b = m.tokenize("a cat sat");
    let req = request(&m, 1, 1, Reduce::Token);
    let multi = attribute_pair_multi(&m, &a, &b, &req, &[4, 6]).unwrap();
    for (res, n) in multi.iter().zip([4, 6]) {
        let single = attribute_pair(&m, &a, &b, &AttributionRequest { steps: n, ..req }).unwrap();
        assert!(res.matrix.sub(&single.matrix).unwrap().max_abs() < 1e-12);
    }
}

#[test]
fn approximate_identity_holds_for_equal_inputs() {
    let m = toy(ShiftMode::None, Head::Cosine);
    let t = m.tokenize("the cat sat on the mat");
    let res = attribute_pair(&m, &t, &t, &request(&m, 0, 400, Reduce::Token)).unwrap();
    assert!((res.score - 1.0).abs() < 1e-12);
    assert!((res.ref_sim_a - res.ref_sim_b).abs() < 1e-12);
    let expected = 1.0 - 2.0 * res.ref_sim_a + res.ref_term;
    assert!(
        (res.total() - expected).abs() < 1e-2,
        "{} vs {expected}",
        res.total()
    );
    let check = res.approximate_check.unwrap();
    assert!((check - (res.total() - 2.0)).abs() < 1e-12);
}

#[test]
fn swapping_inputs_transposes_the_matrix() {
    for (shift, head) in [
        (ShiftMode::None, Head::Cosine),
        (ShiftMode::ReferenceShift, Head::Cosine),
    ] {
        let m = toy(shift, head);
        let req = request(&m, 1, 10, Reduce::Word);
        let ab = attribute_texts(&m, "the dog runs", "a cat sat .", &req).unwrap();
        let ba = attribute_texts(&m, "a cat sat .", "the dog runs", &req).unwrap();
        assert!(
            ab.matrix
                .sub(&ba.matrix.transpose().unwrap())
                .unwrap()
                .max_abs()
                < 1e-10
        );
    }
}

#[test]
fn empty_input_has_zero_attribution() {
    let m = toy(ShiftMode::ReferenceShift, Head::Cosine);
    let res = attribute_texts(&m, "", "the dog", &request(&m, 1, 5, Reduce::Token)).unwrap();
    assert_eq!(res.matrix.max_abs(), 0.0);
    assert_eq!(res.score, 0.0);
    assert_eq!(res.attribution_error, 0.0);
}

#[test]
fn stored_error_is_recomputable() {
    let m = toy(ShiftMode::None, Head::Cosine);
    for reduce in [Reduce::Feature, Reduce::Token, Reduce::Word] {
        let res =
            attribute_texts(&m, "the dog runs .", "a cat", &request(&m, 1, 8, reduce)).unwrap();
        assert!((res.recompute_error() - res.attribution_error).abs() < 1e-12);
        let record = AttributionRecord::from(&res);
        assert!((record.recompute_error() - res.attribution_error).abs() < 1e-12);
        let back: AttributionRecord = serde_json::from_str(&record.to_json()).unwrap();
        assert_eq!(back, record);
    }
}

#[test]
fn word_sum_matrix_conserves_token_total() {
    let m = toy(ShiftMode::ReferenceShift, Head::Dot);
    let req = request(&m, 1, 8, Reduce::Token);
    let tok = attribute_texts(&m, "the dog runs", "a cat sat", &req).unwrap();
    let word = attribute_texts(
        &m,
        "the dog runs",
        "a cat sat",
        &AttributionRequest {
            reduce: Reduce::Word,
            ..req
        },
    )
    .unwrap();
    assert!((tok.total() - word.total()).abs() < 1e-12);
    assert_eq!(word.tokens_a, vec!["[CLS]", "the", "dog", "runs", "[EOS]"]);
}

#[test]
fn exports_render() {
    let m = toy(ShiftMode::ReferenceShift, Head::Cosine);
    let res = attribute_texts(
        &m,
        "the dog, a cat",
        "a cat",
        &request(&m, 1, 4, Reduce::Token),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_matrix_csv(&res, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with(",[CLS],a,cat,[EOS]"));
    assert!(text.contains("\",\""));
    assert_eq!(text.lines().count(), res.tokens_a.len() + 1);
    let svg = heatmap_svg(&res);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    assert!(svg.contains("f(r_a, r_b) = 0.0000"));
}
