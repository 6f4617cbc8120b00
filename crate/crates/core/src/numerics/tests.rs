use proptest::prelude::*;

use super::*;

fn mat(rows: &[&[f64]]) -> Tensor {
    Tensor::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

/// Largest entrywise relative gap, with a 1e-6 floor on the magnitude so
/// exact zeros on both sides do not blow up the ratio.
fn max_rel_err(a: &Tensor, b: &Tensor) -> f64 {
    assert_eq!(a.shape(), b.shape());
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

fn max_abs_diff(a: &Tensor, b: &Tensor) -> f64 {
    a.sub(b).unwrap().max_abs()
}

#[test]
fn matmul_by_identity() {
    let m = mat(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let e = evaluate(&[Tensor::identity(2), m.clone()], false, |t, v| {
        t.matmul(v[0], v[1])
    })
    .unwrap();
    assert_eq!(e.value(), &m);
}

#[test]
fn l2_normalize_three_four_five() {
    let e = evaluate(&[Tensor::vector(vec![3.0, 4.0])], false, |t, v| {
        t.l2_normalize(v[0])
    })
    .unwrap();
    let out = e.value();
    assert!((out.data()[0] - 0.6).abs() < 1e-15);
    assert!((out.data()[1] - 0.8).abs() < 1e-15);
}

#[test]
fn mean_pool_over_tokens() {
    let e = evaluate(&[mat(&[&[1.0, 2.0], &[3.0, 4.0]])], false, |t, v| {
        t.mean_rows(v[0])
    })
    .unwrap();
    let out = e.value();
    assert_eq!(out.data(), &[2.0, 3.0]);
}

#[test]
fn shape_mismatch_names_primitive() {
    let err = evaluate(
        &[Tensor::zeros(&[2, 3]), Tensor::zeros(&[2, 3])],
        false,
        |t, v| t.matmul(v[0], v[1]),
    )
    .err()
    .unwrap();
    assert_eq!(
        err,
        NumericsError::ShapeMismatch {
            op: "matmul",
            lhs: vec![2, 3],
            rhs: vec![2, 3]
        }
    );
    assert!(err.to_string().contains("matmul"));
}

#[test]
fn backward_of_squared_norm() {
    let mut e = evaluate(&[Tensor::vector(vec![1.0, 2.0])], true, |t, v| {
        t.dot(v[0], v[0])
    })
    .unwrap();
    let g = e.backward(0).unwrap();
    assert_eq!(g[0].data(), &[2.0, 4.0]);
}

#[test]
fn backward_of_linear_row() {
    let w = mat(&[&[1.0, 0.0], &[0.0, 2.0]]);
    let mut tape = Tape::new();
    let wv = tape.param(&w, false);
    let x = tape.leaf(Tensor::new(vec![2, 1], vec![0.3, -0.7]).unwrap());
    let y = tape.matmul(wv, x).unwrap();
    let g = tape.backward(y, 1).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[0.0, 2.0]);
}

#[test]
fn backward_of_tanh_matches_central_difference() {
    let eps = 1e-6;
    let oracle = ((0.5f64 + eps).tanh() - (0.5f64 - eps).tanh()) / (2.0 * eps);
    let mut e = evaluate(&[Tensor::vector(vec![0.5])], true, |t, v| Ok(t.tanh(v[0]))).unwrap();
    let grad = e.backward(0).unwrap()[0].data()[0];
    assert!((grad - oracle).abs() < 1e-9, "{grad} vs {oracle}");
    assert!((grad - 0.78644).abs() < 1e-5);
}

#[test]
fn single_use_tape_refuses_second_sweep() {
    let mut tape = Tape::single_use();
    let x = tape.leaf(Tensor::vector(vec![1.0]));
    let y = tape.tanh(x);
    tape.backward(y, 0).unwrap();
    assert_eq!(
        tape.backward(y, 0).unwrap_err(),
        NumericsError::TapeConsumed
    );

    let mut reusable = Tape::new();
    let x = reusable.leaf(Tensor::vector(vec![1.0]));
    let y = reusable.tanh(x);
    reusable.backward(y, 0).unwrap();
    assert!(reusable.backward(y, 0).is_ok());
}

#[test]
fn backward_rejects_bad_component() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    let y = tape.tanh(x);
    assert!(matches!(
        tape.backward(y, 2),
        Err(NumericsError::Range { .. })
    ));
}

#[test]
fn jacobian_of_identity() {
    let x = Tensor::vector(vec![0.1, -0.2, 0.3]);
    let j = jacobian(|_, v| Ok(v), &x).unwrap();
    assert_eq!(j, Tensor::identity(3));
}

#[test]
fn jacobian_of_linear_map_is_exact() {
    let w = mat(&[&[1.5, -2.0, 0.25], &[0.0, 3.0, -1.0]]);
    let x = Tensor::new(vec![3, 1], vec![0.4, 0.1, -0.9]).unwrap();
    let j = jacobian(
        |t, v| {
            let wv = t.param(&w, false);
            t.matmul(wv, v)
        },
        &x,
    )
    .unwrap();
    assert_eq!(j.data(), w.data());
}

#[test]
fn jacobian_of_l2_normalize_matches_finite_differences() {
    let x = Tensor::vector(vec![3.0, 4.0]);
    let j = jacobian(|t, v| t.l2_normalize(v), &x).unwrap();
    let fd =
        finite_diff_jacobian::<_, NumericsError>(|x| Ok(x.scale(1.0 / norm(x.data()))), &x, 1e-5)
            .unwrap();
    assert!(max_abs_diff(&j, &fd) < 1e-6);
}

#[test]
fn jacobian_reports_non_finite_location() {
    let x = Tensor::vector(vec![0.0, 1.0]);
    let err = jacobian(
        |t, v| {
            let c = t.constant(Tensor::vector(vec![f64::NAN, 1.0]));
            t.mul(v, c)
        },
        &x,
    )
    .unwrap_err();
    assert_eq!(err, NumericsError::NonFinite { row: 0, col: 0 });
}

#[test]
fn finite_differences_of_identity() {
    let x = Tensor::vector(vec![0.3, 1.7, -2.0, 5.5]);
    let fd = finite_diff_jacobian::<_, NumericsError>(|x| Ok(x.clone()), &x, 1e-5).unwrap();
    assert!(max_abs_diff(&fd, &Tensor::identity(4)) < 1e-10);
}

#[test]
fn finite_differences_of_square() {
    let x = Tensor::vector(vec![3.0]);
    let fd = finite_diff_jacobian::<_, NumericsError>(|x| Ok(x.map(|v| v * v)), &x, 1e-5).unwrap();
    assert!((fd.data()[0] - 6.0).abs() < 1e-9);
}

#[test]
fn finite_differences_of_softmax_at_uniform_point() {
    // Analytic softmax Jacobian at p = (1/2, 1/2): diag(p) − p pᵀ.
    let expected = mat(&[&[0.25, -0.25], &[-0.25, 0.25]]);
    let x = Tensor::new(vec![1, 2], vec![0.0, 0.0]).unwrap();
    let fd = finite_diff_jacobian::<_, NumericsError>(
        |x| {
            let mut y = x.clone();
            softmax_in_place(y.data_mut());
            Ok(y)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(max_abs_diff(&fd, &expected) < 1e-8);
    let j = jacobian(|t, v| t.softmax_rows(v), &x).unwrap();
    assert!(max_abs_diff(&j, &expected) < 1e-15);
}

#[test]
fn finite_differences_reject_nonpositive_step() {
    let x = Tensor::vector(vec![1.0]);
    let err = finite_diff_jacobian::<_, NumericsError>(|x| Ok(x.clone()), &x, 0.0).unwrap_err();
    assert_eq!(err, NumericsError::BadStep(0.0));
}

#[test]
fn tape_is_ordered_and_replays() {
    let w = mat(&[&[0.3, -0.1], &[0.8, 0.5]]);
    let g = Tensor::vector(vec![1.1, 0.9]);
    let b = Tensor::vector(vec![0.05, -0.02]);
    let mut tape = Tape::new();
    let x = tape.leaf(mat(&[&[0.2, 0.4], &[-0.6, 1.0], &[0.0, 0.3]]));
    let wv = tape.param(&w, true);
    let gv = tape.param(&g, true);
    let bv = tape.param(&b, true);
    let h = tape.matmul(x, wv).unwrap();
    let h = tape.layer_norm(h, gv, bv).unwrap();
    let h = tape.gelu(h);
    let s = tape.softmax_rows(h).unwrap();
    let p = tape.mean_rows(s).unwrap();
    let n = tape.l2_normalize(p).unwrap();
    let _ = tape.dot(n, p).unwrap();
    assert!(tape.is_topologically_ordered());
    assert!(tape.replay_max_deviation().unwrap() < 1e-12);
}

// ---------------------------------------------------------------------------
// Property tests: every primitive against the central-difference oracle.

#[derive(Debug, Clone, Copy)]
enum Prim {
    MatMul,
    Add,
    Mul,
    Tanh,
    Gelu,
    Softmax,
    LayerNorm,
    MeanPool,
    L2Normalize,
    Dot,
}

const PRIMS: [Prim; 10] = [
    Prim::MatMul,
    Prim::Add,
    Prim::Mul,
    Prim::Tanh,
    Prim::Gelu,
    Prim::Softmax,
    Prim::LayerNorm,
    Prim::MeanPool,
    Prim::L2Normalize,
    Prim::Dot,
];

/// Applies one primitive with its second operand fixed, so each case is a
/// map `R^6 → R^m` over a 2×3 input.
fn apply(prim: Prim, t: &mut Tape<'_>, x: Var, aux: &Tensor) -> Result<Var, NumericsError> {
    match prim {
        Prim::MatMul => {
            let w = t.constant(aux.clone().reshape(vec![3, 2])?);
            t.matmul(x, w)
        }
        Prim::Add => {
            let c = t.constant(aux.clone());
            t.add(x, c)
        }
        Prim::Mul => {
            // x ⊙ x exercises the shared-parent path; then ⊙ aux.
            let sq = t.mul(x, x)?;
            let c = t.constant(aux.clone());
            t.mul(sq, c)
        }
        Prim::Tanh => Ok(t.tanh(x)),
        Prim::Gelu => Ok(t.gelu(x)),
        Prim::Softmax => t.softmax_rows(x),
        Prim::LayerNorm => {
            let g = t.constant(Tensor::vector(aux.data()[..3].to_vec()));
            let b = t.constant(Tensor::vector(aux.data()[3..].to_vec()));
            t.layer_norm(x, g, b)
        }
        Prim::MeanPool => t.mean_rows(x),
        Prim::L2Normalize => {
            let flat = t.reshape(x, &[6])?;
            t.l2_normalize(flat)
        }
        Prim::Dot => {
            let flat = t.reshape(x, &[6])?;
            let c = t.constant(Tensor::vector(aux.data().to_vec()));
            t.dot(flat, c)
        }
    }
}

fn eval_prim(prim: Prim, x: &Tensor, aux: &Tensor) -> Result<Tensor, NumericsError> {
    let mut t = Tape::new();
    let v = t.constant(x.clone());
    let y = apply(prim, &mut t, v, aux)?;
    Ok(t.value(y).clone())
}

fn small_matrix() -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-2.0f64..2.0, 6).prop_map(|d| Tensor::new(vec![2, 3], d).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn every_primitive_matches_finite_differences(x in small_matrix(), aux in small_matrix()) {
        for prim in PRIMS {
            let j = jacobian(|t, v| apply(prim, t, v, &aux), &x).unwrap();
            let fd = finite_diff_jacobian(|x| eval_prim(prim, x, &aux), &x, 1e-5).unwrap();
            let err = max_rel_err(&j, &fd);
            prop_assert!(err <= 1e-4, "{:?}: rel err {}", prim, err);
        }
    }

    #[test]
    fn affine_jacobian_is_bitwise_exact(
        a in prop::collection::vec(-3.0f64..3.0, 12),
        b in prop::collection::vec(-3.0f64..3.0, 4),
        x in prop::collection::vec(-3.0f64..3.0, 3),
    ) {
        let a = Tensor::new(vec![4, 3], a).unwrap();
        let b = Tensor::new(vec![4, 1], b).unwrap();
        let x = Tensor::new(vec![3, 1], x).unwrap();
        let j = jacobian(|t, v| {
            let av = t.param(&a, false);
            let bv = t.param(&b, false);
            let y = t.matmul(av, v)?;
            t.add(y, bv)
        }, &x).unwrap();
        prop_assert_eq!(j.data(), a.data());
    }

    #[test]
    fn chain_rule_composes(x in small_matrix(), w in small_matrix()) {
        let w = w.reshape(vec![3, 2]).unwrap();
        let f = |t: &mut Tape<'_>, v: Var| -> Result<Var, NumericsError> {
            let wv = t.constant(w.clone());
            let h = t.matmul(v, wv)?;
            Ok(t.tanh(h))
        };
        let g = |t: &mut Tape<'_>, v: Var| -> Result<Var, NumericsError> {
            let s = t.softmax_rows(v)?;
            t.mean_rows(s)
        };
        let jf = jacobian(f, &x).unwrap();
        let fx = {
            let mut t = Tape::new();
            let v = t.constant(x.clone());
            let y = f(&mut t, v).unwrap();
            t.value(y).clone()
        };
        let jg = jacobian(g, &fx).unwrap();
        let jgf = jacobian(|t, v| { let h = f(t, v)?; g(t, h) }, &x).unwrap();
        let product = jg.matmul(&jf).unwrap();
        prop_assert!(max_abs_diff(&jgf, &product) < 1e-10);
    }
}
