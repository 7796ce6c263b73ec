use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::gradcheck::{check_op, random_array};

fn m(rows: &[&[f64]]) -> DenseArray {
    DenseArray::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
}

#[test]
fn matmul_identity_and_hand_case() {
    let mut tape = Tape::new();
    let mat = m(&[&[1.0, 2.0], &[3.0, 4.0]]);
    let i = tape.constant(DenseArray::identity(2));
    let a = tape.constant(mat.clone());
    let ia = tape.matmul(i, a).unwrap();
    assert_eq!(tape.value(ia), &mat);

    let col = tape.constant(m(&[&[0.0], &[1.0]]));
    let prod = tape.matmul(a, col).unwrap();
    assert_eq!(tape.value(prod), &m(&[&[2.0], &[4.0]]));
}

#[test]
fn matmul_shape_mismatch_is_dimension_error() {
    let mut tape = Tape::new();
    let a = tape.constant(DenseArray::zeros(&[2, 3]));
    let b = tape.constant(DenseArray::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(NumericsError::Shape(_))));
}

#[test]
fn matmul_gradient_of_sum_matches_finite_differences() {
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    let a = random_array(&[3, 3], &mut rng);
    let b = random_array(&[3, 3], &mut rng);
    let mut tape = Tape::new();
    let av = tape.param(a.clone());
    let bv = tape.constant(b.clone());
    let p = tape.matmul(av, bv).unwrap();
    let s = tape.sum(p).unwrap();
    let g = tape.backward(s).unwrap();
    let ga = g.get(av).unwrap();
    let h = 1e-5;
    for idx in 0..9 {
        let f = |delta: f64| {
            let mut x = a.data().to_vec();
            x[idx] += delta;
            DenseArray::matrix(3, 3, x).unwrap().matmul(&b).unwrap().sum()
        };
        let numeric = (f(h) - f(-h)) / (2.0 * h);
        let rel = (ga.data()[idx] - numeric).abs() / numeric.abs().max(1e-12);
        assert!(rel < 1e-6, "entry {idx}: rel err {rel}");
    }
    // Analytic check: d/da sum(a b) = 1 bᵀ, so row i of grad = row sums of b.
    for i in 0..3 {
        for j in 0..3 {
            let expect: f64 = b.row(j).iter().sum();
            assert!((ga.get2(i, j) - expect).abs() < 1e-12);
        }
    }
}

#[test]
fn softmax_uniform_and_stable() {
    let mut tape = Tape::new();
    let x = tape.constant(m(&[&[0.0, 0.0, 0.0], &[1000.0, 0.0, 0.0]]));
    let p = tape.softmax_rows(x).unwrap();
    let p = tape.value(p);
    for &v in p.row(0) {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
    assert!((p.row(1)[0] - 1.0).abs() < 1e-15);
    assert!(p.row(1)[1] < 1e-300);
}

#[test]
fn layer_norm_conventions() {
    let mut tape = Tape::new();
    let x = tape.constant(m(&[&[4.0, 4.0, 4.0], &[1.0, 3.0, 2.0]]));
    let g = tape.constant(DenseArray::filled(&[3], 1.0));
    let b = tape.constant(DenseArray::zeros(&[3]));
    let y = tape.layer_norm(x, g, b).unwrap();
    assert_eq!(tape.value(y).row(0), &[0.0, 0.0, 0.0]);

    let x2 = tape.constant(m(&[&[1.0, 3.0]]));
    let g2 = tape.constant(DenseArray::filled(&[2], 1.0));
    let b2 = tape.constant(DenseArray::zeros(&[2]));
    let y2 = tape.layer_norm(x2, g2, b2).unwrap();
    // mean 2, variance 1: (x - 2) / sqrt(1 + eps)
    let expect = 1.0 / (1.0 + LAYER_NORM_EPS).sqrt();
    let row = tape.value(y2).row(0);
    assert!((row[0] + expect).abs() < 1e-9);
    assert!((row[1] - expect).abs() < 1e-9);
    // Only the denominator guard separates this from exactly [-1, 1].
    assert!((row[1] - 1.0).abs() < 1e-5);
}

#[test]
fn layer_norm_bad_gain_rejected() {
    let mut tape = Tape::new();
    let x = tape.constant(DenseArray::zeros(&[2, 3]));
    let g = tape.constant(DenseArray::zeros(&[2]));
    let b = tape.constant(DenseArray::zeros(&[3]));
    assert!(tape.layer_norm(x, g, b).is_err());
}

#[test]
fn backward_trivial_cases() {
    let w = m(&[&[1.5, -2.0], &[0.25, 3.0]]);
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let s = tape.sum(wv).unwrap();
    let g = tape.backward(s).unwrap();
    assert_eq!(g.get(wv).unwrap().data(), &[1.0; 4]);

    // ||w||² = n · mean_square(w)
    let mut tape = Tape::new();
    let wv = tape.param(w.clone());
    let ms = tape.mean_square(wv).unwrap();
    let norm = tape.scale(ms, 4.0).unwrap();
    let g = tape.backward(norm).unwrap();
    for (gi, wi) in g.get(wv).unwrap().data().iter().zip(w.data()) {
        assert!((gi - 2.0 * wi).abs() < 1e-12);
    }
}

#[test]
fn backward_rejects_non_scalar_and_skips_constants() {
    let mut tape = Tape::new();
    let c = tape.constant(DenseArray::filled(&[2], 1.0));
    let p = tape.param(DenseArray::filled(&[2], 2.0));
    let unused = tape.param(DenseArray::filled(&[3], 2.0));
    let s = tape.add(c, p).unwrap();
    assert!(matches!(tape.backward(s), Err(NumericsError::Contract(_))));
    let total = tape.sum(s).unwrap();
    let g = tape.backward(total).unwrap();
    assert!(g.get(c).is_none());
    assert_eq!(g.get(p).unwrap().data(), &[1.0, 1.0]);
    assert_eq!(g.get(unused).unwrap().data(), &[0.0; 3]);
}

#[test]
fn non_finite_results_are_errors() {
    let mut tape = Tape::new();
    let big = tape.constant(DenseArray::filled(&[1, 1], 1e200));
    let sq = tape.matmul(big, big);
    assert!(matches!(sq, Err(NumericsError::NonFinite { op: "matmul", .. })));
}

#[test]
fn every_differentiable_op_passes_finite_differences() {
    let report = crate::gradcheck::run_suite(3, None).unwrap();
    for check in report.iter().filter(|c| !c.name.starts_with("denoiser")) {
        assert!(check.probes.len() >= 10);
        assert!(check.passed(1e-4), "{}: worst {}", check.name, check.worst());
    }
}

#[test]
fn softmax_and_layer_norm_tight_gradients() {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let x = random_array(&[4, 6], &mut rng);
    let sm = check_op("softmax", &[x.clone()], |t, v| t.softmax_rows(v[0]), 20, 1, None).unwrap();
    assert!(sm.passed(1e-6), "softmax worst {}", sm.worst());
    let gain = random_array(&[6], &mut rng);
    let bias = random_array(&[6], &mut rng);
    let ln = check_op(
        "ln",
        &[x, gain, bias],
        |t, v| t.layer_norm(v[0], v[1], v[2]),
        20,
        2,
        None,
    )
    .unwrap();
    assert!(ln.passed(1e-5), "layer_norm worst {}", ln.worst());
}

#[test]
fn corrupted_pullback_is_detected() {
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    let a = random_array(&[3, 3], &mut rng);
    let b = random_array(&[3, 3], &mut rng);
    let out = check_op(
        "matmul",
        &[a, b],
        |t, v| t.matmul(v[0], v[1]),
        10,
        4,
        Some(OpKind::MatMul),
    )
    .unwrap();
    assert!(!out.passed(1e-4));
}

#[test]
fn backward_is_bit_reproducible() {
    let build = || {
        let mut rng = ChaCha20Rng::seed_from_u64(77);
        let mut tape = Tape::new();
        let x = tape.param(random_array(&[6, 4], &mut rng));
        let w = tape.param(random_array(&[4, 4], &mut rng));
        let h = tape.matmul(x, w).unwrap();
        let a = tape.block_attention(h, h, h, 3, 2).unwrap();
        let l = tape.mean_square(a).unwrap();
        let g = tape.backward(l).unwrap();
        (g.get(x).unwrap().clone(), g.get(w).unwrap().clone())
    };
    assert_eq!(build(), build());
}

mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(rows in 1usize..5, cols in 1usize..7,
                                   vals in prop::collection::vec(-50.0f64..50.0, 35)) {
            let data: Vec<f64> = vals.into_iter().cycle().take(rows * cols).collect();
            let mut tape = Tape::new();
            let x = tape.constant(DenseArray::matrix(rows, cols, data).unwrap());
            let p = tape.softmax_rows(x).unwrap();
            let p = tape.value(p);
            for r in 0..rows {
                let s: f64 = p.row(r).iter().sum();
                prop_assert!((s - 1.0).abs() <= 1e-12);
                prop_assert!(p.row(r).iter().all(|&v| v >= 0.0));
            }
        }

        #[test]
        fn layer_norm_rows_centered(cols in 2usize..9,
                                    vals in prop::collection::vec(-100.0f64..100.0, 24)) {
            let rows = 3;
            let data: Vec<f64> = vals.into_iter().cycle().take(rows * cols).collect();
            let x = DenseArray::matrix(rows, cols, data).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let g = tape.constant(DenseArray::filled(&[cols], 1.0));
            let b = tape.constant(DenseArray::zeros(&[cols]));
            let y = tape.layer_norm(xv, g, b).unwrap();
            for r in 0..rows {
                let row = x.row(r);
                let mean = row.iter().sum::<f64>() / cols as f64;
                let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / cols as f64;
                if var > 1e-6 {
                    let out_mean = tape.value(y).row(r).iter().sum::<f64>() / cols as f64;
                    prop_assert!(out_mean.abs() <= 1e-9);
                }
            }
        }
    }
}
