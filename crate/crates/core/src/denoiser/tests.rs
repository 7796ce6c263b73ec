use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use super::*;
use crate::gradcheck::{random_array, toy_config};
use crate::numerics::{DenseArray, ParamStore, Tape};

fn toy(variant: Variant, seed: u64) -> DenoiserModel {
    DenoiserModel::init(toy_config(variant), seed, InitOptions::random()).unwrap()
}

fn inputs(cfg: &DenoiserConfig, seed: u64) -> (DenseArray, DenseArray) {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (
        random_array(&[cfg.obs_frames, cfg.pose_dim], &mut rng),
        random_array(&[cfg.pred_frames, cfg.pose_dim], &mut rng),
    )
}

/// Single-layer parameters under `prefix` with width `c`.
fn layer_params(prefix: &str, c: usize, seed: u64) -> ParamStore {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut p = ParamStore::new();
    for (name, shape) in [
        ("ln1.g", vec![c]),
        ("ln1.b", vec![c]),
        ("attn.wq", vec![c, c]),
        ("attn.bq", vec![c]),
        ("attn.wk", vec![c, c]),
        ("attn.bk", vec![c]),
        ("attn.wv", vec![c, c]),
        ("attn.bv", vec![c]),
        ("attn.wo", vec![c, c]),
        ("attn.bo", vec![c]),
        ("ln2.g", vec![c]),
        ("ln2.b", vec![c]),
        ("ff.w1", vec![c, 4 * c]),
        ("ff.b1", vec![4 * c]),
        ("ff.w2", vec![4 * c, c]),
        ("ff.b2", vec![c]),
    ] {
        let a = random_array(&shape, &mut rng).scale(0.4).unwrap();
        p.insert(format!("{prefix}.{name}"), a);
    }
    p
}

fn permute_rows(x: &DenseArray, perm: &[usize]) -> DenseArray {
    let rows: Vec<Vec<f64>> = perm.iter().map(|&r| x.row(r).to_vec()).collect();
    DenseArray::from_rows(&rows).unwrap()
}

#[test]
fn parameter_counts_are_pinned() {
    // C = 32, K = 5: 2C + (K+1)C + 2(12C² + 13C) + (C + 1)
    assert_eq!(toy_config(Variant::Series).param_count(), 25_697);
    assert_eq!(toy_config(Variant::Parallel).param_count(), 25_733);
    assert_eq!(toy(Variant::Series, 1).param_count(), 25_697);
    assert_eq!(toy(Variant::Parallel, 1).param_count(), 25_733);
    assert_eq!(DenoiserConfig::desk(Variant::Series).param_count(), 26_177);
}

#[test]
fn config_validation() {
    let mut c = toy_config(Variant::Series);
    c.n_heads = 3;
    assert!(DenoiserModel::init(c.clone(), 0, InitOptions::default()).is_err());
    c.n_heads = 2;
    c.model_dim = 31;
    assert!(c.validate().is_err());
    assert_eq!("parallel".parse::<Variant>().unwrap(), Variant::Parallel);
    assert!("serial".parse::<Variant>().is_err());
}

#[test]
fn layout_is_closed() {
    let m = toy(Variant::Series, 2);
    let mut params = m.params().clone();
    params.insert("extra", DenseArray::zeros(&[1]));
    assert!(DenoiserModel::from_params(m.config().clone(), params).is_err());
    let parallel = toy_config(Variant::Parallel);
    assert!(DenoiserModel::from_params(parallel, m.params().clone()).is_err());
}

#[test]
fn output_shape_and_purity() {
    for variant in [Variant::Series, Variant::Parallel] {
        let m = toy(variant, 3);
        let (obs, fut) = inputs(m.config(), 4);
        let a = m.forward(&obs, &fut, 3).unwrap();
        assert_eq!(a.shape(), &[5, 6]);
        assert_eq!(a, m.forward(&obs, &fut, 3).unwrap());
    }
}

#[test]
fn zero_output_init_predicts_zero() {
    for variant in [Variant::Series, Variant::Parallel] {
        let m = DenoiserModel::init(toy_config(variant), 5, InitOptions::default()).unwrap();
        let (obs, fut) = inputs(m.config(), 6);
        assert!(m.forward(&obs, &fut, 2).unwrap().data().iter().all(|&v| v == 0.0));
    }
}

#[test]
fn conditioning_and_step_are_live() {
    for variant in [Variant::Series, Variant::Parallel] {
        let m = toy(variant, 7);
        let (obs, fut) = inputs(m.config(), 8);
        let base = m.forward(&obs, &fut, 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let nudged = obs.add(&random_array(obs.shape(), &mut rng).scale(0.1).unwrap()).unwrap();
        assert!(m.forward(&nudged, &fut, 2).unwrap().max_abs_diff(&base) > 0.0);
        assert!(m.forward(&obs, &fut, 4).unwrap().max_abs_diff(&base) > 0.0);
    }
}

#[test]
fn rejects_wrong_input_extents() {
    let m = toy(Variant::Series, 1);
    let (obs, fut) = inputs(m.config(), 1);
    assert!(m.forward(&obs.slice_rows(0, 3).unwrap(), &fut, 1).is_err());
    assert!(m.forward(&obs, &fut, 6).is_err());
}

#[test]
fn spatial_layer_shape_and_equivariance() {
    let c = 8;
    let params = layer_params("s", c, 10);
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    // two frames of three tokens each, encodings already folded in
    let x = random_array(&[6, c], &mut rng);
    let run = |x: &DenseArray| {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = spatial_attention_layer(&mut tape, &p, "s", xv, 3, 2).unwrap();
        tape.value(y).clone()
    };
    let y = run(&x);
    assert_eq!(y.shape(), x.shape());
    let perm = [2, 0, 1, 4, 5, 3];
    let permuted = run(&permute_rows(&x, &perm));
    assert!(permuted.max_abs_diff(&permute_rows(&y, &perm)) < 1e-12);
}

#[test]
fn single_token_spatial_layer_reduces_to_value_path() {
    let c = 6;
    let params = layer_params("s", c, 12);
    let mut rng = ChaCha20Rng::seed_from_u64(13);
    let x = random_array(&[4, c], &mut rng);
    let mut tape = Tape::new();
    let p = params.bind(&mut tape);
    let xv = tape.constant(x.clone());
    let y = spatial_attention_layer(&mut tape, &p, "s", xv, 1, 2).unwrap();
    let y = tape.value(y).clone();

    // With one token the attention weight is 1: attn(h) = h·Wv + bv.
    let g = |n: &str| params.get(&format!("s.{n}")).unwrap();
    let add_row = |a: &DenseArray, b: &DenseArray| {
        let cols = a.cols();
        DenseArray::new(
            a.shape().to_vec(),
            a.data().iter().enumerate().map(|(i, v)| v + b.data()[i % cols]).collect(),
        )
        .unwrap()
    };
    let ln = |a: &DenseArray, gain: &DenseArray, bias: &DenseArray| {
        let mut tape = Tape::new();
        let (a, gain, bias) = (tape.constant(a.clone()), tape.constant(gain.clone()), tape.constant(bias.clone()));
        let o = tape.layer_norm(a, gain, bias).unwrap();
        tape.value(o).clone()
    };
    let h = ln(&x, g("ln1.g"), g("ln1.b"));
    let v = add_row(&h.matmul(g("attn.wv")).unwrap(), g("attn.bv"));
    let o = add_row(&v.matmul(g("attn.wo")).unwrap(), g("attn.bo"));
    let x1 = x.add(&o).unwrap();
    let h2 = ln(&x1, g("ln2.g"), g("ln2.b"));
    let f = add_row(&h2.matmul(g("ff.w1")).unwrap(), g("ff.b1")).map(|v| v.max(0.0)).unwrap();
    let f = add_row(&f.matmul(g("ff.w2")).unwrap(), g("ff.b2"));
    let expect = x1.add(&f).unwrap();
    assert!(y.max_abs_diff(&expect) < 1e-12);
}

#[test]
fn temporal_layer_equivariance_and_full_support() {
    let c = 8;
    let (seq, dims) = (5, 2);
    let params = layer_params("t", c, 14);
    let mut rng = ChaCha20Rng::seed_from_u64(15);
    let x = random_array(&[seq * dims, c], &mut rng);
    let run = |x: &DenseArray| {
        let mut tape = Tape::new();
        let p = params.bind(&mut tape);
        let xv = tape.constant(x.clone());
        let y = temporal_attention_layer(&mut tape, &p, "t", xv, seq, dims, 2).unwrap();
        tape.value(y).clone()
    };
    let y = run(&x);
    assert_eq!(y.shape(), x.shape());

    // Permute frames (each frame is a run of `dims` rows).
    let frame_perm = [3, 0, 4, 1, 2];
    let perm: Vec<usize> = frame_perm
        .iter()
        .flat_map(|&t| (0..dims).map(move |d| t * dims + d))
        .collect();
    let permuted = run(&permute_rows(&x, &perm));
    assert!(permuted.max_abs_diff(&permute_rows(&y, &perm)) < 1e-12);

    let weights = temporal_attention_weights(&params, "t", &x, seq, dims, 2).unwrap();
    assert_eq!(weights.len(), dims * 2);
    for w in &weights {
        assert_eq!(w.shape(), &[seq, seq]);
        for r in 0..seq {
            assert!(w.row(r).iter().all(|&p| p > 0.0));
            assert!((w.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn model_temporal_weights_span_observation_and_future() {
    let m = toy(Variant::Series, 16);
    let cfg = m.config().clone();
    let (obs, fut) = inputs(&cfg, 17);
    let mut tape = Tape::new();
    let p = m.params().bind(&mut tape);
    let h0 = m.encode_on_tape(&mut tape, &p, &obs, &fut, 2).unwrap();
    let weights =
        temporal_attention_weights(m.params(), "temporal", tape.value(h0), cfg.seq_len(), cfg.pose_dim, cfg.n_heads)
            .unwrap();
    for w in weights {
        assert_eq!(w.cols(), cfg.obs_frames + cfg.pred_frames);
        assert!(w.data().iter().all(|&p| p > 0.0));
    }
}

#[test]
fn fusion_degenerate_weights() {
    let mut m = toy(Variant::Parallel, 18);
    let (obs, fut) = inputs(m.config(), 19);
    let (spatial, temporal) = m.branch_grids(&obs, &fut, 3).unwrap();
    let last = |g: &DenseArray| g.slice_rows(4, 9).unwrap();

    m.set_param("fusion.w", DenseArray::new(vec![2], vec![1.0, 0.0]).unwrap()).unwrap();
    m.set_param("fusion.b", DenseArray::zeros(&[1])).unwrap();
    assert_eq!(m.forward(&obs, &fut, 3).unwrap(), last(&spatial));

    m.set_param("fusion.w", DenseArray::new(vec![2], vec![0.5, 0.5]).unwrap()).unwrap();
    let mean = spatial.zip_map(&temporal, |a, b| 0.5 * (a + b)).unwrap();
    assert!(m.forward(&obs, &fut, 3).unwrap().max_abs_diff(&last(&mean)) < 1e-12);
    assert!(toy(Variant::Series, 1).branch_grids(&obs, &fut, 3).is_err());
}

