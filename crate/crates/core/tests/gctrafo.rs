//! GCTrafo attention, causal convolutions and encoder–decoder checked
//! against double-loop evaluation, finite differences and structure.

use pvgnn::autodiff::gradcheck::{check_inputs, check_params};
use pvgnn::autodiff::{ParamStore, Tape, Tensor};
use pvgnn::gctrafo::{attention, attention_weights, Gctrafo, GctrafoConfig, TemporalConv};
use pvgnn::graph::{
    build_knn_graph, laplacian, scale_laplacian, NodeLocation, ScaledLaplacian, POWER_ITER_TOL,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_lap(rng: &mut ChaCha8Rng, n: usize, k: usize) -> ScaledLaplacian {
    let sites: Vec<_> = (0..n)
        .map(|_| {
            NodeLocation::new(rng.gen_range(46.0..47.0), rng.gen_range(7.0..8.0), 500.0).unwrap()
        })
        .collect();
    scale_laplacian(
        &laplacian(&build_knn_graph(&sites, k).unwrap()),
        POWER_ITER_TOL,
    )
    .unwrap()
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn small_config(heads: usize) -> GctrafoConfig {
    GctrafoConfig {
        lat: 3,
        heads,
        order: 2,
        ..GctrafoConfig::full()
    }
}

/// `out_v(τ) = Σ_τ′ softmax_τ′(q_v(τ)·k_v(τ′)) v_v(τ′)`, one node and query at a time.
fn attention_loops(q: &Tensor, k: &Tensor, v: &Tensor) -> Tensor {
    let (tq, n, d) = (q.shape()[0], q.shape()[1], q.shape()[2]);
    let tk = k.shape()[0];
    let mut out = Tensor::zeros(&[tq, n, d]);
    for node in 0..n {
        for t in 0..tq {
            let scores: Vec<f64> = (0..tk)
                .map(|s| {
                    (0..d)
                        .map(|j| q.at(&[t, node, j]) * k.at(&[s, node, j]))
                        .sum()
                })
                .collect();
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = scores.iter().map(|s| (s - max).exp()).sum();
            for j in 0..d {
                let val: f64 = (0..tk)
                    .map(|s| (scores[s] - max).exp() / z * v.at(&[s, node, j]))
                    .sum();
                out.set(&[t, node, j], val);
            }
        }
    }
    out
}

#[test]
fn attention_matches_double_loop() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let (tq, tk, n, d) = (
            rng.gen_range(1..7),
            rng.gen_range(1..7),
            rng.gen_range(1..4),
            rng.gen_range(1..5),
        );
        let q = random_tensor(&mut rng, &[tq, n, d]);
        let k = random_tensor(&mut rng, &[tk, n, d]);
        let v = random_tensor(&mut rng, &[tk, n, d]);
        let mut tape = Tape::new();
        let (qv, kv, vv) = (
            tape.constant(q.clone()),
            tape.constant(k.clone()),
            tape.constant(v.clone()),
        );
        let out = attention(&mut tape, qv, kv, vv, false).unwrap();
        assert!(tape.value(out).max_abs_diff(&attention_loops(&q, &k, &v)) < 1e-12);
        let w = attention_weights(&mut tape, qv, kv, false).unwrap();
        for row in tape.value(w).data().chunks(tk) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_keys_average_the_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let q = random_tensor(&mut rng, &[3, 2, 4]);
    let key = random_tensor(&mut rng, &[1, 2, 4]);
    let k = Tensor::new(&[5, 2, 4], key.data().repeat(5)).unwrap();
    let v = random_tensor(&mut rng, &[5, 2, 4]);
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.constant(q), tape.constant(k), tape.constant(v.clone()));
    let out = attention(&mut tape, qv, kv, vv, false).unwrap();
    for t in 0..3 {
        for n in 0..2 {
            for j in 0..4 {
                let mean = (0..5).map(|s| v.at(&[s, n, j])).sum::<f64>() / 5.0;
                assert!((tape.value(out).at(&[t, n, j]) - mean).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn attention_shape_errors() {
    let mut tape = Tape::new();
    let q = tape.constant(Tensor::zeros(&[2, 3, 4]));
    let k = tape.constant(Tensor::zeros(&[5, 3, 4]));
    let bad = tape.constant(Tensor::zeros(&[5, 3, 2]));
    assert!(attention(&mut tape, q, k, bad, false).is_err());
    assert!(attention(&mut tape, q, bad, bad, false).is_err());
}

#[test]
fn attention_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let inputs = [
        random_tensor(&mut rng, &[4, 4, 3]),
        random_tensor(&mut rng, &[4, 4, 3]),
        random_tensor(&mut rng, &[4, 4, 3]),
        random_tensor(&mut rng, &[4, 4, 3]),
    ];
    for scale in [false, true] {
        let err = check_inputs(&inputs, 1e-6, |tape, v| {
            let a = attention(tape, v[0], v[1], v[2], scale)?;
            let w = tape.mul(a, v[3])?;
            Ok(tape.sum(w))
        })
        .unwrap();
        assert!(err < 1e-6, "scale={scale}: {err}");
    }
}

#[test]
fn temporal_convolution_is_causal() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    let conv = TemporalConv::new(&mut store, "c", 3, 5, 4, true, &mut rng);
    let x = random_tensor(&mut rng, &[8, 2, 3]);
    let run = |x: &Tensor| {
        let mut tape = Tape::new();
        let vars = tape.bind(&store);
        let xv = tape.constant(x.clone());
        let y = conv.forward(&mut tape, &vars, xv).unwrap();
        tape.value(y).clone()
    };
    let base = run(&x);
    for tau in 0..8 {
        let mut bumped = x.clone();
        bumped.set(&[tau, 1, 2], x.at(&[tau, 1, 2]) + 1.0);
        let moved = run(&bumped);
        for t in 0..8 {
            for v in 0..2 {
                for c in 0..5 {
                    let same = base.at(&[t, v, c]) == moved.at(&[t, v, c]);
                    if t < tau || v != 1 {
                        assert!(same, "output ({t},{v}) saw input {tau}");
                    }
                }
            }
        }
    }
}

#[test]
fn zero_value_stream_ignores_key_map() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let lap = random_lap(&mut rng, 4, 2);
    let mut store = ParamStore::new();
    let model = Gctrafo::new(small_config(2), &lap, &mut store, &mut rng).unwrap();
    let y = random_tensor(&mut rng, &[3, 4, 3]);
    let run = |store: &ParamStore| {
        let mut tape = Tape::new();
        let vars = tape.bind(store);
        let xp = tape.constant(Tensor::zeros(&[5, 4, 3]));
        let yv = tape.constant(y.clone());
        let out = model.decode(&mut tape, &vars, xp, yv).unwrap();
        tape.value(out).clone()
    };
    let base = run(&store);
    let mut changed = store.clone();
    for head in &model.decoder_heads {
        let w = random_tensor(&mut rng, store.get(head.key.weight).shape());
        changed.set(head.key.weight, w).unwrap();
    }
    assert_eq!(base, run(&changed));
}

#[test]
fn uniform_attention_encoder_is_time_mean_of_values() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let lap = random_lap(&mut rng, 3, 2);
    let mut store = ParamStore::new();
    let model = Gctrafo::new(small_config(1), &lap, &mut store, &mut rng).unwrap();
    let head = &model.encoder_heads[0];
    let z = Tensor::zeros(store.get(head.w_q.weight).shape());
    store.set(head.w_q.weight, z).unwrap();
    let x = random_tensor(&mut rng, &[5, 3, 3]);
    let mut tape = Tape::new();
    let vars = tape.bind(&store);
    let xv = tape.constant(x);
    let xp = model.encode(&mut tape, &vars, xv).unwrap();
    let xp = tape.value(xp).clone();
    for t in 1..5 {
        for v in 0..3 {
            for j in 0..3 {
                assert!((xp.at(&[t, v, j]) - xp.at(&[0, v, j])).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn encoder_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let lap = random_lap(&mut rng, 3, 2);
    let mut store = ParamStore::new();
    let model = Gctrafo::new(small_config(1), &lap, &mut store, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[4, 3, 3]);
    let w = random_tensor(&mut rng, &[4, 3, 3]);
    let errors = check_params(&store, 1e-6, |tape, store| {
        let vars = tape.bind(store);
        let xv = tape.constant(x.clone());
        let xp = model.encode(tape, &vars, xv)?;
        let wv = tape.constant(w.clone());
        let p = tape.mul(xp, wv)?;
        Ok(tape.sum(p))
    })
    .unwrap();
    for (name, e) in errors.iter().filter(|(n, _)| n.starts_with("encoder")) {
        assert!(*e < 1e-4, "{name}: {e}");
    }
}

#[test]
fn full_model_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (n, m, h) = (4, 4, 2);
    let lap = random_lap(&mut rng, n, 2);
    let mut store = ParamStore::new();
    let model = Gctrafo::new(small_config(2), &lap, &mut store, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[m, n, 3]);
    let y = random_tensor(&mut rng, &[h, n, 3]);
    let target = random_tensor(&mut rng, &[h, n]);
    let errors = check_params(&store, 1e-6, |tape, store| {
        let vars = tape.bind(store);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let out = model.forward(tape, &vars, xv, yv)?;
        let t = tape.constant(target.clone());
        let d = tape.sub(out, t)?;
        let sq = tape.mul(d, d)?;
        Ok(tape.sum(sq))
    })
    .unwrap();
    for (name, e) in errors {
        assert!(e < 1e-4, "{name}: {e}");
    }
}

#[test]
fn horizon_prefix_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let lap = random_lap(&mut rng, 5, 2);
    let mut store = ParamStore::new();
    let model = Gctrafo::new(GctrafoConfig::desk(), &lap, &mut store, &mut rng).unwrap();
    let x = random_tensor(&mut rng, &[6, 5, 3]);
    let y24 = random_tensor(&mut rng, &[24, 5, 3]);
    let y1 = Tensor::new(&[1, 5, 3], y24.data()[..15].to_vec()).unwrap();
    let run = |y: &Tensor| {
        let mut tape = Tape::new();
        let vars = tape.bind(&store);
        let (xv, yv) = (tape.constant(x.clone()), tape.constant(y.clone()));
        let out = model.forward(&mut tape, &vars, xv, yv).unwrap();
        tape.value(out).clone()
    };
    let (a, b) = (run(&y1), run(&y24));
    assert_eq!(a.data(), &b.data()[..5]);
}
