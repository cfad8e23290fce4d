use genbench::nn::checkpoint::Checkpoint;
use genbench::nn::{
    clip_weights, init, Activation, Mode, NetworkBuilder, Optimizer, OptimizerConfig, ParamStore,
};
use genbench::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.push("p", Tensor::from_f64(vec![1], &[v]).unwrap(), true);
    s
}

#[test]
fn glorot_variance_matches_closed_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let (fan_in, fan_out) = (120, 80);
    let w: Tensor<f64> = init::glorot_uniform(vec![10_000], fan_in, fan_out, &mut rng);
    let mean = w.sum() / 1e4;
    let var = w.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 1e4;
    let expected = 2.0 / (fan_in + fan_out) as f64;
    assert!((var - expected).abs() / expected < 0.10, "{var} vs {expected}");
}

#[test]
fn init_is_seeded_and_biases_are_zero() {
    let build = |seed| {
        NetworkBuilder::new("mlp", &[6])
            .dense(4)
            .activation(Activation::Relu)
            .dense(2)
            .build::<f32, _>(&mut ChaCha8Rng::seed_from_u64(seed))
            .unwrap()
    };
    let (a, b, c) = (build(5), build(5), build(6));
    for ((pa, pb), pc) in a.params().iter().zip(b.params().iter()).zip(c.params().iter()) {
        assert_eq!(pa.value, pb.value);
        if pa.name.ends_with("bias") {
            assert!(pa.value.data().iter().all(|&v| v == 0.0));
        } else {
            assert_ne!(pa.value, pc.value);
        }
    }
}

#[test]
fn sgd_example_and_zero_gradient() {
    let mut s = scalar_store(1.0);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
    opt.step(&mut s, &[Some(Tensor::from_f64(vec![1], &[1.0]).unwrap())]).unwrap();
    assert!((s.get(0).value.data()[0] - 0.9).abs() < 1e-15);

    for config in [OptimizerConfig::sgd(0.1), OptimizerConfig::adam(0.1), OptimizerConfig::rms_prop(0.1)] {
        let mut s = scalar_store(0.7);
        let mut opt = Optimizer::new(config).unwrap();
        for _ in 0..3 {
            opt.step(&mut s, &[Some(Tensor::zeros(vec![1]))]).unwrap();
        }
        assert_eq!(s.get(0).value.data()[0], 0.7, "{:?}", config.kind);
        assert_eq!(opt.steps(), 3);
    }
}

#[test]
fn adam_first_step_has_magnitude_lr() {
    for g in [1e-3, 0.5, -40.0] {
        let mut s = scalar_store(2.0);
        let mut opt = Optimizer::new(OptimizerConfig::adam(0.001)).unwrap();
        opt.step(&mut s, &[Some(Tensor::from_f64(vec![1], &[g]).unwrap())]).unwrap();
        let moved = s.get(0).value.data()[0] - 2.0;
        let expected = -0.001 * g / (g.abs() + 1e-8);
        assert!((moved - expected).abs() < 1e-12, "{g}: {moved}");
    }
}

#[test]
fn dense_regression_smoke() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut net = NetworkBuilder::new("lin", &[1]).dense(1).build::<f64, _>(&mut rng).unwrap();
    let x = Tensor::<f64>::from_fn(vec![16, 1], |i| i as f64 / 8.0 - 1.0);
    let y = x.map(|v| 2.0 * v);
    let mut opt = Optimizer::new(OptimizerConfig::sgd(0.1)).unwrap();
    let mut losses = Vec::new();
    for _ in 0..500 {
        let mut tape = Tape::new();
        let bound = net.bind(&mut tape, true);
        let vx = tape.constant(x.clone());
        let vy = tape.constant(y.clone());
        let out = net.forward(&mut tape, &bound, vx, Mode::Train).unwrap();
        let loss = tape.mse_loss(vy, out).unwrap();
        losses.push(tape.scalar(loss).unwrap());
        let mut grads = tape.backward(loss).unwrap();
        let g = net.gradients(&bound, &mut grads);
        opt.step(net.params_mut(), &g).unwrap();
    }
    assert!(losses[0] / losses[499] >= 100.0, "{} -> {}", losses[0], losses[499]);
}

#[test]
fn batch_norm_running_stats_move_only_in_training() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut net = NetworkBuilder::new("bn", &[2, 2, 2]).batch_norm().build::<f32, _>(&mut rng).unwrap();
    let x = Tensor::<f32>::from_fn(vec![3, 2, 2, 2], |i| i as f32);
    let before = net.params().clone();
    net.predict(&x, 8).unwrap();
    for (a, b) in before.iter().zip(net.params().iter()) {
        assert_eq!(a.value, b.value);
    }
    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let vx = tape.constant(x);
    net.forward(&mut tape, &bound, vx, Mode::Train).unwrap();
    let idx = net.params().index_of("0.running_mean").unwrap();
    assert_ne!(before.get(idx).value, net.params().get(idx).value);
}

#[test]
fn network_checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let net = NetworkBuilder::new("c", &[1, 4, 4])
        .conv2d(2, 3, 1, 1)
        .batch_norm()
        .flatten()
        .dense(3)
        .build::<f32, _>(&mut rng)
        .unwrap();
    let mut ck = Checkpoint::new("test", serde_json::json!({}));
    ck.add_store("net.", net.params());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sub/model.ckpt");
    ck.save(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    let mut fresh = NetworkBuilder::new("c", &[1, 4, 4])
        .conv2d(2, 3, 1, 1)
        .batch_norm()
        .flatten()
        .dense(3)
        .build::<f32, _>(&mut ChaCha8Rng::seed_from_u64(99))
        .unwrap();
    fresh.load_values(&back.tensors, "net.").unwrap();
    for (a, b) in net.params().iter().zip(fresh.params().iter()) {
        let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.value), bits(&b.value));
    }
}

proptest! {
    #[test]
    fn clip_bounds_every_entry(vals in prop::collection::vec(-5.0f64..5.0, 1..64), c in 1e-3f64..2.0) {
        let mut s = ParamStore::<f64>::new();
        let n = vals.len();
        s.push("w", Tensor::from_f64(vec![n], &vals).unwrap(), true);
        clip_weights(&mut s, c).unwrap();
        let w = s.get(0).value.data();
        prop_assert!(w.iter().all(|v| v.abs() <= c));
        for (orig, now) in vals.iter().zip(w) {
            if orig.abs() <= c {
                prop_assert_eq!(orig, now);
            }
        }
    }
}

#[test]
fn pool_before_activation_is_exact() {
    // the network evaluates act→pool as pool→act; values and gradients must not move
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut net = NetworkBuilder::new("p", &[1, 6, 6])
        .conv2d(3, 3, 1, 1)
        .activation(Activation::leaky())
        .max_pool(2, 2)
        .flatten()
        .dense(2)
        .build::<f32, _>(&mut rng)
        .unwrap();
    let x = Tensor::<f32>::from_fn(vec![2, 1, 6, 6], |i| ((i * 29 % 17) as f32 - 8.0) / 8.0);

    let mut tape = Tape::new();
    let bound = net.bind(&mut tape, true);
    let vx = tape.constant(x.clone());
    let out = net.forward(&mut tape, &bound, vx, Mode::Train).unwrap();
    let s = tape.sum(out);
    let mut grads = tape.backward(s).unwrap();
    let fused_out = tape.value(out).clone();
    let fused = net.gradients(&bound, &mut grads);

    let p = |i: usize| net.params().get(i).value.clone();
    let mut tape = Tape::new();
    let vars: Vec<_> = (0..4).map(|i| tape.leaf(p(i))).collect();
    let vx = tape.constant(x);
    let h = tape.conv2d_bias(vx, vars[0], vars[1], 1, 1).unwrap();
    let h = tape.leaky_relu(h, genbench::nn::LEAKY_SLOPE as f32).unwrap();
    let h = tape.max_pool2d(h, 2, 2).unwrap();
    let h = tape.flatten(h).unwrap();
    let out = tape.linear(h, vars[2], Some(vars[3])).unwrap();
    let s = tape.sum(out);
    let grads = tape.backward(s).unwrap();
    assert_eq!(tape.value(out).data(), fused_out.data());
    for (i, v) in vars.iter().enumerate() {
        assert_eq!(grads.get(*v).unwrap().data(), fused[i].as_ref().unwrap().data());
    }
}
