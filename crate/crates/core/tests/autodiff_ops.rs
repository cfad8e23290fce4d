use genbench::gradcheck::{self, rel_error};
use genbench::{Error, Tape, Tensor};
use proptest::prelude::*;

fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::from_f64(shape.to_vec(), v).unwrap()
}

#[test]
fn every_op_matches_finite_differences() {
    for seed in [1, 2] {
        for case in gradcheck::op_cases(seed) {
            let r = case.run(10, seed).unwrap();
            assert!(
                r.max_rel_error < 1e-4,
                "{}: rel error {:e} at {:?}",
                case.name,
                r.max_rel_error,
                r.worst
            );
        }
    }
}

#[test]
fn matmul_examples() {
    let mut tape = Tape::<f64>::new();
    let i2 = tape.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let v = tape.constant(t(&[2, 1], &[3.0, 4.0]));
    let y = tape.matmul(i2, v).unwrap();
    assert_eq!(tape.value(y).data(), &[3.0, 4.0]);

    let a = tape.constant(t(&[2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let b = tape.constant(t(&[2, 1], &[5.0, 6.0]));
    let y = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(y).data(), &[17.0, 39.0]);

    let err = tape.matmul(a, i2).and_then(|_| tape.matmul(b, a)).unwrap_err();
    let Error::Shape(msg) = err else { panic!("expected shape error") };
    assert!(msg.contains("[2, 1]") && msg.contains("[2, 2]"), "{msg}");
}

#[test]
fn matmul_matches_direct_summation() {
    let (m, k, n) = (5, 7, 3);
    let a = Tensor::<f64>::from_fn(vec![m, k], |i| ((i * 7 + 3) % 11) as f64 - 5.0);
    let b = Tensor::<f64>::from_fn(vec![k, n], |i| ((i * 5 + 1) % 9) as f64 * 0.5);
    let mut tape = Tape::new();
    let (va, vb) = (tape.constant(a.clone()), tape.constant(b.clone()));
    let y = tape.matmul(va, vb).unwrap();
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for p in 0..k {
                s += a.data()[i * k + p] * b.data()[p * n + j];
            }
            assert_eq!(tape.value(y).data()[i * n + j], s);
        }
    }
}

#[test]
fn conv2d_examples() {
    let mut tape = Tape::<f64>::new();
    let x = tape.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let k = tape.constant(t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = tape.conv2d(x, k, 1, 0).unwrap();
    assert_eq!(tape.shape(y), &[1, 1, 1, 1]);
    assert_eq!(tape.value(y).data(), &[5.0]);

    let one = tape.constant(t(&[1, 1, 1, 1], &[1.0]));
    let y = tape.conv2d(x, one, 1, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[1.0, 2.0, 3.0, 4.0]);

    let big = tape.constant(Tensor::zeros(vec![1, 1, 3, 3]));
    assert!(matches!(tape.conv2d(x, big, 1, 0), Err(Error::Shape(_))));
    assert!(tape.conv2d(x, big, 1, 1).is_ok());
}

#[test]
fn conv2d_matches_direct_loops() {
    let (n, c, h, w, f, kk, stride, pad) = (2, 3, 6, 5, 4, 3, 2, 1);
    let x = Tensor::<f64>::from_fn(vec![n, c, h, w], |i| (i as f64 * 0.37).sin());
    let k = Tensor::<f64>::from_fn(vec![f, c, kk, kk], |i| (i as f64 * 0.91).cos());
    let mut tape = Tape::new();
    let (vx, vk) = (tape.constant(x.clone()), tape.constant(k.clone()));
    let y = tape.conv2d(vx, vk, stride, pad).unwrap();
    let oh = (h + 2 * pad - kk) / stride + 1;
    let ow = (w + 2 * pad - kk) / stride + 1;
    assert_eq!(tape.shape(y), &[n, f, oh, ow]);
    let got = tape.value(y).data();
    for s in 0..n {
        for fo in 0..f {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = 0.0;
                    for ci in 0..c {
                        for dy in 0..kk {
                            for dx in 0..kk {
                                let iy = (oy * stride + dy) as isize - pad as isize;
                                let ix = (ox * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += x.data()[((s * c + ci) * h + iy as usize) * w + ix as usize]
                                    * k.data()[((fo * c + ci) * kk + dy) * kk + dx];
                            }
                        }
                    }
                    let v = got[((s * f + fo) * oh + oy) * ow + ox];
                    assert!((v - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn activations_and_losses_examples() {
    let mut tape = Tape::<f64>::new();
    let z = tape.constant(t(&[1], &[0.0]));
    let s = tape.sigmoid(z);
    assert_eq!(tape.value(s).data(), &[0.5]);
    let m = tape.constant(t(&[1], &[-1.0]));
    let l = tape.leaky_relu(m, 0.2).unwrap();
    assert!((tape.value(l).data()[0] + 0.2).abs() < 1e-15);
    assert!(tape.leaky_relu(m, 1.0).is_err());

    let x = tape.constant(t(&[1, 3], &[1.0, 0.0, 1.0]));
    let b = tape.bce_loss(x, x).unwrap();
    assert!(tape.scalar(b).unwrap() <= 3.0 * 1.0001e-7);
    let one = tape.constant(t(&[1, 1], &[1.0]));
    let half = tape.constant(t(&[1, 1], &[0.5]));
    let b = tape.bce_loss(one, half).unwrap();
    assert!((tape.scalar(b).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);

    let two = tape.constant(t(&[1, 1], &[2.0]));
    let zero = tape.constant(t(&[1, 1], &[0.0]));
    let m = tape.mse_loss(two, zero).unwrap();
    assert_eq!(tape.scalar(m).unwrap(), 2.0);
    let m = tape.mse_loss(two, two).unwrap();
    assert_eq!(tape.scalar(m).unwrap(), 0.0);
    assert!(matches!(tape.mse_loss(two, x), Err(Error::Shape(_))));
}

#[test]
fn backward_is_bitwise_deterministic() {
    let cases = gradcheck::op_cases(9);
    let case = cases.iter().find(|c| c.name == "conv2d").unwrap();
    let run = || {
        let mut tape = Tape::new();
        let vars: Vec<_> = case.inputs.iter().map(|x| tape.leaf(x.clone())).collect();
        let out = (case.build)(&mut tape, &vars).unwrap();
        let g = tape.backward(out).unwrap();
        let again = tape.backward(out).unwrap();
        let bits = |gr: &genbench::Gradients<f64>| {
            vars.iter()
                .flat_map(|v| gr.get(*v).unwrap().data().iter().map(|x| x.to_bits()).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&g), bits(&again));
        bits(&g)
    };
    assert_eq!(run(), run());
}

#[test]
fn rel_error_floor() {
    assert_eq!(rel_error(0.0, 0.0), 0.0);
    assert!(rel_error(1.0, 1.00001) < 1e-4);
}

fn pair(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (1..max).prop_flat_map(|n| {
        (
            prop::collection::vec(0.0f64..=1.0, n),
            prop::collection::vec(0.0f64..=1.0, n),
        )
    })
}

proptest! {
    #[test]
    fn bce_and_mse_are_nonnegative((x, p) in pair(16)) {
        let n = x.len();
        let mut tape = Tape::<f64>::new();
        let vx = tape.constant(t(&[1, n], &x));
        let vp = tape.constant(t(&[1, n], &p));
        let b = tape.bce_loss(vx, vp).unwrap();
        let m = tape.mse_loss(vx, vp).unwrap();
        prop_assert!(tape.scalar(b).unwrap() >= 0.0);
        prop_assert!(tape.scalar(m).unwrap() >= 0.0);
        let same = tape.mse_loss(vx, vx).unwrap();
        prop_assert_eq!(tape.scalar(same).unwrap(), 0.0);
        if x != p {
            prop_assert!(tape.scalar(m).unwrap() > 0.0);
        }
    }

    #[test]
    fn bce_zero_only_on_binary_match(bits in prop::collection::vec(any::<bool>(), 1..12), flip in 0usize..12) {
        let x: Vec<f64> = bits.iter().map(|&b| b as u8 as f64).collect();
        let n = x.len();
        let mut tape = Tape::<f64>::new();
        let vx = tape.constant(t(&[1, n], &x));
        let b = tape.bce_loss(vx, vx).unwrap();
        prop_assert!(tape.scalar(b).unwrap() < n as f64 * 1.0001e-7);
        let mut y = x.clone();
        let i = flip % n;
        y[i] = 1.0 - y[i];
        let vy = tape.constant(t(&[1, n], &y));
        let b = tape.bce_loss(vx, vy).unwrap();
        prop_assert!(tape.scalar(b).unwrap() > 1.0);
    }

    #[test]
    fn pooled_mask_scatter_preserves_window_max(
        c in 1usize..3, h in 2usize..7, w in 2usize..7, seed in any::<u64>()
    ) {
        use genbench::autodiff::kernels::max_pool2d;
        let x = Tensor::<f64>::from_fn(vec![1, c, h, w], |i| ((i as u64 ^ seed).wrapping_mul(2654435761) % 97) as f64);
        let (pooled, mask) = max_pool2d(&x, 2, 2).unwrap();
        let back = mask.scatter(&pooled).unwrap();
        let (again, _) = max_pool2d(&back, 2, 2).unwrap();
        prop_assert_eq!(again.data(), pooled.data());
    }
}

proptest! {
    #[test]
    fn maxpool_2x2_matches_naive_scan_with_ties(
        h in 2usize..9, w in 2usize..9, seed in any::<u64>()
    ) {
        use genbench::autodiff::kernels::max_pool2d;
        // few distinct values so windows tie often
        let x = Tensor::<f32>::from_fn(vec![2, 2, h, w], |i| ((i as u64 ^ seed).wrapping_mul(0x9E3779B97F4A7C15) >> 61) as f32);
        let (y, mask) = max_pool2d(&x, 2, 2).unwrap();
        let (oh, ow) = (h / 2, w / 2);
        for plane in 0..4 {
            for oy in 0..oh {
                for ox in 0..ow {
                    let (mut best, mut at) = (f32::NEG_INFINITY, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let idx = plane * h * w + (2 * oy + dy) * w + 2 * ox + dx;
                            if x.data()[idx] > best {
                                best = x.data()[idx];
                                at = idx;
                            }
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    prop_assert_eq!(y.data()[o], best);
                    prop_assert_eq!(mask.indices[o] as usize, at);
                }
            }
        }
    }
}

#[test]
fn maxpool_matches_window_scan() {
    use genbench::autodiff::kernels::max_pool2d;
    let x = Tensor::<f64>::from_fn(vec![2, 3, 6, 6], |i| ((i * 37 + 11) % 23) as f64 - 11.0);
    let (y, mask) = max_pool2d(&x, 2, 2).unwrap();
    assert_eq!(y.shape(), &[2, 3, 3, 3]);
    for plane in 0..6 {
        for oy in 0..3 {
            for ox in 0..3 {
                let mut best = f64::NEG_INFINITY;
                let mut at = (0, 0);
                for dy in 0..2 {
                    for dx in 0..2 {
                        let v = x.data()[plane * 36 + (oy * 2 + dy) * 6 + ox * 2 + dx];
                        if v > best {
                            best = v;
                            at = (dy, dx);
                        }
                    }
                }
                let o = plane * 9 + oy * 3 + ox;
                assert_eq!(y.data()[o], best);
                assert_eq!(mask.window_offset(o), at);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn unpool_writes_top_left_only(
        c in 1usize..3, h in 1usize..5, w in 1usize..5, s in 1usize..4,
        vals in prop::collection::vec(-10.0f64..10.0, 32),
    ) {
        let x = Tensor::<f64>::from_fn(vec![1, c, h, w], |i| vals[i % vals.len()]);
        let mut tape = Tape::new();
        let vx = tape.constant(x.clone());
        let y = tape.unpool2d(vx, s).unwrap();
        let y = tape.value(y);
        prop_assert_eq!(y.shape(), &[1, c, h * s, w * s][..]);
        let (oh, ow) = (h * s, w * s);
        for ch in 0..c {
            for i in 0..oh {
                for j in 0..ow {
                    let got = y.data()[(ch * oh + i) * ow + j];
                    let want = if i % s == 0 && j % s == 0 {
                        x.data()[(ch * h + i / s) * w + j / s]
                    } else {
                        0.0
                    };
                    prop_assert_eq!(got, want);
                }
            }
        }
        prop_assert!((y.sum() - x.sum()).abs() < 1e-9);
    }
}
