//! Central finite-difference checks of tape gradients, in `f64`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Denominator floor so that two near-zero derivatives compare as equal.
pub const REL_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct GradCheck {
    /// Largest relative error over all probed coordinates.
    pub max_rel_error: f64,
    pub probes: usize,
    /// `(input, element, analytic, numeric)` at the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Compares the gradient of the scalar built by `f` against central
/// differences at up to `probes` randomly chosen input coordinates (all of
/// them if the inputs are smaller). `h` is the absolute step.
pub fn check<F>(inputs: &[Tensor<f64>], probes: usize, h: f64, seed: u64, f: F) -> Result<GradCheck>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        if let Some(op) = tape.non_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        tape.scalar(out)
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;

    let total: usize = inputs.iter().map(Tensor::numel).sum();
    let coords: Vec<(usize, usize)> = if total <= probes {
        inputs
            .iter()
            .enumerate()
            .flat_map(|(i, t)| (0..t.numel()).map(move |j| (i, j)))
            .collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..probes)
            .map(|_| {
                let mut k = rng.random_range(0..total);
                let mut i = 0;
                while k >= inputs[i].numel() {
                    k -= inputs[i].numel();
                    i += 1;
                }
                (i, k)
            })
            .collect()
    };

    let mut report = GradCheck {
        max_rel_error: 0.0,
        probes: coords.len(),
        worst: None,
    };
    let mut work = inputs.to_vec();
    for (i, j) in coords {
        let orig = work[i].data()[j];
        work[i].data_mut()[j] = orig + h;
        let up = eval(&work)?;
        work[i].data_mut()[j] = orig - h;
        let down = eval(&work)?;
        work[i].data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * h);
        let analytic = grads.get(vars[i]).map_or(0.0, |g| g.data()[j]);
        let e = rel_error(analytic, numeric);
        if e >= report.max_rel_error {
            report.max_rel_error = e;
            report.worst = Some((i, j, analytic, numeric));
        }
    }
    Ok(report)
}

/// Loss builder used by [`check`].
pub type Builder = Box<dyn Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync>;

/// A named differentiable computation with the point to check it at.
pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<Tensor<f64>>,
    pub build: Builder,
}

impl Case {
    pub fn new(
        name: &'static str,
        inputs: Vec<Tensor<f64>>,
        build: impl Fn(&mut Tape<f64>, &[Var]) -> Result<Var> + Send + Sync + 'static,
    ) -> Self {
        Case {
            name,
            inputs,
            build: Box::new(build),
        }
    }

    pub fn run(&self, probes: usize, seed: u64) -> Result<GradCheck> {
        check(&self.inputs, probes, 1e-5, seed, &self.build)
    }
}

/// Fixed, non-uniform weights so that `sum(w * y)` exercises every output.
pub fn probe_weights(shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |i| (i as f64 * 1.37 + 0.4).sin() + 0.3)
}

/// Reduces a non-scalar output to a scalar with [`probe_weights`].
pub fn weighted_sum(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let w = tape.constant(probe_weights(tape.shape(y)));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    use rand_distr::{Distribution, StandardNormal};
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

/// One case per differentiable tape operation, at random points drawn from
/// `seed`.
pub fn op_cases(seed: u64) -> Vec<Case> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = &mut rng;
    let mut cases = vec![
        Case::new("matmul", vec![normal(&[3, 4], r), normal(&[4, 2], r)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        Case::new(
            "linear",
            vec![normal(&[3, 4], r), normal(&[5, 4], r), normal(&[5], r)],
            |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                weighted_sum(t, y)
            },
        ),
        Case::new("add", vec![normal(&[2, 3], r), normal(&[2, 3], r)], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        Case::new("sub", vec![normal(&[2, 3], r), normal(&[2, 3], r)], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        Case::new("mul", vec![normal(&[2, 3], r), normal(&[2, 3], r)], |t, v| {
            let y = t.mul(v[0], v[1])?;
            weighted_sum(t, y)
        }),
        Case::new("scale", vec![normal(&[2, 3], r)], |t, v| {
            let y = t.scale(v[0], -2.5);
            weighted_sum(t, y)
        }),
        Case::new("add_scalar", vec![normal(&[2, 3], r)], |t, v| {
            let y = t.add_scalar(v[0], 0.75);
            let y = t.square(y);
            weighted_sum(t, y)
        }),
        Case::new("exp", vec![normal(&[2, 3], r)], |t, v| {
            let y = t.exp(v[0]);
            weighted_sum(t, y)
        }),
        Case::new("log", vec![uniform(&[2, 3], 0.5, 2.0, r)], |t, v| {
            let y = t.log(v[0]);
            weighted_sum(t, y)
        }),
        Case::new("square", vec![normal(&[2, 3], r)], |t, v| {
            let y = t.square(v[0]);
            weighted_sum(t, y)
        }),
        Case::new("sigmoid", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.sigmoid(v[0]);
            weighted_sum(t, y)
        }),
        Case::new("tanh", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.tanh(v[0]);
            weighted_sum(t, y)
        }),
        Case::new("relu", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.relu(v[0]);
            weighted_sum(t, y)
        }),
        Case::new("leaky_relu", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.leaky_relu(v[0], 0.2)?;
            weighted_sum(t, y)
        }),
        Case::new("sum", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.square(v[0]);
            Ok(t.sum(y))
        }),
        Case::new("mean", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.square(v[0]);
            Ok(t.mean(y))
        }),
        Case::new("sum_rows", vec![normal(&[3, 2, 2], r)], |t, v| {
            let y = t.sum_rows(v[0])?;
            weighted_sum(t, y)
        }),
        Case::new("sum_cols", vec![normal(&[3, 4], r)], |t, v| {
            let y = t.sum_cols(v[0])?;
            weighted_sum(t, y)
        }),
        Case::new("reshape", vec![normal(&[2, 6], r)], |t, v| {
            let y = t.reshape(v[0], vec![2, 2, 3])?;
            let y = t.square(y);
            weighted_sum(t, y)
        }),
        Case::new(
            "concat",
            vec![normal(&[2, 3], r), normal(&[2, 1, 2], r)],
            |t, v| {
                let b = t.flatten(v[1])?;
                let y = t.concat(&[v[0], b])?;
                weighted_sum(t, y)
            },
        ),
        Case::new("narrow", vec![normal(&[2, 5], r)], |t, v| {
            let y = t.narrow(v[0], 1, 3)?;
            weighted_sum(t, y)
        }),
        Case::new(
            "channel_bias",
            vec![normal(&[2, 3, 2, 2], r), normal(&[3], r)],
            |t, v| {
                let y = t.channel_bias(v[0], v[1])?;
                weighted_sum(t, y)
            },
        ),
        Case::new(
            "conv2d",
            vec![normal(&[2, 2, 5, 5], r), normal(&[3, 2, 3, 3], r)],
            |t, v| {
                let y = t.conv2d(v[0], v[1], 1, 0)?;
                weighted_sum(t, y)
            },
        ),
        Case::new(
            "conv2d_strided_padded",
            vec![normal(&[2, 2, 5, 5], r), normal(&[3, 2, 3, 3], r)],
            |t, v| {
                let y = t.conv2d(v[0], v[1], 2, 1)?;
                weighted_sum(t, y)
            },
        ),
        Case::new(
            "conv_transpose2d",
            vec![normal(&[2, 3, 3, 3], r), normal(&[3, 2, 4, 4], r)],
            |t, v| {
                let y = t.conv_transpose2d(v[0], v[1], 2, 1)?;
                weighted_sum(t, y)
            },
        ),
        Case::new(
            "conv2d_bias",
            vec![normal(&[2, 2, 5, 5], r), normal(&[3, 2, 3, 3], r), normal(&[3], r)],
            |t, v| {
                let y = t.conv2d_bias(v[0], v[1], v[2], 1, 1)?;
                weighted_sum(t, y)
            },
        ),
        Case::new(
            "conv_transpose2d_bias",
            vec![normal(&[2, 3, 3, 3], r), normal(&[3, 2, 4, 4], r), normal(&[2], r)],
            |t, v| {
                let y = t.conv_transpose2d_bias(v[0], v[1], v[2], 2, 1)?;
                weighted_sum(t, y)
            },
        ),
        Case::new("max_pool2d", vec![normal(&[2, 2, 4, 4], r)], |t, v| {
            let y = t.max_pool2d(v[0], 2, 2)?;
            weighted_sum(t, y)
        }),
        Case::new("max_pool2d_overlapping", vec![normal(&[1, 2, 5, 5], r)], |t, v| {
            let y = t.max_pool2d(v[0], 3, 1)?;
            weighted_sum(t, y)
        }),
        Case::new("unpool2d", vec![normal(&[2, 2, 2, 3], r)], |t, v| {
            let y = t.unpool2d(v[0], 2)?;
            weighted_sum(t, y)
        }),
        Case::new(
            "batch_norm_train",
            vec![normal(&[4, 3, 2, 2], r), uniform(&[3], 0.5, 1.5, r), normal(&[3], r)],
            |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], None, 1e-5)?;
                weighted_sum(t, y)
            },
        ),
        Case::new(
            "batch_norm_eval",
            vec![normal(&[4, 3], r), uniform(&[3], 0.5, 1.5, r), normal(&[3], r)],
            |t, v| {
                let (y, _) = t.batch_norm(v[0], v[1], v[2], Some((&[0.1, -0.2, 0.3], &[0.5, 1.0, 2.0])), 1e-5)?;
                weighted_sum(t, y)
            },
        ),
    ];
    let target = uniform(&[3, 4], 0.0, 1.0, r);
    cases.push(Case::new("bce_loss", vec![normal(&[3, 4], r)], move |t, v| {
        let x = t.constant(target.clone());
        let p = t.sigmoid(v[0]);
        t.bce_loss(x, p)
    }));
    cases.push(Case::new("mse_loss", vec![normal(&[3, 4], r), normal(&[3, 4], r)], |t, v| {
        t.mse_loss(v[0], v[1])
    }));
    cases.push(Case::new("softmax_cross_entropy", vec![normal(&[4, 5], r)], |t, v| {
        t.softmax_cross_entropy(v[0], &[0, 3, 4, 3])
    }));
    cases.push(Case::new("gaussian_kl", vec![normal(&[3, 2], r), normal(&[3, 2], r)], |t, v| {
        t.gaussian_kl(v[0], v[1])
    }));
    cases.push(Case::new("sparsity_kl", vec![normal(&[5, 3], r)], |t, v| {
        let a = t.sigmoid(v[0]);
        t.sparsity_kl(a, 0.05, 3.0)
    }));
    cases
}
