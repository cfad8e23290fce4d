//! Model-level objectives assembled from tape primitives.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// `-mean log D(real) - mean log(1 - D(fake))`, with `D` outputs `N x 1`.
pub fn gan_d_loss<T: Real>(tape: &mut Tape<T>, d_real: Var, d_fake: Var) -> Result<Var> {
    let ones = tape.constant(Tensor::ones(tape.shape(d_real).to_vec()));
    let zeros = tape.constant(Tensor::zeros(tape.shape(d_fake).to_vec()));
    let real = tape.bce_loss(ones, d_real)?;
    let fake = tape.bce_loss(zeros, d_fake)?;
    tape.add(real, fake)
}

/// Non-saturating generator loss `-mean log D(fake)`.
pub fn gan_g_loss<T: Real>(tape: &mut Tape<T>, d_fake: Var) -> Result<Var> {
    let ones = tape.constant(Tensor::ones(tape.shape(d_fake).to_vec()));
    tape.bce_loss(ones, d_fake)
}

/// `-(mean f(real) - mean f(fake))`; minimizing it maximizes the critic gap.
pub fn wgan_critic_loss<T: Real>(tape: &mut Tape<T>, f_real: Var, f_fake: Var) -> Result<Var> {
    let real = tape.mean(f_real);
    let fake = tape.mean(f_fake);
    tape.sub(fake, real)
}

pub fn wgan_g_loss<T: Real>(tape: &mut Tape<T>, f_fake: Var) -> Var {
    let m = tape.mean(f_fake);
    tape.scale(m, -T::one())
}

/// Squared Frobenius norm of the Jacobian of `h = sigmoid(x W^T + b)` with
/// respect to `x`, averaged over the batch:
/// `sum_j (h_j (1 - h_j))^2 * sum_i W_ji^2`.
///
/// `h` is `N x L`, `w` is `L x P`.
pub fn contractive_penalty<T: Real>(tape: &mut Tape<T>, h: Var, w: Var) -> Result<Var> {
    let (sh, sw) = (tape.shape(h).to_vec(), tape.shape(w).to_vec());
    if sh.len() != 2 || sw.len() != 2 || sh[1] != sw[0] {
        return Err(Error::Config(format!(
            "contractive penalty needs a single dense sigmoid encoder; got code {sh:?} and weight {sw:?}"
        )));
    }
    let one_minus = {
        let neg = tape.scale(h, -T::one());
        tape.add_scalar(neg, T::one())
    };
    let slope = tape.mul(h, one_minus)?;
    let slope2 = tape.square(slope);
    let w2 = tape.square(w);
    let row_norms = tape.sum_cols(w2)?;
    let row_norms = tape.reshape(row_norms, vec![sw[0], 1])?;
    let per_sample = tape.matmul(slope2, row_norms)?;
    let total = tape.sum(per_sample);
    Ok(tape.scale(total, T::of(1.0 / sh[0].max(1) as f64)))
}

/// `h = mu + exp(logvar / 2) * eps`.
pub fn reparameterize<T: Real>(tape: &mut Tape<T>, mu: Var, logvar: Var, eps: Var) -> Result<Var> {
    let half = tape.scale(logvar, T::of(0.5));
    let std = tape.exp(half);
    let noise = tape.mul(std, eps)?;
    tape.add(mu, noise)
}

fn check_noise(alpha: f64, sigma: f64) -> Result<()> {
    if !(alpha >= 0.0 && alpha.is_finite()) || !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Contract(format!(
            "corruption needs alpha >= 0 and sigma > 0, got alpha {alpha}, sigma {sigma}"
        )));
    }
    Ok(())
}

/// `alpha * eps` with `eps ~ N(0, sigma^2)` elementwise — the unclamped
/// perturbation that [`corrupt`] adds.
pub fn corruption_noise<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    alpha: f64,
    sigma: f64,
    rng: &mut R,
) -> Result<Tensor<T>> {
    check_noise(alpha, sigma)?;
    Ok(Tensor::from_fn(shape.to_vec(), |_| {
        let e: f64 = StandardNormal.sample(rng);
        T::of(alpha * sigma * e)
    }))
}

/// `x' = clamp(x + alpha * eps, 0, 1)`. With `alpha = 0` the input comes
/// back untouched and no randomness is consumed.
pub fn corrupt<T: Real, R: Rng + ?Sized>(x: &Tensor<T>, alpha: f64, sigma: f64, rng: &mut R) -> Result<Tensor<T>> {
    check_noise(alpha, sigma)?;
    if alpha == 0.0 {
        return Ok(x.clone());
    }
    let noise = corruption_noise::<T, R>(x.shape(), alpha, sigma, rng)?;
    let (lo, hi) = (T::zero(), T::one());
    Ok(Tensor::from_fn(x.shape().to_vec(), |i| {
        (x.data()[i] + noise.data()[i]).max(lo).min(hi)
    }))
}

/// One-hot rows for `labels` over `classes` columns.
pub fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Input(format!("label {bad} outside vocabulary of {classes} classes")));
    }
    let mut data = vec![T::zero(); labels.len() * classes];
    for (row, &l) in labels.iter().enumerate() {
        data[row * classes + l] = T::one();
    }
    Tensor::new(vec![labels.len(), classes], data)
}
