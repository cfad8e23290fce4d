//! Network layouts for each model kind.

use std::collections::BTreeMap;

use rand::Rng;

use super::{ModelKind, Role};
use crate::error::{Error, Result};
use crate::nn::{Activation, Network, NetworkBuilder};
use crate::tensor::Real;

/// Channel widths of the convolutional autoencoder.
pub const CONV_AE_CHANNELS: (usize, usize) = (16, 8);
/// Channel widths of the DCGAN pair (generator projection, then halved).
pub const DCGAN_CHANNELS: (usize, usize) = (64, 32);

pub(crate) struct Layout {
    pub image: [usize; 3],
    pub classes: usize,
    pub latent: usize,
    pub hidden: usize,
}

impl Layout {
    fn pixels(&self) -> usize {
        self.image.iter().product()
    }

    fn quarter(&self, kind: ModelKind) -> Result<(usize, usize)> {
        let [_, h, w] = self.image;
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "{kind} needs image sides divisible by 4, got {h}x{w}"
            )));
        }
        Ok((h / 4, w / 4))
    }
}

pub(crate) fn builders(kind: ModelKind, l: &Layout) -> Result<Vec<(Role, NetworkBuilder)>> {
    use Activation::{Identity, Relu, Sigmoid, Tanh};
    use ModelKind::*;
    let p = l.pixels();
    let (lat, hid, k) = (l.latent, l.hidden, l.classes);
    let img = l.image;
    Ok(match kind {
        Ae | Spae | Cae | Dae => {
            if lat >= p {
                return Err(Error::Config(format!(
                    "{kind} code width {lat} must be smaller than the input ({p} values)"
                )));
            }
            vec![
                (Role::Encoder, NetworkBuilder::new("encoder", &[p]).dense(lat).activation(Sigmoid)),
                (Role::Decoder, NetworkBuilder::new("decoder", &[lat]).dense(p).activation(Sigmoid)),
            ]
        }
        Mlae => {
            if lat >= p {
                return Err(Error::Config(format!(
                    "{kind} code width {lat} must be smaller than the input ({p} values)"
                )));
            }
            vec![
                (
                    Role::Encoder,
                    NetworkBuilder::new("encoder", &[p])
                        .dense(hid)
                        .activation(Relu)
                        .dense(lat)
                        .activation(Sigmoid),
                ),
                (
                    Role::Decoder,
                    NetworkBuilder::new("decoder", &[lat])
                        .dense(hid)
                        .activation(Relu)
                        .dense(p)
                        .activation(Sigmoid),
                ),
            ]
        }
        ConvAe => {
            let (qh, qw) = l.quarter(kind)?;
            let (c1, c2) = CONV_AE_CHANNELS;
            vec![
                (
                    Role::Encoder,
                    NetworkBuilder::new("encoder", &img)
                        .conv2d(c1, 3, 1, 1)
                        .activation(Relu)
                        .max_pool(2, 2)
                        .conv2d(c2, 3, 1, 1)
                        .activation(Relu)
                        .max_pool(2, 2),
                ),
                (
                    Role::Decoder,
                    NetworkBuilder::new("decoder", &[c2, qh, qw])
                        .unpool(2)
                        .conv2d(c1, 3, 1, 1)
                        .activation(Relu)
                        .unpool(2)
                        .conv2d(img[0], 3, 1, 1)
                        .activation(Sigmoid),
                ),
            ]
        }
        Vae | Cvae => {
            let extra = if kind == Cvae { k } else { 0 };
            vec![
                (
                    Role::Encoder,
                    NetworkBuilder::new("encoder", &[p + extra])
                        .dense(hid)
                        .activation(Relu)
                        .dense(2 * lat),
                ),
                (Role::Decoder, mlp_decoder(lat + extra, hid, p)),
            ]
        }
        Aae => vec![
            (
                Role::Encoder,
                NetworkBuilder::new("encoder", &[p]).dense(hid).activation(Relu).dense(lat),
            ),
            (Role::Decoder, mlp_decoder(lat, hid, p)),
            (Role::Discriminator, mlp_critic(lat, hid, Sigmoid)),
        ],
        Gan | Cgan | Wgan => {
            let extra = if kind == Cgan { k } else { 0 };
            let head = if kind == Wgan { Identity } else { Sigmoid };
            vec![
                (Role::Generator, mlp_generator(lat + extra, hid, p)),
                (Role::Discriminator, mlp_critic(p + extra, hid, head)),
            ]
        }
        Dcgan => {
            let (qh, qw) = l.quarter(kind)?;
            let (c1, c2) = DCGAN_CHANNELS;
            vec![
                (
                    Role::Generator,
                    NetworkBuilder::new("generator", &[lat])
                        .dense(c1 * qh * qw)
                        .batch_norm()
                        .activation(Relu)
                        .reshape(&[c1, qh, qw])
                        .conv_transpose2d(c2, 4, 2, 1)
                        .batch_norm()
                        .activation(Relu)
                        .conv_transpose2d(img[0], 4, 2, 1)
                        .activation(Tanh),
                ),
                (
                    Role::Discriminator,
                    NetworkBuilder::new("discriminator", &img)
                        .conv2d(c2, 4, 2, 1)
                        .activation(Activation::leaky())
                        .conv2d(c1, 4, 2, 1)
                        .batch_norm()
                        .activation(Activation::leaky())
                        .flatten()
                        .dense(1)
                        .activation(Sigmoid),
                ),
            ]
        }
    })
}

fn mlp_decoder(inputs: usize, hidden: usize, pixels: usize) -> NetworkBuilder {
    NetworkBuilder::new("decoder", &[inputs])
        .dense(hidden)
        .activation(Activation::Relu)
        .dense(pixels)
        .activation(Activation::Sigmoid)
}

fn mlp_generator(inputs: usize, hidden: usize, pixels: usize) -> NetworkBuilder {
    NetworkBuilder::new("generator", &[inputs])
        .dense(hidden)
        .activation(Activation::Relu)
        .dense(pixels)
        .activation(Activation::Sigmoid)
}

fn mlp_critic(inputs: usize, hidden: usize, head: Activation) -> NetworkBuilder {
    NetworkBuilder::new("discriminator", &[inputs])
        .dense(hidden)
        .activation(Activation::leaky())
        .dense(1)
        .activation(head)
}

pub(crate) fn build<T: Real, R: Rng + ?Sized>(
    kind: ModelKind,
    layout: &Layout,
    rng: &mut R,
) -> Result<BTreeMap<Role, Network<T>>> {
    let mut nets = BTreeMap::new();
    for (role, b) in builders(kind, layout)? {
        nets.insert(role, b.build(rng)?);
    }
    Ok(nets)
}
