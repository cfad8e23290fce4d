//! The thirteen autoencoder and GAN variants behind one [`GenerativeModel`]
//! type: network layout, per-phase objectives, training steps, sampling and
//! checkpoints.

pub mod arch;
pub mod losses;
pub mod train;

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::nn::checkpoint::Checkpoint;
use crate::nn::{clip_weights, Bound, Mode, Network, Optimizer, OptimizerConfig};
use crate::tensor::{Real, Tensor};

pub use arch::{CONV_AE_CHANNELS, DCGAN_CHANNELS};
pub use losses::{
    contractive_penalty, corrupt, corruption_noise, gan_d_loss, gan_g_loss, one_hot, reparameterize,
    wgan_critic_loss, wgan_g_loss,
};
pub use train::{FitReport, FitSettings, StepMetrics};

/// Checkpoint kind prefix; the full tag is `model:<kind>`.
pub const CHECKPOINT_PREFIX: &str = "model:";
/// Samples per forward pass during generation and reconstruction.
pub const INFERENCE_CHUNK: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Ae,
    Mlae,
    Spae,
    Cae,
    ConvAe,
    Dae,
    Vae,
    Cvae,
    Aae,
    Gan,
    Cgan,
    Dcgan,
    Wgan,
}

impl ModelKind {
    pub const ALL: [ModelKind; 13] = [
        ModelKind::Ae,
        ModelKind::Mlae,
        ModelKind::Spae,
        ModelKind::Cae,
        ModelKind::ConvAe,
        ModelKind::Dae,
        ModelKind::Vae,
        ModelKind::Cvae,
        ModelKind::Aae,
        ModelKind::Gan,
        ModelKind::Cgan,
        ModelKind::Dcgan,
        ModelKind::Wgan,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Ae => "ae",
            ModelKind::Mlae => "mlae",
            ModelKind::Spae => "spae",
            ModelKind::Cae => "cae",
            ModelKind::ConvAe => "convae",
            ModelKind::Dae => "dae",
            ModelKind::Vae => "vae",
            ModelKind::Cvae => "cvae",
            ModelKind::Aae => "aae",
            ModelKind::Gan => "gan",
            ModelKind::Cgan => "cgan",
            ModelKind::Dcgan => "dcgan",
            ModelKind::Wgan => "wgan",
        }
    }

    /// Autoencoders that only map images to images; they cannot sample from
    /// a prior.
    pub fn is_reconstructor(self) -> bool {
        use ModelKind::*;
        matches!(self, Ae | Mlae | Spae | Cae | ConvAe | Dae)
    }

    /// Kinds whose networks take a one-hot class label.
    pub fn is_conditional(self) -> bool {
        matches!(self, ModelKind::Cvae | ModelKind::Cgan)
    }

    /// Whether labeled images can be produced: reconstructors inherit the
    /// labels of their source images, conditional kinds take them as input.
    pub fn class_addressable(self) -> bool {
        self.is_reconstructor() || self.is_conditional()
    }

    pub fn is_gan(self) -> bool {
        use ModelKind::*;
        matches!(self, Gan | Cgan | Dcgan | Wgan)
    }

    pub fn default_latent(self) -> usize {
        match self {
            ModelKind::Spae => 196,
            k if k.is_gan() => 100,
            _ => 32,
        }
    }

    /// Training phases of one step, in order.
    pub fn phases(self) -> &'static [Phase] {
        match self {
            ModelKind::Aae => &[Phase::Recon, Phase::Disc, Phase::Gen],
            k if k.is_gan() => &[Phase::Disc, Phase::Gen],
            _ => &[Phase::Main],
        }
    }

    /// Networks updated in `phase`.
    pub fn trained_roles(self, phase: Phase) -> &'static [Role] {
        match phase {
            Phase::Main | Phase::Recon => &[Role::Encoder, Role::Decoder],
            Phase::Disc => &[Role::Discriminator],
            Phase::Gen if self == ModelKind::Aae => &[Role::Encoder],
            Phase::Gen => &[Role::Generator],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| *c != '-' && *c != '_')
            .collect::<String>()
            .to_ascii_lowercase();
        ModelKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| {
                let names: Vec<_> = ModelKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown model `{s}`; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    /// Single-objective update of encoder and decoder.
    Main,
    /// Adversarial autoencoder reconstruction update.
    Recon,
    /// Discriminator / critic update.
    Disc,
    /// Generator update (the encoder, for the adversarial autoencoder).
    Gen,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Main => "main",
            Phase::Recon => "recon",
            Phase::Disc => "disc",
            Phase::Gen => "gen",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Role {
    Encoder,
    Decoder,
    Generator,
    Discriminator,
}

impl Role {
    pub fn name(self) -> &'static str {
        match self {
            Role::Encoder => "encoder",
            Role::Decoder => "decoder",
            Role::Generator => "generator",
            Role::Discriminator => "discriminator",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Prior {
    #[default]
    Normal,
    /// Uniform on `[-1, 1]`.
    Uniform,
}

impl Prior {
    pub fn sample<T: Real, R: Rng + ?Sized>(self, n: usize, dim: usize, rng: &mut R) -> Tensor<T> {
        Tensor::from_fn(vec![n, dim], |_| {
            let v: f64 = match self {
                Prior::Normal => StandardNormal.sample(rng),
                Prior::Uniform => rng.random_range(-1.0..1.0),
            };
            T::of(v)
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatentSpec {
    pub dim: usize,
    pub prior: Prior,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReconLoss {
    #[default]
    Bce,
    Mse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Hyper {
    /// Code / latent width; `None` picks the per-kind default.
    pub latent: Option<usize>,
    pub prior: Prior,
    /// Width of hidden dense layers in multilayer networks.
    pub hidden: usize,
    /// Sparsity target.
    pub rho: f64,
    /// Sparsity weight.
    pub beta: f64,
    /// Contractive weight.
    pub lambda: f64,
    /// Corruption strength.
    pub alpha: f64,
    /// Corruption noise scale.
    pub sigma: f64,
    /// Critic weight clip.
    pub clip: f64,
    /// Critic updates per generator update.
    pub n_critic: usize,
    pub recon: ReconLoss,
    pub lr: f64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            latent: None,
            prior: Prior::Normal,
            hidden: 256,
            rho: 0.05,
            beta: 3.0,
            lambda: 0.1,
            alpha: 0.3,
            sigma: 1.0,
            clip: 0.01,
            n_critic: 5,
            recon: ReconLoss::Bce,
            lr: 0.001,
        }
    }
}

impl Hyper {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(what.to_string()));
        if self.latent == Some(0) {
            return bad("latent width must be at least 1");
        }
        if self.hidden == 0 {
            return bad("hidden width must be at least 1");
        }
        if !(self.rho > 0.0 && self.rho < 1.0) {
            return bad("rho must lie in (0, 1)");
        }
        for (name, v) in [("beta", self.beta), ("lambda", self.lambda), ("alpha", self.alpha)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        for (name, v) in [("sigma", self.sigma), ("clip", self.clip), ("lr", self.lr)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.n_critic == 0 {
            return bad("n_critic must be at least 1");
        }
        Ok(())
    }
}

/// Whether a forward pass belongs to an update or to inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pass {
    /// Networks being updated use batch statistics and refresh their running
    /// averages; the others use batch statistics without touching them.
    Train,
    Eval,
}

/// Everything random a phase consumes besides the networks.
#[derive(Clone, Debug)]
pub struct StepData<T: Real> {
    /// Clean images, `N x C x H x W`.
    pub x: Tensor<T>,
    pub labels: Vec<usize>,
    /// Corrupted encoder input (denoising autoencoder).
    pub x_in: Option<Tensor<T>>,
    /// Reparameterization noise, generator latents or prior draws.
    pub noise: Option<Tensor<T>>,
}

/// A phase objective and its named components.
#[derive(Clone, Debug)]
pub struct PhaseLoss {
    pub total: Var,
    pub parts: Vec<(&'static str, Var)>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    kind: ModelKind,
    hyper: Hyper,
    image_shape: [usize; 3],
    classes: usize,
}

#[derive(Clone, Debug)]
pub struct GenerativeModel<T: Real> {
    kind: ModelKind,
    hyper: Hyper,
    image_shape: [usize; 3],
    classes: usize,
    nets: BTreeMap<Role, Network<T>>,
    opts: BTreeMap<(Phase, Role), Optimizer<T>>,
}

impl<T: Real> GenerativeModel<T> {
    /// Builds and initializes the networks of `kind` from `seed`. `classes`
    /// is the label vocabulary; conditional kinds need at least one class.
    pub fn new(kind: ModelKind, hyper: Hyper, image_shape: [usize; 3], classes: usize, seed: u64) -> Result<Self> {
        hyper.validate()?;
        if image_shape.contains(&0) {
            return Err(Error::Config(format!("image shape {image_shape:?} has an empty dimension")));
        }
        if kind.is_conditional() && classes == 0 {
            return Err(Error::Config(format!("{kind} needs a label vocabulary")));
        }
        let layout = arch::Layout {
            image: image_shape,
            classes,
            latent: hyper.latent.unwrap_or(kind.default_latent()),
            hidden: hyper.hidden,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nets = arch::build(kind, &layout, &mut rng)?;
        let opt = if kind == ModelKind::Wgan {
            OptimizerConfig::rms_prop(hyper.lr)
        } else {
            OptimizerConfig::adam(hyper.lr)
        };
        let mut opts = BTreeMap::new();
        for &phase in kind.phases() {
            for &role in kind.trained_roles(phase) {
                opts.insert((phase, role), Optimizer::new(opt)?);
            }
        }
        Ok(GenerativeModel {
            kind,
            hyper,
            image_shape,
            classes,
            nets,
            opts,
        })
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn hyper(&self) -> &Hyper {
        &self.hyper
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.image_shape
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn latent(&self) -> LatentSpec {
        LatentSpec {
            dim: self.hyper.latent.unwrap_or(self.kind.default_latent()),
            prior: self.sampling_prior(),
        }
    }

    /// The variational models sample from the standard normal they were
    /// regularized towards, whatever `hyper.prior` says.
    fn sampling_prior(&self) -> Prior {
        match self.kind {
            ModelKind::Vae | ModelKind::Cvae => Prior::Normal,
            _ => self.hyper.prior,
        }
    }

    fn pixels(&self) -> usize {
        self.image_shape.iter().product()
    }

    pub fn roles(&self) -> Vec<Role> {
        self.nets.keys().copied().collect()
    }

    pub fn network(&self, role: Role) -> Option<&Network<T>> {
        self.nets.get(&role)
    }

    pub fn network_mut(&mut self, role: Role) -> Option<&mut Network<T>> {
        self.nets.get_mut(&role)
    }

    fn net_mut(&mut self, role: Role) -> Result<&mut Network<T>> {
        let kind = self.kind;
        self.nets
            .get_mut(&role)
            .ok_or_else(|| Error::Contract(format!("{kind} has no {} network", role.name())))
    }

    /// Registers every network on `tape`: those trained in `phase` as
    /// differentiable leaves, the rest as constants.
    pub fn bind(&self, tape: &mut Tape<T>, phase: Phase) -> BTreeMap<Role, Bound> {
        let trained = self.kind.trained_roles(phase);
        self.nets
            .iter()
            .map(|(&role, net)| (role, net.bind(tape, trained.contains(&role))))
            .collect()
    }

    /// Trainable tensors of the networks updated in `phase`, in binding
    /// order.
    pub fn trainable_tensors(&self, phase: Phase) -> Vec<Tensor<T>> {
        let trained = self.kind.trained_roles(phase);
        self.nets
            .iter()
            .filter(|(role, _)| trained.contains(role))
            .flat_map(|(_, net)| net.params().iter().filter(|p| p.trainable).map(|p| p.value.clone()))
            .collect()
    }

    /// Like [`Self::bind`], but the networks trained in `phase` take their
    /// parameters from `vars` (aligned with [`Self::trainable_tensors`]).
    pub fn bind_from(&self, tape: &mut Tape<T>, phase: Phase, vars: &[Var]) -> Result<BTreeMap<Role, Bound>> {
        let trained = self.kind.trained_roles(phase);
        let mut it = vars.iter().copied();
        let mut out = BTreeMap::new();
        for (&role, net) in &self.nets {
            let bound = if trained.contains(&role) {
                let slots = net
                    .params()
                    .iter()
                    .map(|p| if p.trainable { it.next().map(Some) } else { Some(None) })
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::Contract("too few variables for the trained networks".into()))?;
                Bound::from_vars(slots)
            } else {
                net.bind(tape, false)
            };
            out.insert(role, bound);
        }
        if it.next().is_some() {
            return Err(Error::Contract("more variables than trainable tensors".into()));
        }
        Ok(out)
    }

    fn mode(&self, pass: Pass, phase: Phase, role: Role) -> Mode {
        match pass {
            Pass::Eval => Mode::Eval,
            Pass::Train if self.kind.trained_roles(phase).contains(&role) => Mode::Train,
            Pass::Train => Mode::BatchStats,
        }
    }

    fn run(&mut self, tape: &mut Tape<T>, bounds: &BTreeMap<Role, Bound>, role: Role, x: Var, mode: Mode) -> Result<Var> {
        let bound = bounds
            .get(&role)
            .ok_or_else(|| Error::Contract(format!("{} network not bound", role.name())))?;
        self.net_mut(role)?.forward(tape, bound, x, mode)
    }

    fn check_labels(&self, labels: &[usize], n: usize) -> Result<()> {
        if labels.len() != n {
            return Err(Error::Input(format!("{n} samples but {} labels", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= self.classes) {
            return Err(Error::Input(format!(
                "label {bad} outside the {} classes of this {} model",
                self.classes, self.kind
            )));
        }
        Ok(())
    }

    /// Appends the one-hot labels as extra features for conditional kinds.
    fn condition(&self, tape: &mut Tape<T>, x: Var, labels: &[usize]) -> Result<Var> {
        if !self.kind.is_conditional() {
            return Ok(x);
        }
        let n = tape.shape(x)[0];
        self.check_labels(labels, n)?;
        let c = tape.constant(one_hot(labels, self.classes)?);
        tape.concat(&[x, c])
    }

    fn flat(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        tape.flatten(x)
    }

    fn recon_loss(&self, tape: &mut Tape<T>, target: Var, pred: Var) -> Result<Var> {
        match self.hyper.recon {
            ReconLoss::Bce => tape.bce_loss(target, pred),
            ReconLoss::Mse => tape.mse_loss(target, pred),
        }
    }

    fn check_images(&self, x: &Tensor<T>) -> Result<()> {
        if x.ndim() != 4 || x.shape()[1..] != self.image_shape[..] {
            return Err(Error::Shape(format!(
                "{} expects N x {:?} images, got {:?}",
                self.kind,
                self.image_shape,
                x.shape()
            )));
        }
        Ok(())
    }

    fn noise_for(&self, phase: Phase) -> Option<(usize, Prior)> {
        let lat = self.latent().dim;
        match (self.kind, phase) {
            (ModelKind::Vae | ModelKind::Cvae, _) => Some((lat, Prior::Normal)),
            (ModelKind::Aae, Phase::Disc) => Some((lat, self.hyper.prior)),
            (k, _) if k.is_gan() => Some((lat, self.hyper.prior)),
            _ => None,
        }
    }

    /// Draws the randomness `phase` needs for a batch `x`.
    pub fn draw<R: Rng + ?Sized>(&self, phase: Phase, x: &Tensor<T>, labels: &[usize], rng: &mut R) -> Result<StepData<T>> {
        self.check_images(x)?;
        let n = x.batch_len();
        let x_in = if self.kind == ModelKind::Dae {
            Some(corrupt(x, self.hyper.alpha, self.hyper.sigma, rng)?)
        } else {
            None
        };
        let noise = self.noise_for(phase).map(|(dim, prior)| prior.sample(n, dim, rng));
        Ok(StepData {
            x: x.clone(),
            labels: labels.to_vec(),
            x_in,
            noise,
        })
    }

    fn noise_var(&self, tape: &mut Tape<T>, data: &StepData<T>) -> Result<Var> {
        let noise = data
            .noise
            .as_ref()
            .ok_or_else(|| Error::Contract(format!("{} step data lacks latent noise", self.kind)))?;
        let lat = self.latent().dim;
        if noise.shape() != [data.x.batch_len(), lat] {
            return Err(Error::Shape(format!(
                "latent noise {:?}, expected [{}, {lat}]",
                noise.shape(),
                data.x.batch_len()
            )));
        }
        Ok(tape.constant(noise.clone()))
    }

    /// Generator output as flat `[0, 1]` pixels: `N x P` for dense
    /// generators, `N x C x H x W` for the convolutional one.
    fn fake(&mut self, tape: &mut Tape<T>, b: &BTreeMap<Role, Bound>, z: Var, labels: &[usize], mode: Mode) -> Result<Var> {
        let zin = self.condition(tape, z, labels)?;
        let g = self.run(tape, b, Role::Generator, zin, mode)?;
        Ok(if self.kind == ModelKind::Dcgan {
            let half = tape.scale(g, T::of(0.5));
            tape.add_scalar(half, T::of(0.5))
        } else {
            g
        })
    }

    fn critic(&mut self, tape: &mut Tape<T>, b: &BTreeMap<Role, Bound>, img: Var, labels: &[usize], mode: Mode) -> Result<Var> {
        let input = if self.kind == ModelKind::Dcgan {
            img
        } else {
            let f = self.flat(tape, img)?;
            self.condition(tape, f, labels)?
        };
        self.run(tape, b, Role::Discriminator, input, mode)
    }

    /// The objective of `phase` on `data`, built on `tape` with the networks
    /// bound in `bounds`.
    pub fn phase_loss(
        &mut self,
        tape: &mut Tape<T>,
        bounds: &BTreeMap<Role, Bound>,
        phase: Phase,
        data: &StepData<T>,
        pass: Pass,
    ) -> Result<PhaseLoss> {
        use ModelKind::*;
        use Phase::{Disc, Gen, Main, Recon};
        if !self.kind.phases().contains(&phase) {
            return Err(Error::Contract(format!("{} has no {} phase", self.kind, phase.name())));
        }
        self.check_images(&data.x)?;
        let (enc, dec, gen, dis) = (
            self.mode(pass, phase, Role::Encoder),
            self.mode(pass, phase, Role::Decoder),
            self.mode(pass, phase, Role::Generator),
            self.mode(pass, phase, Role::Discriminator),
        );
        let x = tape.constant(data.x.clone());
        let loss = match (self.kind, phase) {
            (Ae | Mlae | Spae | Cae | Dae, Main) => {
                let source = match &data.x_in {
                    Some(t) if self.kind == Dae => tape.constant(t.clone()),
                    None if self.kind == Dae => {
                        return Err(Error::Contract("denoising step data lacks the corrupted input".into()))
                    }
                    _ => x,
                };
                let input = self.flat(tape, source)?;
                let target = self.flat(tape, x)?;
                let h = self.run(tape, bounds, Role::Encoder, input, enc)?;
                let xr = self.run(tape, bounds, Role::Decoder, h, dec)?;
                let recon = self.recon_loss(tape, target, xr)?;
                let mut parts = vec![("recon", recon)];
                let mut total = recon;
                if self.kind == Spae {
                    let pen = tape.sparsity_kl(h, self.hyper.rho, self.hyper.beta)?;
                    parts.push(("sparsity", pen));
                    total = tape.add(total, pen)?;
                }
                if self.kind == Cae {
                    let wi = self.nets[&Role::Encoder]
                        .weight_index(0)
                        .ok_or_else(|| Error::Config("contractive encoder has no leading dense layer".into()))?;
                    let w = bounds[&Role::Encoder]
                        .var(wi)
                        .ok_or_else(|| Error::Contract("encoder weight not bound".into()))?;
                    let pen = contractive_penalty(tape, h, w)?;
                    parts.push(("contractive", pen));
                    let weighted = tape.scale(pen, T::of(self.hyper.lambda));
                    total = tape.add(total, weighted)?;
                }
                PhaseLoss { total, parts }
            }
            (ConvAe, Main) => {
                let h = self.run(tape, bounds, Role::Encoder, x, enc)?;
                let xr = self.run(tape, bounds, Role::Decoder, h, dec)?;
                let recon = self.recon_loss(tape, x, xr)?;
                PhaseLoss {
                    total: recon,
                    parts: vec![("recon", recon)],
                }
            }
            (Vae | Cvae, Main) => {
                let lat = self.latent().dim;
                let f = self.flat(tape, x)?;
                let input = self.condition(tape, f, &data.labels)?;
                let stats = self.run(tape, bounds, Role::Encoder, input, enc)?;
                let mu = tape.narrow(stats, 0, lat)?;
                let logvar = tape.narrow(stats, lat, lat)?;
                let eps = self.noise_var(tape, data)?;
                let h = reparameterize(tape, mu, logvar, eps)?;
                let dec_in = self.condition(tape, h, &data.labels)?;
                let xr = self.run(tape, bounds, Role::Decoder, dec_in, dec)?;
                let recon = self.recon_loss(tape, f, xr)?;
                let kl = tape.gaussian_kl(mu, logvar)?;
                PhaseLoss {
                    total: tape.add(recon, kl)?,
                    parts: vec![("recon", recon), ("kl", kl)],
                }
            }
            (Aae, Recon) => {
                let f = self.flat(tape, x)?;
                let h = self.run(tape, bounds, Role::Encoder, f, enc)?;
                let xr = self.run(tape, bounds, Role::Decoder, h, dec)?;
                let recon = self.recon_loss(tape, f, xr)?;
                PhaseLoss {
                    total: recon,
                    parts: vec![("recon", recon)],
                }
            }
            (Aae, Disc) => {
                let f = self.flat(tape, x)?;
                let h = self.run(tape, bounds, Role::Encoder, f, enc)?;
                let prior = self.noise_var(tape, data)?;
                let d_real = self.run(tape, bounds, Role::Discriminator, prior, dis)?;
                let d_fake = self.run(tape, bounds, Role::Discriminator, h, dis)?;
                let d = gan_d_loss(tape, d_real, d_fake)?;
                PhaseLoss {
                    total: d,
                    parts: vec![("d", d)],
                }
            }
            (Aae, Gen) => {
                let f = self.flat(tape, x)?;
                let h = self.run(tape, bounds, Role::Encoder, f, enc)?;
                let d_fake = self.run(tape, bounds, Role::Discriminator, h, dis)?;
                let g = gan_g_loss(tape, d_fake)?;
                PhaseLoss {
                    total: g,
                    parts: vec![("g", g)],
                }
            }
            (Gan | Cgan | Dcgan | Wgan, Disc) => {
                let z = self.noise_var(tape, data)?;
                let fake = self.fake(tape, bounds, z, &data.labels, gen)?;
                let f_real = self.critic(tape, bounds, x, &data.labels, dis)?;
                let f_fake = self.critic(tape, bounds, fake, &data.labels, dis)?;
                let d = if self.kind == Wgan {
                    wgan_critic_loss(tape, f_real, f_fake)?
                } else {
                    gan_d_loss(tape, f_real, f_fake)?
                };
                PhaseLoss {
                    total: d,
                    parts: vec![("d", d)],
                }
            }
            (Gan | Cgan | Dcgan | Wgan, Gen) => {
                let z = self.noise_var(tape, data)?;
                let fake = self.fake(tape, bounds, z, &data.labels, gen)?;
                let f_fake = self.critic(tape, bounds, fake, &data.labels, dis)?;
                let g = if self.kind == Wgan {
                    wgan_g_loss(tape, f_fake)
                } else {
                    gan_g_loss(tape, f_fake)?
                };
                PhaseLoss {
                    total: g,
                    parts: vec![("g", g)],
                }
            }
            (k, p) => return Err(Error::Contract(format!("{k} has no {} phase", p.name()))),
        };
        Ok(loss)
    }

    /// One optimizer update of the networks trained in `phase`. Critic
    /// weights are clipped right after each critic update. Returns the
    /// named loss values measured before the update.
    pub fn train_phase(&mut self, phase: Phase, data: &StepData<T>) -> Result<Vec<(String, f64)>> {
        let mut tape = Tape::new();
        let bounds = self.bind(&mut tape, phase);
        let loss = self.phase_loss(&mut tape, &bounds, phase, data, Pass::Train)?;
        if let Some(op) = tape.non_finite() {
            return Err(Error::NonFinite(op.to_string()));
        }
        let values = self.loss_values(&tape, &loss, phase)?;
        let mut grads = tape.backward(loss.total)?;
        for &role in self.kind.trained_roles(phase) {
            let net = self
                .nets
                .get_mut(&role)
                .ok_or_else(|| Error::Contract(format!("{} network missing", role.name())))?;
            let g = net.gradients(&bounds[&role], &mut grads);
            let opt = self
                .opts
                .get_mut(&(phase, role))
                .ok_or_else(|| Error::Contract(format!("no optimizer for {} in {}", role.name(), phase.name())))?;
            opt.step(net.params_mut(), &g)?;
        }
        if self.kind == ModelKind::Wgan && phase == Phase::Disc {
            let c = self.hyper.clip;
            clip_weights(self.net_mut(Role::Discriminator)?.params_mut(), c)?;
        }
        Ok(values)
    }

    fn loss_values(&self, tape: &Tape<T>, loss: &PhaseLoss, phase: Phase) -> Result<Vec<(String, f64)>> {
        let mut out = Vec::with_capacity(loss.parts.len() + 1);
        for &(name, v) in &loss.parts {
            out.push((format!("{}.{name}", phase.name()), tape.scalar(v)?.as_f64()));
        }
        if loss.parts.len() > 1 || loss.parts.is_empty() {
            out.push((format!("{}.total", phase.name()), tape.scalar(loss.total)?.as_f64()));
        }
        if let Some((name, v)) = out.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{name} = {v}")));
        }
        Ok(out)
    }

    /// Loss components of every phase on `data`, in inference mode, without
    /// updating anything.
    pub fn eval_losses<R: Rng + ?Sized>(&mut self, x: &Tensor<T>, labels: &[usize], rng: &mut R) -> Result<Vec<(String, f64)>> {
        let mut out = Vec::new();
        for &phase in self.kind.phases() {
            let data = self.draw(phase, x, labels, rng)?;
            let mut tape = Tape::new();
            let bounds = self.bind(&mut tape, phase);
            let loss = self.phase_loss(&mut tape, &bounds, phase, &data, Pass::Eval)?;
            out.extend(self.loss_values(&tape, &loss, phase)?);
        }
        Ok(out)
    }

    /// Largest absolute trainable weight of the discriminator / critic.
    pub fn critic_max_abs(&self) -> Option<f64> {
        self.nets.get(&Role::Discriminator).map(|n| n.params().max_abs().as_f64())
    }

    /// `n` images sampled from the prior. Conditional kinds draw class
    /// `label`, or cycle through all classes (`i mod K`) when none is given.
    pub fn generate(&mut self, n: usize, label: Option<usize>, seed: u64) -> Result<Tensor<T>> {
        let labels = self.generation_labels(n, label)?;
        self.generate_labeled(&labels, seed)
    }

    /// Labels that [`Self::generate`] would use.
    pub fn generation_labels(&self, n: usize, label: Option<usize>) -> Result<Vec<usize>> {
        if self.kind.is_reconstructor() {
            return Err(Error::Input(format!(
                "{} cannot sample from a prior; it reconstructs source images",
                self.kind
            )));
        }
        match (self.kind.is_conditional(), label) {
            (false, Some(_)) => Err(Error::Input(format!("{} takes no class label", self.kind))),
            (false, None) => Ok(vec![0; n]),
            (true, Some(l)) if l >= self.classes => Err(Error::Input(format!(
                "label {l} outside the {} classes of this {} model",
                self.classes, self.kind
            ))),
            (true, Some(l)) => Ok(vec![l; n]),
            (true, None) => Ok((0..n).map(|i| i % self.classes).collect()),
        }
    }

    /// One image per entry of `labels` (ignored by unconditional kinds).
    pub fn generate_labeled(&mut self, labels: &[usize], seed: u64) -> Result<Tensor<T>> {
        if self.kind.is_reconstructor() {
            return Err(Error::Input(format!(
                "{} cannot sample from a prior; it reconstructs source images",
                self.kind
            )));
        }
        let n = labels.len();
        let mut shape = vec![n];
        shape.extend_from_slice(&self.image_shape);
        if n == 0 {
            return Ok(Tensor::zeros(shape));
        }
        if self.kind.is_conditional() {
            self.check_labels(labels, n)?;
        }
        let latent = self.latent();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z_all: Tensor<T> = latent.prior.sample(n, latent.dim, &mut rng);
        let mut parts = Vec::with_capacity(n.div_ceil(INFERENCE_CHUNK));
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut tape = Tape::new();
            let bounds = self.bind(&mut tape, Phase::Main);
            let z = tape.constant(z_all.slice_batch(start, end));
            let lab = &labels[start..end];
            let out = if self.kind.is_gan() {
                self.fake(&mut tape, &bounds, z, lab, Mode::Eval)?
            } else {
                let zin = self.condition(&mut tape, z, lab)?;
                self.run(&mut tape, &bounds, Role::Decoder, zin, Mode::Eval)?
            };
            if let Some(op) = tape.non_finite() {
                return Err(Error::NonFinite(op.to_string()));
            }
            parts.push(tape.value(out).clone());
        }
        Tensor::concat_batch(&parts)?.into_shape(shape)
    }

    /// Decoded encodings of `x` — the posterior mean for the variational
    /// kinds. Conditional kinds need `labels`.
    pub fn reconstruct(&mut self, x: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        let out = self.chunked(x, labels, true)?;
        out.into_shape(x.shape().to_vec())
    }

    /// Codes of `x` (`N x L`, or the pooled feature maps of the
    /// convolutional autoencoder); posterior means for the variational kinds.
    pub fn encode(&mut self, x: &Tensor<T>, labels: Option<&[usize]>) -> Result<Tensor<T>> {
        self.chunked(x, labels, false)
    }

    fn chunked(&mut self, x: &Tensor<T>, labels: Option<&[usize]>, decode: bool) -> Result<Tensor<T>> {
        if self.kind.is_gan() {
            return Err(Error::Input(format!("{} has no encoder", self.kind)));
        }
        self.check_images(x)?;
        let n = x.batch_len();
        let labels = match (self.kind.is_conditional(), labels) {
            (true, None) => return Err(Error::Input(format!("{} needs labels for its inputs", self.kind))),
            (true, Some(l)) => {
                self.check_labels(l, n)?;
                l.to_vec()
            }
            (false, _) => vec![0; n],
        };
        let mut parts = Vec::with_capacity(n.div_ceil(INFERENCE_CHUNK).max(1));
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let mut tape = Tape::new();
            let bounds = self.bind(&mut tape, Phase::Main);
            let lab = &labels[start..end];
            let xi = tape.constant(x.slice_batch(start, end));
            let input = if self.kind == ModelKind::ConvAe {
                xi
            } else {
                let f = self.flat(&mut tape, xi)?;
                self.condition(&mut tape, f, lab)?
            };
            let mut h = self.run(&mut tape, &bounds, Role::Encoder, input, Mode::Eval)?;
            if matches!(self.kind, ModelKind::Vae | ModelKind::Cvae) {
                h = tape.narrow(h, 0, self.latent().dim)?;
            }
            let out = if decode {
                let hin = self.condition(&mut tape, h, lab)?;
                self.run(&mut tape, &bounds, Role::Decoder, hin, Mode::Eval)?
            } else {
                h
            };
            if let Some(op) = tape.non_finite() {
                return Err(Error::NonFinite(op.to_string()));
            }
            parts.push(tape.value(out).clone());
        }
        if parts.is_empty() {
            let mut shape = vec![0];
            if decode {
                shape.push(self.pixels());
            } else {
                shape.extend_from_slice(self.nets[&Role::Encoder].output_shape());
                if matches!(self.kind, ModelKind::Vae | ModelKind::Cvae) {
                    shape[1] = self.latent().dim;
                }
            }
            return Ok(Tensor::zeros(shape));
        }
        Tensor::concat_batch(&parts)
    }

    pub fn checkpoint_kind(&self) -> String {
        format!("{CHECKPOINT_PREFIX}{}", self.kind)
    }

    /// Weights and buffers of every network; optimizer state is not kept.
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let header = Header {
            kind: self.kind,
            hyper: self.hyper.clone(),
            image_shape: self.image_shape,
            classes: self.classes,
        };
        let mut ck = Checkpoint::new(self.checkpoint_kind(), serde_json::to_value(header)?);
        for (role, net) in &self.nets {
            ck.add_store(&format!("{}.", role.name()), net.params());
        }
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if !ck.kind.starts_with(CHECKPOINT_PREFIX) {
            return Err(Error::Input(format!("checkpoint holds a `{}`, not a generative model", ck.kind)));
        }
        let header: Header = serde_json::from_value(ck.hyper.clone())?;
        if ck.kind != format!("{CHECKPOINT_PREFIX}{}", header.kind) {
            return Err(Error::Consistency(format!(
                "checkpoint tag `{}` disagrees with its header kind `{}`",
                ck.kind, header.kind
            )));
        }
        let mut model = Self::new(header.kind, header.hyper, header.image_shape, header.classes, 0)?;
        let values = ck.tensors_as::<T>();
        for (role, net) in model.nets.iter_mut() {
            net.load_values(&values, &format!("{}.", role.name()))?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}
