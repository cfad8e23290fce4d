//! Minibatch training loop shared by all model kinds.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{GenerativeModel, ModelKind, Phase};
use crate::data::{LabeledDataset, Sampler};
use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitSettings {
    /// Training steps; one step runs every phase of the model once (the
    /// critic phase `n_critic` times).
    pub iterations: usize,
    pub batch_size: usize,
    /// Minibatch shuffling.
    pub data_seed: u64,
    /// Corruption, reparameterization and latent draws.
    pub noise_seed: u64,
    /// Where to keep the last good weights, if anywhere.
    pub checkpoint: Option<PathBuf>,
    /// Checkpoint period in steps; 0 writes only at the end.
    pub checkpoint_every: usize,
}

impl Default for FitSettings {
    fn default() -> Self {
        FitSettings {
            iterations: 1000,
            batch_size: 128,
            data_seed: 0,
            noise_seed: 0,
            checkpoint: None,
            checkpoint_every: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepMetrics {
    pub step: usize,
    /// `phase.part` loss values measured before each update.
    pub losses: Vec<(String, f64)>,
    /// Largest critic weight magnitude after each critic update (WGAN only).
    pub critic_max_abs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub iterations: usize,
    /// Per-step values of every loss component; repeated critic updates are
    /// averaged within a step.
    pub curves: BTreeMap<String, Vec<f64>>,
    pub wall_seconds: f64,
}

impl FitReport {
    /// Mean of the first / last `k` entries of a curve.
    pub fn head_tail_mean(&self, name: &str, k: usize) -> Option<(f64, f64)> {
        let c = self.curves.get(name)?;
        if c.is_empty() || k == 0 {
            return None;
        }
        let k = k.min(c.len());
        let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
        Some((mean(&c[..k]), mean(&c[c.len() - k..])))
    }
}

impl<T: Real> GenerativeModel<T> {
    pub fn fit(&mut self, data: &LabeledDataset, settings: &FitSettings) -> Result<FitReport> {
        self.fit_with(data, settings, |_| Ok(()))
    }

    /// [`Self::fit`] with a callback after every step; an error from the
    /// callback stops training.
    pub fn fit_with(
        &mut self,
        data: &LabeledDataset,
        settings: &FitSettings,
        mut observe: impl FnMut(&StepMetrics) -> Result<()>,
    ) -> Result<FitReport> {
        if settings.iterations == 0 {
            return Err(Error::Config("iterations must be at least 1".into()));
        }
        if data.image_shape() != self.image_shape {
            return Err(Error::Config(format!(
                "dataset images {:?} do not fit a model built for {:?}",
                data.image_shape(),
                self.image_shape
            )));
        }
        if self.kind.is_conditional() && data.classes() != self.classes {
            return Err(Error::Config(format!(
                "dataset has {} classes, {} model {}",
                data.classes(),
                self.kind,
                self.classes
            )));
        }
        let started = Instant::now();
        let mut sampler = Sampler::new(data, settings.batch_size, settings.data_seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(settings.noise_seed);
        let mut curves: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        let mut last_good: Option<PathBuf> = None;

        for step in 0..settings.iterations {
            let batch = sampler.next_batch();
            let mut metrics = StepMetrics {
                step,
                losses: Vec::new(),
                critic_max_abs: Vec::new(),
            };
            for &phase in self.kind.phases() {
                let reps = if self.kind == ModelKind::Wgan && phase == Phase::Disc {
                    self.hyper.n_critic
                } else {
                    1
                };
                let mut acc: Vec<(String, f64)> = Vec::new();
                for rep in 0..reps {
                    // extra critic updates see fresh real batches
                    let b = if rep == 0 { batch.clone() } else { sampler.next_batch() };
                    let x = b.images.cast::<T>();
                    let d = self.draw(phase, &x, &b.labels, &mut rng)?;
                    let values = self
                        .train_phase(phase, &d)
                        .map_err(|e| self.diverged(step, phase, e, &last_good))?;
                    if self.kind == ModelKind::Wgan && phase == Phase::Disc {
                        metrics.critic_max_abs.push(self.critic_max_abs().unwrap_or(0.0));
                    }
                    if acc.is_empty() {
                        acc = values;
                    } else {
                        for (a, (_, v)) in acc.iter_mut().zip(values) {
                            a.1 += v;
                        }
                    }
                }
                for (name, v) in acc {
                    metrics.losses.push((name, v / reps as f64));
                }
            }
            for (name, v) in &metrics.losses {
                curves.entry(name.clone()).or_default().push(*v);
            }
            if step % 500 == 0 {
                log::debug!("{} step {step}: {:?}", self.kind, metrics.losses);
            }
            observe(&metrics)?;
            if let Some(path) = &settings.checkpoint {
                let due = settings.checkpoint_every > 0 && (step + 1) % settings.checkpoint_every == 0;
                if due || step + 1 == settings.iterations {
                    self.save(path)?;
                    last_good = Some(path.clone());
                }
            }
        }
        Ok(FitReport {
            iterations: settings.iterations,
            curves,
            wall_seconds: started.elapsed().as_secs_f64(),
        })
    }

    fn diverged(&self, step: usize, phase: Phase, err: Error, last_good: &Option<PathBuf>) -> Error {
        match err {
            Error::NonFinite(what) => {
                let ck = match last_good {
                    Some(p) => format!("last good checkpoint: {}", p.display()),
                    None => "no checkpoint written yet".to_string(),
                };
                Error::Diverged(format!(
                    "{} {} phase at step {step}: non-finite {what}; {ck}",
                    self.kind,
                    phase.name()
                ))
            }
            other => other,
        }
    }
}
