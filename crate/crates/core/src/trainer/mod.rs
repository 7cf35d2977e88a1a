//! Training loop: batching, scheduled sampling, alternating updates and
//! checkpointing.

mod adam;
mod checkpoint;
mod schedule;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use schedule::{lr_schedule, scheduled_sampling_prob, teacher_forcing_flags};

use std::collections::BTreeMap;

use rand::seq::index;
use rand_chacha::ChaCha8Rng;
use savp_tensor::{Tape, Tensor};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::layers::SpectralStore;
use crate::model::{Model, DISC, DISC_VAE, ENC, GEN};
use crate::objectives::{assemble, StepSettings};
use crate::params::{Binder, ParamStore};
use crate::rng::{load_state, save_state, substream, Stream};
use crate::synthdata::VideoDataset;

pub struct Trainer {
    pub config: RunConfig,
    pub model: Model,
    pub params: ParamStore<f32>,
    pub spectral: SpectralStore<f32>,
    /// One optimiser per network, keyed by its parameter prefix.
    pub optimizers: BTreeMap<String, Adam<f32>>,
    pub rng: ChaCha8Rng,
    pub iteration: u64,
}

impl Trainer {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config())?;
        let (params, spectral) = model.init(&mut substream(config.seed, Stream::Init));
        let adam = config.adam();
        let optimizers = [
            (GEN, true),
            (ENC, model.encoder.is_some()),
            (DISC, model.discriminator.is_some()),
            (DISC_VAE, model.discriminator_vae.is_some()),
        ]
        .into_iter()
        .filter(|(_, present)| *present)
        .map(|(g, _)| (g.to_string(), Adam::new(adam)))
        .collect();
        Ok(Self {
            rng: substream(config.seed, Stream::Training),
            config,
            model,
            params,
            spectral,
            optimizers,
            iteration: 0,
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let model = Model::new(ckpt.config.model_config())?;
        let (fresh, _) = model.init::<f32>(&mut substream(ckpt.config.seed, Stream::Init));
        for (name, t) in fresh.iter() {
            let stored = ckpt.params.get(name).map_err(|_| Error::Mismatch(format!("checkpoint lacks {name}")))?;
            if stored.shape() != t.shape() {
                return Err(Error::Mismatch(format!("{name} has shape {:?} in checkpoint", stored.shape())));
            }
        }
        if fresh.len() != ckpt.params.len() {
            return Err(Error::Mismatch("checkpoint holds parameters the model does not use".into()));
        }
        Ok(Self {
            rng: load_state(&ckpt.rng)?,
            config: ckpt.config,
            model,
            params: ckpt.params,
            spectral: ckpt.spectral,
            optimizers: ckpt.optimizers,
            iteration: ckpt.iteration,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            iteration: self.iteration,
            params: self.params.clone(),
            spectral: self.spectral.clone(),
            optimizers: self.optimizers.clone(),
            rng: save_state(&self.rng),
        }
    }

    fn frames_needed(&self) -> usize {
        self.config.train.context + self.config.train.horizon
    }

    /// Draws a batch of distinct videos, cut to `context + horizon` frames,
    /// with their action tracks.
    pub fn sample_batch(&mut self, data: &VideoDataset) -> Result<(Tensor<f32>, Option<Tensor<f32>>)> {
        let b = self.config.train.batch;
        let need = self.frames_needed();
        if data.len() < b {
            return Err(Error::Mismatch(format!("{} training videos for batch size {b}", data.len())));
        }
        if data.frames_per_video() < need {
            return Err(Error::Mismatch(format!(
                "videos have {} frames, training needs {need}",
                data.frames_per_video()
            )));
        }
        if (self.model.config.n_actions > 0) != data.actions.is_some() {
            return Err(Error::Mismatch("dataset and model disagree on action conditioning".into()));
        }
        let picks = index::sample(&mut self.rng, data.len(), b).into_vec();
        let sub = data.subset(&picks, "batch")?;
        let video = sub.frames.narrow(1, 0, need)?;
        let actions = sub.actions.map(|a| a.narrow(1, 0, need - 1)).transpose()?;
        Ok((video, actions))
    }

    /// One optimisation step on a freshly drawn batch.
    pub fn step(&mut self, data: &VideoDataset) -> Result<Vec<(String, f64)>> {
        let (video, actions) = self.sample_batch(data)?;
        self.step_on(&video, actions.as_ref())
    }

    /// One optimisation step on `video` `[b, context + horizon, c, h, w]`.
    /// Both updates use gradients from the same forward pass: the
    /// discriminators are stepped first, then the generator and encoder.
    pub fn step_on(&mut self, video: &Tensor<f32>, actions: Option<&Tensor<f32>>) -> Result<Vec<(String, f64)>> {
        let t = &self.config.train;
        let iteration = self.iteration;
        let steps = t.context - 1 + t.horizon;
        let p = scheduled_sampling_prob(iteration, t.sampling);
        let lr = lr_schedule(iteration, self.config.lr(), t.iterations);
        let settings = StepSettings {
            context: t.context,
            horizon: t.horizon,
            teacher_forcing: teacher_forcing_flags(&mut self.rng, p, steps),
            iteration,
            weights: self.config.loss_weights(),
            norm: self.config.model.recon,
            power_iters: self.config.power_iters(),
        };

        let (values, grads) = {
            let tape = Tape::new();
            let bind = Binder::new(&self.params, &tape);
            let video = tape.constant(video.clone());
            let actions = actions.map(|a| tape.constant(a.clone()));
            let obj = assemble(
                &self.model,
                &bind,
                &mut self.spectral,
                &video,
                actions.as_ref(),
                &settings,
                &mut self.rng,
            )?;
            let mut values = obj.values();
            if let Some((name, _)) = values.iter().find(|(_, v)| !v.is_finite()) {
                return Err(Error::NonFinite {
                    what: format!("loss {name}"),
                    iteration,
                });
            }
            let g = tape.backward(&obj.generator)?;
            let mut grads = BTreeMap::new();
            for group in [GEN, ENC] {
                if self.optimizers.contains_key(group) {
                    grads.insert(group, bind.grads(&g, &format!("{group}.")));
                }
            }
            if let Some(d) = &obj.discriminator {
                let g = tape.backward(d)?;
                for group in [DISC, DISC_VAE] {
                    if self.optimizers.contains_key(group) {
                        grads.insert(group, bind.grads(&g, &format!("{group}.")));
                    }
                }
            }
            values.push(("kl_weight".into(), obj.kl_weight));
            values.push(("lr".into(), lr));
            values.push(("p_teacher".into(), p));
            (values, grads)
        };

        for group in [DISC, DISC_VAE, GEN, ENC] {
            if let (Some(opt), Some(g)) = (self.optimizers.get_mut(group), grads.get(group)) {
                opt.update(&mut self.params, g, lr)?;
            }
        }
        self.iteration += 1;
        Ok(values)
    }
}
