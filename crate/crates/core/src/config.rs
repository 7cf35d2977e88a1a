//! Run configuration: one JSON document drives data, model, training and
//! evaluation. Unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, Variant, MIN_FRAMES};
use crate::objectives::{LossWeights, ReconNorm};
use crate::synthdata::SceneSpec;
use crate::trainer::AdamConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub videos: usize,
    /// Frames per generated video.
    pub frames: usize,
    /// Train, val and test fractions.
    pub split: [f64; 3],
}

impl Default for DataSection {
    fn default() -> Self {
        Self {
            videos: 256,
            frames: 10,
            split: [0.8, 0.1, 0.1],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub variant: Variant,
    pub ngf: usize,
    pub nz: usize,
    pub n_kernels: usize,
    pub kernel_size: usize,
    pub recon: ReconNorm,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub nef: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ndf: Option<usize>,
}

impl Default for ModelSection {
    fn default() -> Self {
        let d = ModelConfig::desk(Variant::Savp);
        Self {
            variant: Variant::Savp,
            ngf: d.ngf,
            nz: d.nz,
            n_kernels: d.n_kernels,
            kernel_size: d.kernel_size,
            recon: ReconNorm::L1,
            nef: None,
            ndf: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub iterations: u64,
    pub batch: usize,
    pub context: usize,
    pub horizon: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    pub beta2: f64,
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_l1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_kl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_anneal: Option<[u64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda_gan: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub power_iters: Option<usize>,
    /// Scheduled-sampling window: teacher forcing decays from 1 to 0.
    pub sampling: [u64; 2],
    /// Checkpoint cadence in iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            iterations: 5000,
            batch: 8,
            context: 2,
            horizon: 8,
            lr: None,
            beta1: None,
            beta2: 0.999,
            eps: 1e-8,
            lambda_l1: None,
            lambda_kl: None,
            kl_anneal: None,
            lambda_gan: None,
            power_iters: None,
            sampling: [500, 3000],
            checkpoint_every: 1000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub samples: usize,
    pub best_of: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self { samples: 20, best_of: 20 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub scene: SceneSpec,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    /// Parses and validates a configuration document.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Hex SHA-256 of the canonical (key-sorted, compact) serialisation.
    pub fn digest(&self) -> String {
        let value = serde_json::to_value(self).expect("config serialises");
        let hash = Sha256::digest(value.to_string().as_bytes());
        hash.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn variant(&self) -> Variant {
        self.model.variant
    }

    fn adversarial(&self) -> bool {
        self.variant().has_discriminator()
    }

    pub fn lr(&self) -> f64 {
        self.train.lr.unwrap_or(if self.adversarial() { 2e-4 } else { 1e-3 })
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr(),
            beta1: self.train.beta1.unwrap_or(if self.adversarial() { 0.5 } else { 0.9 }),
            beta2: self.train.beta2,
            eps: self.train.eps,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        let lambda_l1 = self.train.lambda_l1.unwrap_or(if self.adversarial() { 100.0 } else { 1.0 });
        let kl = self.variant().has_encoder();
        LossWeights {
            lambda_l1,
            lambda_kl: if kl { self.train.lambda_kl.unwrap_or(1e-3 * lambda_l1) } else { 0.0 },
            lambda_gan: self.train.lambda_gan.unwrap_or(1.0),
            kl_anneal: self.train.kl_anneal.map_or((1000, 2000), |[a, b]| (a, b)),
        }
    }

    pub fn power_iters(&self) -> usize {
        self.train.power_iters.unwrap_or(1)
    }

    pub fn model_config(&self) -> ModelConfig {
        let d = ModelConfig::desk(self.variant());
        ModelConfig {
            variant: self.variant(),
            channels: 1,
            height: self.scene.height,
            width: self.scene.width,
            ngf: self.model.ngf,
            nz: self.model.nz,
            n_kernels: self.model.n_kernels,
            kernel_size: self.model.kernel_size,
            n_actions: if self.scene.actions { 2 } else { 0 },
            nef: self.model.nef.unwrap_or(d.nef),
            ndf: self.model.ndf.unwrap_or(d.ndf),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.variant();
        let t = &self.train;
        let mut absent = Vec::new();
        if !v.has_encoder() {
            for (set, key) in [
                (t.lambda_kl.is_some(), "train.lambda_kl"),
                (t.kl_anneal.is_some(), "train.kl_anneal"),
                (self.model.nef.is_some(), "model.nef"),
            ] {
                if set {
                    absent.push(format!("{key} (encoder absent)"));
                }
            }
        }
        if !v.has_discriminator() {
            for (set, key) in [
                (t.lambda_gan.is_some(), "train.lambda_gan"),
                (t.power_iters.is_some(), "train.power_iters"),
                (self.model.ndf.is_some(), "model.ndf"),
            ] {
                if set {
                    absent.push(format!("{key} (discriminator absent)"));
                }
            }
        }
        if !absent.is_empty() {
            return Err(Error::Config(format!(
                "variant {} does not accept {}",
                v.name(),
                absent.join(", ")
            )));
        }
        let bad = |msg: String| Err(Error::Config(msg));
        if t.iterations == 0 || t.batch == 0 || t.context == 0 || t.horizon == 0 {
            return bad("iterations, batch, context and horizon must be positive".into());
        }
        let adam = self.adam();
        if !(adam.lr > 0.0) || !(0.0 < adam.beta1 && adam.beta1 < 1.0) || !(0.0 < adam.beta2 && adam.beta2 < 1.0) || !(adam.eps > 0.0) {
            return bad(format!("invalid optimiser settings {adam:?}"));
        }
        if self.power_iters() == 0 {
            return bad("power_iters must be at least 1".into());
        }
        if v.has_discriminator() && t.horizon < MIN_FRAMES {
            return bad(format!("adversarial variants need a horizon of at least {MIN_FRAMES}"));
        }
        if t.sampling[0] > t.sampling[1] {
            return bad(format!("sampling window {:?} is reversed", t.sampling));
        }
        if self.data.frames < t.context + t.horizon {
            return bad(format!(
                "videos of {} frames cannot cover context {} plus horizon {}",
                self.data.frames, t.context, t.horizon
            ));
        }
        if self.data.videos == 0 {
            return bad("data.videos must be positive".into());
        }
        let s: f64 = self.data.split.iter().sum();
        if self.data.split.iter().any(|f| !(0.0..=1.0).contains(f)) || (s - 1.0).abs() > 1e-9 {
            return bad(format!("split fractions {:?} must sum to 1", self.data.split));
        }
        if self.eval.samples == 0 || self.eval.best_of == 0 {
            return bad("eval.samples and eval.best_of must be positive".into());
        }
        self.loss_weights().validate()?;
        self.scene.validate()?;
        self.model_config().validate()
    }
}
