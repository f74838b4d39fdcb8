//! Run configuration: one TOML file holding the world, model, objective,
//! optimizer, schedule and evaluation settings.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::disenq::DisenQConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::identification::Fusion;
use crate::losses::LossWeights;
use crate::model::{FrameSampling, ModelConfig};
use crate::optim::AdamWConfig;
use crate::world::{Dataset, Protocol, WorldSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct ModelSettings {
    pub disenq: DisenQConfig,
    /// Real clips are subsampled to `frames` frames `stride` apart; synthetic
    /// clips already have exactly `frames` frames.
    pub sampling: FrameSampling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// P in PK sampling.
    pub identities_per_batch: usize,
    /// K in PK sampling.
    pub clips_per_identity: usize,
    /// Worker threads for per-clip forward/backward; 0 uses every core.
    /// Results do not depend on this value.
    pub workers: usize,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self { epochs: 60, identities_per_batch: 8, clips_per_identity: 4, workers: 0 }
    }
}

impl TrainingConfig {
    pub fn batch_size(&self) -> usize {
        self.identities_per_batch * self.clips_per_identity
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub protocols: Vec<Protocol>,
    pub fusion: Fusion,
    pub plots: bool,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        Self { protocols: Protocol::ALL.to_vec(), fusion: Fusion::Adaptive, plots: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
#[derive(Default)]
pub struct RunConfig {
    /// Seeds model initialisation, identity split and batch sampling.
    pub seed: u64,
    /// Default directory for run artifacts; overridden on the command line.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub world: WorldSpec,
    pub model: ModelSettings,
    pub loss: LossWeights,
    pub optimizer: AdamWConfig,
    pub training: TrainingConfig,
    pub evaluation: EvaluationConfig,
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.disenq.validate()?;
        self.loss.validate()?;
        let o = &self.optimizer;
        let ok = o.lr > 0.0
            && (0.0..1.0).contains(&o.beta1)
            && (0.0..1.0).contains(&o.beta2)
            && o.eps > 0.0
            && o.weight_decay >= 0.0
            && [o.lr, o.eps, o.weight_decay].iter().all(|x| x.is_finite());
        if !ok {
            return Err(Error::InvalidConfig("optimizer settings out of range".into()));
        }
        let t = &self.training;
        if t.epochs == 0 || t.identities_per_batch < 2 || t.clips_per_identity < 2 {
            return Err(Error::InvalidConfig("training needs epochs >= 1, P >= 2 and K >= 2".into()));
        }
        if self.evaluation.protocols.is_empty() {
            return Err(Error::InvalidConfig("evaluation.protocols is empty".into()));
        }
        if let Fusion::Fixed { biometrics, motion } = self.evaluation.fusion {
            if biometrics < 0.0 || motion < 0.0 || (biometrics + motion - 1.0).abs() > 1e-6 {
                return Err(Error::InvalidConfig("fixed fusion weights must be non-negative and sum to 1".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// SHA-256 of the settings a checkpoint depends on. Output location,
    /// evaluation settings, epoch budget and worker count are left out so a
    /// run can be extended or evaluated differently.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = None;
        c.evaluation = EvaluationConfig::default();
        c.training.epochs = 1;
        c.training.workers = 0;
        hex(&Sha256::digest(c.to_toml().as_bytes()))
    }

    /// Model shapes for a dataset; errors when the configured dims disagree
    /// with the data.
    pub fn model_config(&self, dataset: &Dataset) -> Result<ModelConfig> {
        let d = &self.model.disenq;
        if d.visual_dim != dataset.token_dim {
            return Err(Error::DimMismatch { what: "model.disenq.visual_dim vs dataset token_dim".into(), expected: dataset.token_dim, got: d.visual_dim });
        }
        if let Some(dt) = dataset.text_dim {
            if dt != d.text_dim {
                return Err(Error::DimMismatch { what: "model.disenq.text_dim vs dataset text_dim".into(), expected: dt, got: d.text_dim });
            }
        }
        let config = ModelConfig {
            encoder: EncoderConfig { token_dim: dataset.token_dim, tokens_per_frame: dataset.tokens_per_frame, max_frames: self.model.sampling.frames },
            disenq: d.clone(),
            sampling: self.model.sampling,
            num_identities: dataset.num_identities,
            num_actions: dataset.num_actions,
        };
        config.validate()?;
        Ok(config)
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
