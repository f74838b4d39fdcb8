//! The full network: temporal encoder, query bank, training heads and the
//! similarity weigher, all over one parameter store.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::disenq::{DisenQConfig, DisentangledFeatures, Mode, PoisonedText, QueryBank, StreamVars, TextSource};
use crate::encoder::{Encoder, EncoderConfig};
use crate::error::{Error, Result};
use crate::identification::AdaptiveWeigher;
use crate::losses::ClassifierHead;
use crate::params::ParamStore;
use crate::tensor::Mat;
use crate::world::{rng_for, sample_frame_indices, Dataset, VideoSample};

/// How many frames a clip contributes and how far apart they are.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSampling {
    pub frames: usize,
    pub stride: usize,
}

impl Default for FrameSampling {
    fn default() -> Self {
        Self { frames: 8, stride: 4 }
    }
}

impl FrameSampling {
    /// Training picks a random start; evaluation centres the window.
    pub fn indices<R: Rng>(&self, available: usize, rng: Option<&mut R>) -> Vec<usize> {
        if available <= self.frames {
            return (0..available).collect();
        }
        match rng {
            Some(rng) => sample_frame_indices(available, self.frames, self.stride, rng),
            None => {
                let span = (self.frames - 1) * self.stride + 1;
                let start = available.saturating_sub(span) / 2;
                (0..self.frames).map(|k| (start + k * self.stride).min(available - 1)).collect()
            }
        }
    }

    pub fn select<R: Rng>(&self, frames: &[Mat], rng: Option<&mut R>) -> Vec<Mat> {
        self.indices(frames.len(), rng).into_iter().map(|i| frames[i].clone()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub encoder: EncoderConfig,
    pub disenq: DisenQConfig,
    pub sampling: FrameSampling,
    pub num_identities: usize,
    pub num_actions: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.disenq.validate()?;
        if self.encoder.token_dim != self.disenq.visual_dim {
            return Err(Error::InvalidConfig(format!(
                "encoder token_dim {} differs from disenq visual_dim {}",
                self.encoder.token_dim, self.disenq.visual_dim
            )));
        }
        if self.sampling.frames == 0 || self.sampling.stride == 0 || self.sampling.frames > self.encoder.max_frames {
            return Err(Error::InvalidConfig("frame sampling must pick 1..=max_frames frames with stride >= 1".into()));
        }
        if self.num_identities == 0 || self.num_actions == 0 {
            return Err(Error::InvalidConfig("heads need at least one identity and one action".into()));
        }
        Ok(())
    }
}

pub mod streams {
    pub const MODEL_INIT: u64 = 10;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub config: ModelConfig,
    pub store: ParamStore,
    pub encoder: Encoder,
    pub bank: QueryBank,
    pub heads: ClassifierHead,
    pub weigher: AdaptiveWeigher,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng_for(seed, streams::MODEL_INIT);
        let mut store = ParamStore::default();
        let encoder = Encoder::new(&mut store, config.encoder.clone(), &mut rng);
        let bank = QueryBank::new(&mut store, config.disenq.clone(), &mut rng)?;
        let heads = ClassifierHead::new(&mut store, config.disenq.model_dim, config.num_identities, config.num_actions, &mut rng);
        let weigher = AdaptiveWeigher::new(&mut store, &mut rng);
        Ok(Self { config, store, encoder, bank, heads, weigher })
    }

    /// Checks that a dataset's shapes and label ranges fit this model.
    pub fn check_dataset(&self, dataset: &Dataset) -> Result<()> {
        let mismatch = |what: &str, expected, got| Err(Error::DimMismatch { what: what.into(), expected, got });
        if dataset.token_dim != self.config.encoder.token_dim {
            return mismatch("dataset token_dim", self.config.encoder.token_dim, dataset.token_dim);
        }
        if dataset.tokens_per_frame != self.config.encoder.tokens_per_frame {
            return mismatch("dataset tokens_per_frame", self.config.encoder.tokens_per_frame, dataset.tokens_per_frame);
        }
        if let Some(dt) = dataset.text_dim {
            if dt != self.config.disenq.text_dim {
                return mismatch("dataset text_dim", self.config.disenq.text_dim, dt);
            }
        }
        Ok(())
    }

    pub fn forward(&self, g: &mut Graph, frames: &[Mat], texts: Option<&dyn TextSource>, mode: Mode) -> Result<StreamVars> {
        let video = self.encoder.encode(g, &self.store, frames)?;
        self.bank.forward(g, &self.store, video, texts, mode)
    }

    /// Text-free features. Any read of the text slot faults.
    pub fn infer(&self, frames: &[Mat]) -> Result<DisentangledFeatures> {
        let mut g = Graph::new();
        let v = self.forward(&mut g, frames, Some(&PoisonedText), Mode::Infer)?;
        let f = v.values(&g);
        if !f.is_finite() {
            return Err(Error::NonFinite("inference features".into()));
        }
        Ok(f)
    }

    pub fn infer_sample(&self, sample: &VideoSample) -> Result<DisentangledFeatures> {
        self.infer(&self.config.sampling.select::<rand_chacha::ChaCha8Rng>(&sample.frames, None))
    }

    /// Text-free features of every sample, in sample order.
    pub fn infer_all(&self, dataset: &Dataset) -> Result<Vec<DisentangledFeatures>> {
        self.check_dataset(dataset)?;
        dataset.samples.par_iter().map(|s| self.infer_sample(s)).collect()
    }
}
