//! Frame embedding and temporal attention pooling.
//!
//! Frames enter as `N × D` token matrices. Each frame is linearly projected and
//! receives a learned position embedding for its frame index; pooling then
//! collapses the time axis separately at every token position, so the video
//! feature keeps its `N × D` token layout.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub token_dim: usize,
    pub tokens_per_frame: usize,
    /// Longest clip the position table covers.
    pub max_frames: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub positions: ParamId,
    pub pool_query: ParamId,
}

/// Pooled `N × D` video feature.
#[derive(Clone, Debug, PartialEq)]
pub struct VideoFeature {
    pub tokens: Mat,
}

impl Encoder {
    /// Identity projection, zero position table and zero pooling query, so an
    /// untrained encoder averages raw frames uniformly.
    pub fn new<R: Rng>(store: &mut ParamStore, config: EncoderConfig, _rng: &mut R) -> Self {
        let d = config.token_dim;
        let proj_w = store.add("encoder.proj.w", Mat::identity(d));
        let proj_b = store.add("encoder.proj.b", Mat::zeros(1, d));
        let positions = store.add("encoder.positions", Mat::zeros(config.max_frames, d));
        let pool_query = store.add("encoder.pool_query", Mat::zeros(d, 1));
        Self { config, proj_w, proj_b, positions, pool_query }
    }

    /// Projected, position-embedded tokens, one `N × D` node per frame.
    pub fn embed_frames(&self, g: &mut Graph, store: &ParamStore, frames: &[Mat]) -> Result<Vec<Var>> {
        if frames.is_empty() {
            return Err(Error::Empty("clip has no frames".into()));
        }
        if frames.len() > self.config.max_frames {
            return Err(Error::DimMismatch { what: "frame count (position table size)".into(), expected: self.config.max_frames, got: frames.len() });
        }
        let d = self.config.token_dim;
        let w = g.param(store, self.proj_w);
        let b = g.param(store, self.proj_b);
        let pos = g.param(store, self.positions);
        frames
            .iter()
            .enumerate()
            .map(|(t, f)| {
                if f.cols != d {
                    return Err(Error::DimMismatch { what: "frame token dim".into(), expected: d, got: f.cols });
                }
                let x = g.input(f.clone());
                let y = g.matmul(x, w);
                let y = g.add_row(y, b);
                let p = g.slice_rows(pos, t, 1);
                Ok(g.add_row(y, p))
            })
            .collect()
    }

    /// Attention pooling over time at each token position. Returns the pooled
    /// `N × D` feature and the `N × T` attention weights.
    pub fn temporal_pool(&self, g: &mut Graph, store: &ParamStore, frames: &[Var]) -> Result<(Var, Var)> {
        let Some(&first) = frames.first() else {
            return Err(Error::Empty("temporal pooling needs at least one frame".into()));
        };
        let shape = g.shape(first);
        if frames.iter().any(|&f| g.shape(f) != shape) {
            return Err(Error::InvalidBatch("frames have inconsistent token shapes".into()));
        }
        let q = g.param(store, self.pool_query);
        let scores: Vec<Var> = frames.iter().map(|&f| g.matmul(f, q)).collect();
        let scores = g.concat_cols(&scores);
        let weights = g.softmax_rows(scores);
        let mut pooled = None;
        for (t, &f) in frames.iter().enumerate() {
            let w_t = g.slice_cols(weights, t, 1);
            let term = g.mul_col(f, w_t);
            pooled = Some(match pooled {
                None => term,
                Some(acc) => g.add(acc, term),
            });
        }
        Ok((pooled.expect("non-empty"), weights))
    }

    pub fn encode(&self, g: &mut Graph, store: &ParamStore, frames: &[Mat]) -> Result<Var> {
        let embedded = self.embed_frames(g, store, frames)?;
        Ok(self.temporal_pool(g, store, &embedded)?.0)
    }

    /// Forward pass without keeping the tape.
    pub fn video_feature(&self, store: &ParamStore, frames: &[Mat]) -> Result<VideoFeature> {
        let mut g = Graph::new();
        let f = self.encode(&mut g, store, frames)?;
        Ok(VideoFeature { tokens: g.value(f).clone() })
    }
}
