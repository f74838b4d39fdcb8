//! The disentangling querying transformer.
//!
//! Three learnable query sets (biometrics, motion, non-biometrics) run through
//! the same stack of layers: self-attention within the stream, cross-attention
//! over the projected video tokens (plus the stream's text token while
//! training), then a feed-forward block, each followed by residual + layer norm.
//! Streams are processed in separate passes; they share weights but never
//! see each other's activations.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Mat;
use crate::world::TextTriplet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stream {
    Biometrics,
    Motion,
    NonBiometrics,
}

impl Stream {
    pub const ALL: [Stream; 3] = [Stream::Biometrics, Stream::Motion, Stream::NonBiometrics];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Stream::Biometrics => "biometrics",
            Stream::Motion => "motion",
            Stream::NonBiometrics => "non_biometrics",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Infer,
}

/// Where the per-stream text embeddings come from.
pub trait TextSource {
    fn stream_text(&self, stream: Stream) -> &[f64];
}

impl TextSource for TextTriplet {
    fn stream_text(&self, stream: Stream) -> &[f64] {
        match stream {
            Stream::Biometrics => &self.biometrics,
            Stream::Motion => &self.motion,
            Stream::NonBiometrics => &self.non_biometrics,
        }
    }
}

/// A text source that panics when read. Inference paths are exercised with it
/// to show they never touch text.
#[derive(Clone, Copy, Debug, Default)]
pub struct PoisonedText;

impl TextSource for PoisonedText {
    fn stream_text(&self, stream: Stream) -> &[f64] {
        panic!("text for stream `{}` was read on a text-free path", stream.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisenQConfig {
    pub layers: usize,
    pub heads: usize,
    pub model_dim: usize,
    pub queries_per_stream: usize,
    pub text_dim: usize,
    pub visual_dim: usize,
    pub ffn_mult: usize,
    /// One visual/text input projection for all streams (true) or one per stream.
    pub share_input_projection: bool,
    /// Number of tokens each text embedding is split into (must divide `text_dim`).
    pub text_tokens: usize,
    /// Ablation: a single query set whose output stands in for all three features.
    pub single_stream: bool,
}

impl Default for DisenQConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            heads: 4,
            model_dim: 64,
            queries_per_stream: 4,
            text_dim: 16,
            visual_dim: 16,
            ffn_mult: 4,
            share_input_projection: true,
            text_tokens: 1,
            single_stream: false,
        }
    }
}

impl DisenQConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("layers", self.layers),
            ("heads", self.heads),
            ("model_dim", self.model_dim),
            ("queries_per_stream", self.queries_per_stream),
            ("text_dim", self.text_dim),
            ("visual_dim", self.visual_dim),
            ("ffn_mult", self.ffn_mult),
            ("text_tokens", self.text_tokens),
        ];
        for (name, v) in counts {
            if v < 1 {
                return Err(Error::InvalidConfig(format!("disenq.{name} must be >= 1")));
            }
        }
        if !self.model_dim.is_multiple_of(self.heads) {
            return Err(Error::InvalidConfig(format!("disenq.model_dim ({}) must be divisible by heads ({})", self.model_dim, self.heads)));
        }
        if !self.text_dim.is_multiple_of(self.text_tokens) {
            return Err(Error::InvalidConfig(format!("disenq.text_dim ({}) must be divisible by text_tokens ({})", self.text_dim, self.text_tokens)));
        }
        Ok(())
    }

    pub fn num_query_sets(&self) -> usize {
        if self.single_stream {
            1
        } else {
            3
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let std = (2.0 / (fan_in + fan_out) as f64).sqrt();
        Self { w: store.add(format!("{name}.w"), Mat::randn(fan_in, fan_out, std, rng)), b: store.add(format!("{name}.b"), Mat::zeros(1, fan_out)) }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.w);
        let b = g.param(store, self.b);
        let y = g.matmul(x, w);
        g.add_row(y, b)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Norm {
    pub gain: ParamId,
    pub bias: ParamId,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

impl Norm {
    fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self { gain: store.add(format!("{name}.gain"), Mat::filled(1, dim, 1.0)), bias: store.add(format!("{name}.bias"), Mat::zeros(1, dim)) }
    }

    fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let n = g.layer_norm(x, LAYER_NORM_EPS);
        let gain = g.param(store, self.gain);
        let bias = g.param(store, self.bias);
        let y = g.mul_row(n, gain);
        g.add_row(y, bias)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Attention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

impl Attention {
    fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, rng),
            o: Linear::new(store, &format!("{name}.o"), dim, dim, rng),
        }
    }

    /// Multi-head attention of `queries` over `context`. Returns the output
    /// projection and the per-head `Q × C` attention weights.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, heads: usize, queries: Var, context: Var) -> (Var, Vec<Var>) {
        let q = self.q.forward(g, store, queries);
        let k = self.k.forward(g, store, context);
        let v = self.v.forward(g, store, context);
        let dim = g.shape(q).1;
        let dh = dim / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut weights = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice_cols(q, h * dh, dh);
            let kh = g.slice_cols(k, h * dh, dh);
            let vh = g.slice_cols(v, h * dh, dh);
            let kt = g.transpose(kh);
            let s = g.matmul(qh, kt);
            let s = g.scale(s, scale);
            let a = g.softmax_rows(s);
            outs.push(g.matmul(a, vh));
            weights.push(a);
        }
        let merged = if heads == 1 { outs[0] } else { g.concat_cols(&outs) };
        (self.o.forward(g, store, merged), weights)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub self_attn: Attention,
    pub norm1: Norm,
    pub cross_attn: Attention,
    pub norm2: Norm,
    pub ffn_in: Linear,
    pub ffn_out: Linear,
    pub norm3: Norm,
}

/// Learnable query sets plus the shared layer stack and input projections.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QueryBank {
    pub config: DisenQConfig,
    /// `K × D_q` query matrices, indexed by [`Stream::index`] (one entry in
    /// single-stream mode).
    pub queries: Vec<ParamId>,
    pub layers: Vec<Layer>,
    /// Visual and text input projections; one entry when shared, else per stream.
    pub visual_proj: Vec<Linear>,
    pub text_proj: Vec<Linear>,
}

pub const QUERY_INIT_STD: f64 = 0.02;

impl QueryBank {
    pub fn new<R: Rng>(store: &mut ParamStore, config: DisenQConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let dq = config.model_dim;
        let queries = match config.single_stream {
            true => vec![store.add("disenq.queries.single", Mat::randn(config.queries_per_stream, dq, QUERY_INIT_STD, rng))],
            false => Stream::ALL
                .iter()
                .map(|s| store.add(format!("disenq.queries.{}", s.name()), Mat::randn(config.queries_per_stream, dq, QUERY_INIT_STD, rng)))
                .collect(),
        };
        let layers = (0..config.layers)
            .map(|l| {
                let p = format!("disenq.layer{l}");
                Layer {
                    self_attn: Attention::new(store, &format!("{p}.self_attn"), dq, rng),
                    norm1: Norm::new(store, &format!("{p}.norm1"), dq),
                    cross_attn: Attention::new(store, &format!("{p}.cross_attn"), dq, rng),
                    norm2: Norm::new(store, &format!("{p}.norm2"), dq),
                    ffn_in: Linear::new(store, &format!("{p}.ffn_in"), dq, dq * config.ffn_mult, rng),
                    ffn_out: Linear::new(store, &format!("{p}.ffn_out"), dq * config.ffn_mult, dq, rng),
                    norm3: Norm::new(store, &format!("{p}.norm3"), dq),
                }
            })
            .collect();
        let n_proj = if config.share_input_projection { 1 } else { config.num_query_sets() };
        let suffix = |i: usize| if n_proj == 1 { String::new() } else { format!(".{}", Stream::ALL[i].name()) };
        let token_text_dim = config.text_dim / config.text_tokens;
        let visual_proj = (0..n_proj).map(|i| Linear::new(store, &format!("disenq.visual_proj{}", suffix(i)), config.visual_dim, dq, rng)).collect();
        let text_proj = (0..n_proj).map(|i| Linear::new(store, &format!("disenq.text_proj{}", suffix(i)), token_text_dim, dq, rng)).collect();
        Ok(Self { config, queries, layers, visual_proj, text_proj })
    }

    fn query_index(&self, stream: Stream) -> usize {
        if self.config.single_stream {
            0
        } else {
            stream.index()
        }
    }

    fn proj_index(&self, stream: Stream) -> usize {
        if self.visual_proj.len() == 1 {
            0
        } else {
            self.query_index(stream)
        }
    }

    pub fn query_param(&self, stream: Stream) -> ParamId {
        self.queries[self.query_index(stream)]
    }

    /// Self-attention of one stream's queries over themselves, then residual
    /// and norm. Only `stream_queries` enter the attention context.
    pub fn self_attend_isolated(&self, g: &mut Graph, store: &ParamStore, layer: usize, stream_queries: Var) -> Result<Var> {
        self.check_queries(g, stream_queries)?;
        let l = &self.layers[layer];
        let (a, _) = l.self_attn.forward(g, store, self.config.heads, stream_queries, stream_queries);
        let r = g.add(stream_queries, a);
        Ok(l.norm1.forward(g, store, r))
    }

    /// Projects the video tokens (and, when given, the text embedding split
    /// into `text_tokens` tokens) into the key/value source for `stream`.
    pub fn project_context(&self, g: &mut Graph, store: &ParamStore, stream: Stream, video: Var, text: Option<&[f64]>) -> Result<Var> {
        let (_, d) = g.shape(video);
        if d != self.config.visual_dim {
            return Err(Error::DimMismatch { what: "video feature dim".into(), expected: self.config.visual_dim, got: d });
        }
        let p = self.proj_index(stream);
        let vis = self.visual_proj[p].forward(g, store, video);
        let Some(text) = text else { return Ok(vis) };
        if text.len() != self.config.text_dim {
            return Err(Error::DimMismatch { what: format!("{} text", stream.name()), expected: self.config.text_dim, got: text.len() });
        }
        let s = self.config.text_tokens;
        let t = g.input(Mat::from_vec(s, text.len() / s, text.to_vec()));
        let txt = self.text_proj[p].forward(g, store, t);
        Ok(g.concat_rows(&[vis, txt]))
    }

    /// Cross-attention of one stream's queries over a projected context, then
    /// residual and norm. Returns the updated queries and per-head weights.
    pub fn cross_attend(&self, g: &mut Graph, store: &ParamStore, layer: usize, stream_queries: Var, context: Var) -> Result<(Var, Vec<Var>)> {
        self.check_queries(g, stream_queries)?;
        let l = &self.layers[layer];
        let (a, weights) = l.cross_attn.forward(g, store, self.config.heads, stream_queries, context);
        let r = g.add(stream_queries, a);
        Ok((l.norm2.forward(g, store, r), weights))
    }

    fn feed_forward(&self, g: &mut Graph, store: &ParamStore, layer: usize, x: Var) -> Var {
        let l = &self.layers[layer];
        let h = l.ffn_in.forward(g, store, x);
        let h = g.gelu(h);
        let h = l.ffn_out.forward(g, store, h);
        let r = g.add(x, h);
        l.norm3.forward(g, store, r)
    }

    fn check_queries(&self, g: &Graph, q: Var) -> Result<()> {
        let (k, d) = g.shape(q);
        if d != self.config.model_dim || k == 0 {
            return Err(Error::DimMismatch { what: "stream queries".into(), expected: self.config.model_dim, got: d });
        }
        Ok(())
    }

    /// Runs one stream through every layer and mean-pools its queries into a
    /// `1 × D_q` feature.
    pub fn forward_stream(&self, g: &mut Graph, store: &ParamStore, stream: Stream, video: Var, text: Option<&[f64]>) -> Result<Var> {
        Ok(self.forward_stream_traced(g, store, stream, video, text)?.0)
    }

    /// As [`forward_stream`](Self::forward_stream), also returning each
    /// layer's cross-attention weights averaged over heads (`K × context`).
    pub fn forward_stream_traced(&self, g: &mut Graph, store: &ParamStore, stream: Stream, video: Var, text: Option<&[f64]>) -> Result<(Var, Vec<Mat>)> {
        let context = self.project_context(g, store, stream, video, text)?;
        let mut h = g.param(store, self.query_param(stream));
        let mut trace = Vec::with_capacity(self.layers.len());
        for layer in 0..self.layers.len() {
            h = self.self_attend_isolated(g, store, layer, h)?;
            let (next, weights) = self.cross_attend(g, store, layer, h, context)?;
            let mut avg = g.value(weights[0]).clone();
            for w in &weights[1..] {
                avg.add_assign(g.value(*w));
            }
            avg.scale_assign(1.0 / weights.len() as f64);
            trace.push(avg);
            h = self.feed_forward(g, store, layer, next);
        }
        Ok((g.mean_rows(h), trace))
    }

    /// Full forward over a pooled `N × D` video feature. In training mode the
    /// matching text embedding joins each stream's context; in inference mode
    /// `texts` is never read.
    pub fn forward(&self, g: &mut Graph, store: &ParamStore, video: Var, texts: Option<&dyn TextSource>, mode: Mode) -> Result<StreamVars> {
        let texts = match mode {
            Mode::Train => Some(texts.ok_or_else(|| Error::MissingText("training-mode forward needs a text triplet".into()))?),
            Mode::Infer => None,
        };
        if self.config.single_stream {
            let text = texts.map(|t| t.stream_text(Stream::Biometrics));
            let f = self.forward_stream(g, store, Stream::Biometrics, video, text)?;
            return Ok(StreamVars { biometrics: f, motion: f, non_biometrics: f });
        }
        let mut out = [None; 3];
        for s in Stream::ALL {
            let text = texts.map(|t| t.stream_text(s));
            out[s.index()] = Some(self.forward_stream(g, store, s, video, text)?);
        }
        let [b, m, nb] = out.map(|v| v.expect("all streams run"));
        Ok(StreamVars { biometrics: b, motion: m, non_biometrics: nb })
    }
}

/// Graph handles of the three pooled `1 × D_q` stream features.
#[derive(Clone, Copy, Debug)]
pub struct StreamVars {
    pub biometrics: Var,
    pub motion: Var,
    pub non_biometrics: Var,
}

impl StreamVars {
    pub fn get(&self, s: Stream) -> Var {
        match s {
            Stream::Biometrics => self.biometrics,
            Stream::Motion => self.motion,
            Stream::NonBiometrics => self.non_biometrics,
        }
    }

    pub fn values(&self, g: &Graph) -> DisentangledFeatures {
        DisentangledFeatures {
            biometrics: g.value(self.biometrics).data.clone(),
            motion: g.value(self.motion).data.clone(),
            non_biometrics: g.value(self.non_biometrics).data.clone(),
        }
    }
}

/// Pooled per-clip features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentangledFeatures {
    pub biometrics: Vec<f64>,
    pub motion: Vec<f64>,
    pub non_biometrics: Vec<f64>,
}

impl DisentangledFeatures {
    pub fn get(&self, s: Stream) -> &[f64] {
        match s {
            Stream::Biometrics => &self.biometrics,
            Stream::Motion => &self.motion,
            Stream::NonBiometrics => &self.non_biometrics,
        }
    }

    pub fn is_finite(&self) -> bool {
        Stream::ALL.iter().all(|&s| self.get(s).iter().all(|x| x.is_finite()))
    }
}
