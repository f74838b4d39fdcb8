//! Disentanglement diagnostics: InfoNCE mutual-information lower bounds,
//! linear leakage probes, orthogonality statistics and embedding export.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{log_sum_exp, Graph};
use crate::disenq::{DisentangledFeatures, Stream};
use crate::error::{Error, Result};
use crate::optim::{AdamW, AdamWConfig};
use crate::params::{GradBuffer, ParamStore};
use crate::tensor::{cosine, Mat};
use crate::world::Dataset;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MIEstimate {
    pub pair: String,
    /// `max(0, ln B − held-out InfoNCE loss)`, in nats. Zero is itself a
    /// valid bound, and the held-out loss of an overfit critic can exceed
    /// `ln B`.
    pub lower_bound: f64,
    /// `ln B − held-out InfoNCE loss` before clamping.
    pub raw_bound: f64,
    pub matched_loss: f64,
    /// Held-out loss with `Y` shuffled against `X`; the independence reference.
    pub mismatched_loss: f64,
    pub batch_size: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InfoNceConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Fraction of pairs held out for the reported estimate.
    pub holdout: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for InfoNceConfig {
    fn default() -> Self {
        Self { steps: 200, batch_size: 64, lr: 0.003, holdout: 0.2, weight_decay: 0.0, seed: 0 }
    }
}

/// Per-dimension z-scoring with statistics from `fit`.
fn standardizer(fit: &[&[f64]]) -> (Vec<f64>, Vec<f64>) {
    let d = fit[0].len();
    let n = fit.len() as f64;
    let mut mean = vec![0.0; d];
    for x in fit {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for x in fit {
        for ((s, v), m) in std.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    (mean, std.into_iter().map(|s| s.sqrt().max(1e-8)).collect())
}

fn standardized(rows: &[&[f64]], stats: &(Vec<f64>, Vec<f64>)) -> Mat {
    let data = rows.iter().flat_map(|x| x.iter().zip(&stats.0).zip(&stats.1).map(|((v, m), s)| (v - m) / s)).collect();
    Mat::from_vec(rows.len(), rows[0].len(), data)
}

fn pick<'a>(src: &[&'a [f64]], idx: &[usize]) -> Vec<&'a [f64]> {
    idx.iter().map(|&i| src[i]).collect()
}

/// Mean InfoNCE loss of a bilinear critic over consecutive full batches.
fn infonce_loss(w: &Mat, x: &Mat, y: &Mat, batch: usize) -> f64 {
    let batches = x.rows / batch;
    let mut total = 0.0;
    for b in 0..batches {
        let xb = x.slice_rows(b * batch, batch);
        let yb = y.slice_rows(b * batch, batch);
        let scores = xb.matmul(w).matmul_t(&yb);
        for i in 0..batch {
            total += log_sum_exp(scores.row(i)) - scores.get(i, i);
        }
    }
    total / (batches * batch) as f64
}

/// Trains a bilinear critic `xᵀWy` on the InfoNCE objective and reports the
/// held-out lower bound `ln B − loss`.
pub fn infonce_mi(pair: &str, x: &[&[f64]], y: &[&[f64]], cfg: &InfoNceConfig) -> Result<MIEstimate> {
    let b = cfg.batch_size;
    if x.len() != y.len() {
        return Err(Error::InvalidBatch("InfoNCE needs aligned X and Y".into()));
    }
    let n = x.len();
    let n_eval = ((n as f64 * cfg.holdout).round() as usize).max(b);
    if b < 2 || n < n_eval + b {
        return Err(Error::InsufficientData(format!("InfoNCE with batch {b} needs at least {} pairs, got {n}", n_eval + b)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let (eval_idx, train_idx) = order.split_at(n_eval);
    let (xt, yt) = (pick(x, train_idx), pick(y, train_idx));
    let (sx, sy) = (standardizer(&xt), standardizer(&yt));
    let x_train = standardized(&xt, &sx);
    let y_train = standardized(&yt, &sy);
    let x_eval = standardized(&pick(x, eval_idx), &sx);
    let y_eval = standardized(&pick(y, eval_idx), &sy);

    let mut store = ParamStore::default();
    let w_id = store.add("critic", Mat::zeros(x_train.cols, y_train.cols));
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: cfg.weight_decay, ..Default::default() }, &store);
    let labels: Vec<usize> = (0..b).collect();
    let rows: Vec<usize> = (0..x_train.rows).collect();
    for _ in 0..cfg.steps {
        let batch: Vec<usize> = rows.choose_multiple(&mut rng, b).copied().collect();
        let xb = Mat::from_rows(&batch.iter().map(|&i| x_train.row(i).to_vec()).collect::<Vec<_>>());
        let yb = Mat::from_rows(&batch.iter().map(|&i| y_train.row(i).to_vec()).collect::<Vec<_>>());
        let mut g = Graph::new();
        let xv = g.input(xb);
        let yv = g.input(yb);
        let w = g.param(&store, w_id);
        let xw = g.matmul(xv, w);
        let yt = g.transpose(yv);
        let scores = g.matmul(xw, yt);
        let loss = g.cross_entropy(scores, labels.clone());
        let mut grads = GradBuffer::zeros_like(&store);
        g.accumulate_params(&g.backward_scalar(loss), &mut grads);
        opt.step(&mut store, &grads);
    }
    let w = store.value(w_id);
    let matched = infonce_loss(w, &x_eval, &y_eval, b);
    let mut perm: Vec<usize> = (0..y_eval.rows).collect();
    perm.shuffle(&mut rng);
    let y_shuffled = Mat::from_rows(&perm.iter().map(|&i| y_eval.row(i).to_vec()).collect::<Vec<_>>());
    let mismatched = infonce_loss(w, &x_eval, &y_shuffled, b);
    if !matched.is_finite() {
        return Err(Error::NonFinite(format!("InfoNCE loss for {pair}")));
    }
    Ok(MIEstimate {
        pair: pair.into(),
        lower_bound: ((b as f64).ln() - matched).max(0.0),
        raw_bound: (b as f64).ln() - matched,
        matched_loss: matched,
        mismatched_loss: mismatched,
        batch_size: b,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub feature: String,
    pub target: String,
    pub accuracy: f64,
    pub chance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub folds: usize,
    pub steps: usize,
    pub lr: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self { folds: 5, steps: 300, lr: 0.05, l2: 1e-3, seed: 0 }
    }
}

pub const MIN_PER_CLASS: usize = 5;

/// Multinomial logistic regression on standardized features, full-batch
/// Adam. Returns `(W, b)` with `W: D × C`.
fn fit_logistic(x: &Mat, y: &[usize], classes: usize, cfg: &ProbeConfig) -> (Mat, Vec<f64>) {
    let mut store = ParamStore::default();
    let w = store.add("w", Mat::zeros(x.cols, classes));
    let b = store.add("b", Mat::zeros(1, classes));
    let mut opt = AdamW::new(AdamWConfig { lr: cfg.lr, weight_decay: 0.0, ..Default::default() }, &store);
    for _ in 0..cfg.steps {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.param(&store, w);
        let bv = g.param(&store, b);
        let z = g.matmul(xv, wv);
        let z = g.add_row(z, bv);
        let ce = g.cross_entropy(z, y.to_vec());
        let sq = g.mul(wv, wv);
        let reg = g.sum_all(sq);
        let reg = g.scale(reg, cfg.l2);
        let loss = g.add(ce, reg);
        let mut grads = GradBuffer::zeros_like(&store);
        g.accumulate_params(&g.backward_scalar(loss), &mut grads);
        opt.step(&mut store, &grads);
    }
    (store.value(w).clone(), store.value(b).data.clone())
}

/// k-fold cross-validated linear probe accuracy. Folds are stratified by
/// label; chance is the majority-class frequency.
pub fn leakage_probe(feature: &str, target: &str, features: &[&[f64]], labels: &[usize], cfg: &ProbeConfig) -> Result<ProbeResult> {
    if features.len() != labels.len() || features.is_empty() {
        return Err(Error::InvalidBatch("probe needs one label per feature vector".into()));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_class.entry(y).or_default().push(i);
    }
    if by_class.len() < 2 {
        return Err(Error::InsufficientData(format!("probe for {target} needs >= 2 classes")));
    }
    if let Some((c, v)) = by_class.iter().find(|(_, v)| v.len() < MIN_PER_CLASS.max(cfg.folds)) {
        return Err(Error::InsufficientData(format!("class {c} of {target} has {} samples; probe needs >= {}", v.len(), MIN_PER_CLASS.max(cfg.folds))));
    }
    let dense: BTreeMap<usize, usize> = by_class.keys().enumerate().map(|(k, &c)| (c, k)).collect();
    let classes = dense.len();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut fold = vec![0usize; labels.len()];
    for members in by_class.values() {
        let mut m = members.clone();
        m.shuffle(&mut rng);
        let offset = rand::Rng::gen_range(&mut rng, 0..cfg.folds);
        for (k, &i) in m.iter().enumerate() {
            fold[i] = (k + offset) % cfg.folds;
        }
    }
    let mut correct = 0usize;
    for f in 0..cfg.folds {
        let train: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] != f).collect();
        let test: Vec<usize> = (0..labels.len()).filter(|&i| fold[i] == f).collect();
        let rows = |idx: &[usize]| idx.iter().map(|&i| features[i]).collect::<Vec<&[f64]>>();
        let stats = standardizer(&rows(&train));
        let xt = standardized(&rows(&train), &stats);
        let yt: Vec<usize> = train.iter().map(|&i| dense[&labels[i]]).collect();
        let (w, b) = fit_logistic(&xt, &yt, classes, cfg);
        let xe = standardized(&rows(&test), &stats);
        let z = xe.matmul(&w);
        for (r, &i) in test.iter().enumerate() {
            let row: Vec<f64> = z.row(r).iter().zip(&b).map(|(a, c)| a + c).collect();
            let pred = (0..classes).fold(0, |best, k| if row[k] > row[best] { k } else { best });
            correct += usize::from(pred == dense[&labels[i]]);
        }
    }
    let majority = by_class.values().map(Vec::len).max().unwrap_or(0);
    Ok(ProbeResult {
        feature: feature.into(),
        target: target.into(),
        accuracy: correct as f64 / labels.len() as f64,
        chance: majority as f64 / labels.len() as f64,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityStats {
    pub mean_abs_cos: f64,
    pub max_abs_cos: f64,
    pub count: usize,
}

pub fn orthogonality_stats(biometrics: &[&[f64]], non_biometrics: &[&[f64]]) -> Result<OrthogonalityStats> {
    if biometrics.len() != non_biometrics.len() || biometrics.is_empty() {
        return Err(Error::InvalidBatch("orthogonality stats need aligned, non-empty sets".into()));
    }
    let c: Vec<f64> = biometrics.iter().zip(non_biometrics).map(|(a, b)| cosine(a, b).abs()).collect();
    Ok(OrthogonalityStats { mean_abs_cos: c.iter().sum::<f64>() / c.len() as f64, max_abs_cos: c.iter().copied().fold(0.0, f64::max), count: c.len() })
}

/// Per-clip labels written next to an embedding export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLabel {
    pub clip_id: String,
    pub identity: usize,
    pub action: usize,
    pub clothing: usize,
    pub view: usize,
}

pub const EMBEDDING_VERSION: u32 = 1;

pub fn labels_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".labels.json");
    PathBuf::from(s)
}

/// Writes `N × 3 × D` float32 features (biometrics, motion, non-biometrics)
/// after a `[N, 3, D, version]` u32 header, plus a labels sidecar.
pub fn export_embeddings(features: &[DisentangledFeatures], dataset: &Dataset, path: &Path) -> Result<()> {
    if features.is_empty() {
        return Err(Error::Empty("no embeddings to export".into()));
    }
    if features.len() != dataset.samples.len() {
        return Err(Error::InvalidBatch("one feature triple per sample required".into()));
    }
    let d = features[0].biometrics.len();
    let mut buf = Vec::with_capacity(16 + features.len() * 3 * d * 4);
    for h in [features.len() as u32, 3, d as u32, EMBEDDING_VERSION] {
        buf.extend_from_slice(&h.to_le_bytes());
    }
    for f in features {
        for s in Stream::ALL {
            let v = f.get(s);
            if v.len() != d {
                return Err(Error::DimMismatch { what: "embedding width".into(), expected: d, got: v.len() });
            }
            for &x in v {
                buf.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    let labels: Vec<EmbeddingLabel> = dataset
        .samples
        .iter()
        .map(|s| EmbeddingLabel { clip_id: s.clip_id.clone(), identity: s.identity, action: s.action, clothing: s.clothing, view: s.view })
        .collect();
    std::fs::write(labels_path(path), serde_json::to_vec_pretty(&labels)?)?;
    Ok(())
}

/// `[biometrics, motion, non_biometrics]` per clip, as stored in an export.
pub type ClipEmbeddings = Vec<[Vec<f32>; 3]>;

pub fn read_embeddings(path: &Path) -> Result<(ClipEmbeddings, Vec<EmbeddingLabel>)> {
    let bytes = std::fs::read(path)?;
    let bad = |msg: &str| Error::manifest(path, msg);
    if bytes.len() < 16 {
        return Err(bad("truncated header"));
    }
    let h: Vec<usize> = bytes[..16].chunks(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize).collect();
    if h[1] != 3 || h[3] != EMBEDDING_VERSION as usize {
        return Err(bad("unexpected embedding header"));
    }
    let (n, d) = (h[0], h[2]);
    if bytes.len() != 16 + n * 3 * d * 4 {
        return Err(bad("payload size does not match header"));
    }
    let floats: Vec<f32> = bytes[16..].chunks(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    let rows = floats.chunks(3 * d).map(|r| [r[..d].to_vec(), r[d..2 * d].to_vec(), r[2 * d..].to_vec()]).collect();
    let labels: Vec<EmbeddingLabel> = serde_json::from_slice(&std::fs::read(labels_path(path))?)?;
    if labels.len() != n {
        return Err(bad("labels sidecar length differs from embedding count"));
    }
    Ok((rows, labels))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub mutual_information: Vec<MIEstimate>,
    pub probes: Vec<ProbeResult>,
    pub orthogonality: OrthogonalityStats,
}

/// Feature pairs whose mutual information the report estimates.
pub const MI_PAIRS: [(Stream, Stream); 6] = [
    (Stream::Biometrics, Stream::Biometrics),
    (Stream::Motion, Stream::Motion),
    (Stream::Biometrics, Stream::NonBiometrics),
    (Stream::Motion, Stream::NonBiometrics),
    (Stream::Biometrics, Stream::Motion),
    (Stream::NonBiometrics, Stream::NonBiometrics),
];

pub fn pair_name(a: Stream, b: Stream) -> String {
    format!("{}~{}", a.name(), b.name())
}

/// Full suite over a set of clips: MI for [`MI_PAIRS`], identity and action
/// probes on every stream, and F_b / F_b̂ orthogonality.
pub fn diagnose(features: &[DisentangledFeatures], dataset: &Dataset, clips: &[usize], mi: &InfoNceConfig, probe: &ProbeConfig) -> Result<DiagnosticsReport> {
    let col = |s: Stream| clips.iter().map(|&i| features[i].get(s)).collect::<Vec<&[f64]>>();
    let mut mutual_information = Vec::new();
    for (a, b) in MI_PAIRS {
        mutual_information.push(infonce_mi(&pair_name(a, b), &col(a), &col(b), mi)?);
    }
    let identity: Vec<usize> = clips.iter().map(|&i| dataset.samples[i].identity).collect();
    let action: Vec<usize> = clips.iter().map(|&i| dataset.samples[i].action).collect();
    let mut probes = Vec::new();
    for s in Stream::ALL {
        probes.push(leakage_probe(s.name(), "identity", &col(s), &identity, probe)?);
        probes.push(leakage_probe(s.name(), "action", &col(s), &action, probe)?);
    }
    let orthogonality = orthogonality_stats(&col(Stream::Biometrics), &col(Stream::NonBiometrics))?;
    Ok(DiagnosticsReport { mutual_information, probes, orthogonality })
}

impl DiagnosticsReport {
    pub fn mi(&self, a: Stream, b: Stream) -> Option<f64> {
        let name = pair_name(a, b);
        self.mutual_information.iter().find(|m| m.pair == name).map(|m| m.lower_bound)
    }

    pub fn probe(&self, feature: Stream, target: &str) -> Option<&ProbeResult> {
        self.probes.iter().find(|p| p.feature == feature.name() && p.target == target)
    }
}
