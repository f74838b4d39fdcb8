//! Training loop. Each clip gets its own forward graph up to the three stream
//! features; the batch objective runs on a second graph over the stacked
//! features, and its feature gradients seed the per-clip backward passes.
//! Per-clip work fans out over a thread pool and is reduced in batch order,
//! so results do not depend on the number of workers.

use std::collections::BTreeSet;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autograd::Graph;
use crate::config::RunConfig;
use crate::disenq::{DisentangledFeatures, Mode, StreamVars};
use crate::error::{Error, Result};
use crate::identification::{batch_pairs, verification_loss};
use crate::losses::{cross_entropy, orthogonality_loss, pk_sample, total_loss, triplet_loss, LossComponents, LossTerms, LossWeights};
use crate::model::Model;
use crate::optim::AdamW;
use crate::params::GradBuffer;
use crate::tensor::Mat;
use crate::world::{rng_for, split_identities, Dataset};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub identity: f64,
    pub triplet: f64,
    pub orthogonality: f64,
    pub action: f64,
    pub verification: f64,
    pub total: f64,
    pub batches: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: AdamW,
    pub epochs_done: usize,
}

impl TrainState {
    pub fn new(cfg: &RunConfig, dataset: &Dataset) -> Result<Self> {
        let model = Model::new(cfg.model_config(dataset)?, cfg.seed)?;
        let optimizer = AdamW::new(cfg.optimizer.clone(), &model.store);
        Ok(Self { model, optimizer, epochs_done: 0 })
    }
}

#[derive(Clone, Debug)]
pub struct BatchOutcome {
    pub components: LossComponents,
    pub verification: f64,
    pub total: f64,
    pub grads: GradBuffer,
}

const EPOCH_STREAM_BASE: u64 = 1 << 20;

/// Batch sampling and frame selection randomness for one epoch, derived from
/// the run seed alone so a resumed run replays the same draws.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    rng_for(seed, EPOCH_STREAM_BASE + epoch as u64)
}

/// Sample indices of the training identities.
pub fn training_indices(dataset: &Dataset, seed: u64) -> Result<Vec<usize>> {
    let (train_ids, _) = split_identities(dataset, seed)?;
    let train_ids: BTreeSet<usize> = train_ids.into_iter().collect();
    Ok((0..dataset.samples.len()).filter(|&i| train_ids.contains(&dataset.samples[i].identity)).collect())
}

struct ClipPass {
    graph: Graph,
    vars: StreamVars,
    features: DisentangledFeatures,
}

fn clip_pass(model: &Model, dataset: &Dataset, index: usize, frames: &[usize]) -> Result<ClipPass> {
    let sample = &dataset.samples[index];
    let text = sample.text.as_ref().ok_or_else(|| Error::MissingText(format!("clip {} has no text triplet", sample.clip_id)))?;
    let frames: Vec<Mat> = frames.iter().map(|&t| sample.frames[t].clone()).collect();
    let mut graph = Graph::new();
    let vars = model.forward(&mut graph, &frames, Some(text), Mode::Train)?;
    let features = vars.values(&graph);
    Ok(ClipPass { graph, vars, features })
}

/// Loss and summed parameter gradients for one batch. `frames[k]` lists the
/// frame indices used for `batch[k]`.
pub fn batch_gradients(model: &Model, dataset: &Dataset, batch: &[usize], frames: &[Vec<usize>], weights: &LossWeights) -> Result<BatchOutcome> {
    let passes: Vec<ClipPass> = batch.par_iter().zip(frames.par_iter()).map(|(&i, f)| clip_pass(model, dataset, i, f)).collect::<Result<_>>()?;
    let ids: Vec<usize> = batch.iter().map(|&i| dataset.samples[i].identity).collect();
    let actions: Vec<usize> = batch.iter().map(|&i| dataset.samples[i].action).collect();

    let stack = |pick: fn(&DisentangledFeatures) -> &Vec<f64>| {
        let rows: Vec<Vec<f64>> = passes.iter().map(|p| pick(&p.features).clone()).collect();
        Mat::from_rows(&rows)
    };
    let store = &model.store;
    let mut g = Graph::new();
    let fb = g.input(stack(|f| &f.biometrics));
    let fm = g.input(stack(|f| &f.motion));
    let fnb = g.input(stack(|f| &f.non_biometrics));
    let id_logits = model.heads.identity.forward(&mut g, store, fb);
    let act_logits = model.heads.action.forward(&mut g, store, fm);
    let terms = LossTerms {
        identity: cross_entropy(&mut g, id_logits, &ids)?,
        triplet: triplet_loss(&mut g, fb, &ids, weights.margin)?,
        orthogonality: orthogonality_loss(&mut g, fb, fnb, weights.orthogonality_mode)?,
        action: cross_entropy(&mut g, act_logits, &actions)?,
    };
    let components = terms.values(&g);
    let mut total = total_loss(&mut g, terms, weights)?;
    let mut verification = 0.0;
    if weights.verification > 0.0 {
        let feats: Vec<DisentangledFeatures> = passes.iter().map(|p| p.features.clone()).collect();
        let (sims, same) = batch_pairs(&feats, &ids);
        let v = verification_loss(&mut g, store, &model.weigher, &sims, &same, weights.verification_temperature)?;
        verification = g.value(v).item();
        if !verification.is_finite() {
            return Err(Error::NonFinite("verification".into()));
        }
        let v = g.scale(v, weights.verification);
        total = g.add(total, v);
    }
    let total_value = g.value(total).item();
    let batch_grads = g.backward_scalar(total);
    let mut grads = GradBuffer::zeros_like(store);
    g.accumulate_params(&batch_grads, &mut grads);
    let seeds = [fb, fm, fnb].map(|v| batch_grads.get_or_zeros(&g, v));

    let clip_grads: Vec<GradBuffer> = passes
        .par_iter()
        .enumerate()
        .map(|(k, p)| {
            let row = |m: &Mat| Mat::row_vector(m.row(k).to_vec());
            let s = [(p.vars.biometrics, row(&seeds[0])), (p.vars.motion, row(&seeds[1])), (p.vars.non_biometrics, row(&seeds[2]))];
            let gr = p.graph.backward(&s);
            let mut buf = GradBuffer::zeros_like(store);
            p.graph.accumulate_params(&gr, &mut buf);
            buf
        })
        .collect();
    for c in &clip_grads {
        grads.merge(c);
    }
    if !grads.is_finite() {
        return Err(Error::NonFinite("parameter gradients".into()));
    }
    Ok(BatchOutcome { components, verification, total: total_value, grads })
}

/// One epoch of `ceil(|train| / B)` PK batches followed by optimizer steps.
pub fn run_epoch(state: &mut TrainState, dataset: &Dataset, train: &[usize], cfg: &RunConfig) -> Result<EpochRecord> {
    let t = &cfg.training;
    let epoch = state.epochs_done + 1;
    let mut rng = epoch_rng(cfg.seed, epoch);
    let identities: Vec<usize> = train.iter().map(|&i| dataset.samples[i].identity).collect();
    let batches = train.len().div_ceil(t.batch_size()).max(1);
    let mut sums = [0.0; 6];
    for _ in 0..batches {
        let picks = pk_sample(&identities, t.identities_per_batch, t.clips_per_identity, &mut rng)?;
        let batch: Vec<usize> = picks.iter().map(|&k| train[k]).collect();
        let frames: Vec<Vec<usize>> = batch.iter().map(|&i| state.model.config.sampling.indices(dataset.samples[i].frames.len(), Some(&mut rng))).collect();
        let out = batch_gradients(&state.model, dataset, &batch, &frames, &cfg.loss)?;
        state.optimizer.step(&mut state.model.store, &out.grads);
        let c = out.components;
        for (s, v) in sums.iter_mut().zip([c.identity, c.triplet, c.orthogonality, c.action, out.verification, out.total]) {
            *s += v;
        }
    }
    if !state.model.store.iter().all(|(_, _, m)| m.is_finite()) {
        return Err(Error::NonFinite("parameters".into()));
    }
    state.epochs_done = epoch;
    let n = batches as f64;
    Ok(EpochRecord {
        epoch,
        identity: sums[0] / n,
        triplet: sums[1] / n,
        orthogonality: sums[2] / n,
        action: sums[3] / n,
        verification: sums[4] / n,
        total: sums[5] / n,
        batches,
    })
}

fn check_trainable(dataset: &Dataset) -> Result<()> {
    if dataset.is_inference_only() {
        return Err(Error::MissingText("dataset has no text triplets; it can only be evaluated".into()));
    }
    Ok(())
}

/// Trains from `state` (or a fresh model) up to `cfg.training.epochs`,
/// calling `on_epoch` after each completed epoch.
pub fn train(
    cfg: &RunConfig,
    dataset: &Dataset,
    state: Option<TrainState>,
    mut on_epoch: impl FnMut(&TrainState, &EpochRecord) -> Result<()>,
) -> Result<TrainState> {
    cfg.validate()?;
    check_trainable(dataset)?;
    let mut state = match state {
        Some(s) => s,
        None => TrainState::new(cfg, dataset)?,
    };
    state.model.check_dataset(dataset)?;
    let train = training_indices(dataset, cfg.seed)?;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(cfg.training.workers).build().map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    while state.epochs_done < cfg.training.epochs {
        let record = pool.install(|| run_epoch(&mut state, dataset, &train, cfg))?;
        on_epoch(&state, &record)?;
    }
    Ok(state)
}
