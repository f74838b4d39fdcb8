//! Binary checkpoints: an 8-byte magic, a u64 header length, a JSON header
//! and then raw little-endian f64 payloads (parameters, then the optimizer's
//! first and second moments, each in parameter order).

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::model::{Model, ModelConfig};
use crate::optim::AdamW;
use crate::tensor::Mat;
use crate::train::TrainState;

pub const MAGIC: &[u8; 8] = b"DSNQCKP1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamShape {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

/// Where training randomness resumes: epoch `e` draws from the stream
/// derived from `(seed, e)`, so the next epoch index is the whole state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub next_epoch: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config_hash: String,
    /// The full run configuration, as TOML.
    config: String,
    model: ModelConfig,
    epochs_done: usize,
    rng: RngState,
    params: Vec<ParamShape>,
    optimizer_steps: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub state: TrainState,
}

impl Checkpoint {
    pub fn rng(&self) -> RngState {
        RngState { seed: self.config.seed, next_epoch: self.state.epochs_done + 1 }
    }
}

pub fn to_bytes(cfg: &RunConfig, state: &TrainState) -> Result<Vec<u8>> {
    let store = &state.model.store;
    let (steps, m, v) = state.optimizer.state();
    let header = Header {
        config_hash: cfg.hash(),
        config: cfg.to_toml(),
        model: state.model.config.clone(),
        epochs_done: state.epochs_done,
        rng: RngState { seed: cfg.seed, next_epoch: state.epochs_done + 1 },
        params: store.iter().map(|(_, name, p)| ParamShape { name: name.into(), rows: p.rows, cols: p.cols }).collect(),
        optimizer_steps: steps.to_vec(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 3 * 8 * store.num_scalars());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    let mats = store.iter().map(|(_, _, p)| p).chain(m).chain(v);
    for mat in mats {
        for x in &mat.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let bad = |msg: &str| Error::Checkpoint(msg.to_string());
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let body_start = 16usize.checked_add(hlen).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(&bytes[16..body_start])?;
    let config = RunConfig::from_toml(&header.config)?;
    if config.hash() != header.config_hash {
        return Err(bad("stored configuration does not match its hash"));
    }
    let scalars: usize = header.params.iter().map(|p| p.rows * p.cols).sum();
    let body = &bytes[body_start..];
    if body.len() != 3 * 8 * scalars {
        return Err(bad("payload size does not match the parameter table"));
    }
    let mut floats = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut take = |shape: &ParamShape| Mat::from_vec(shape.rows, shape.cols, floats.by_ref().take(shape.rows * shape.cols).collect());
    let values: Vec<Mat> = header.params.iter().map(&mut take).collect();
    let m: Vec<Mat> = header.params.iter().map(&mut take).collect();
    let v: Vec<Mat> = header.params.iter().map(&mut take).collect();

    let mut model = Model::new(header.model.clone(), config.seed)?;
    if model.store.len() != values.len() {
        return Err(bad("parameter count differs from the configured model"));
    }
    for (id, (shape, value)) in header.params.iter().zip(values).enumerate() {
        if model.store.name(id) != shape.name || model.store.value(id).shape() != (shape.rows, shape.cols) {
            return Err(Error::Checkpoint(format!("parameter {} does not match the model layout", shape.name)));
        }
        *model.store.value_mut(id) = value;
    }
    if header.optimizer_steps.len() != m.len() {
        return Err(bad("optimizer state length differs from parameter count"));
    }
    let optimizer = AdamW::from_state(config.optimizer.clone(), header.optimizer_steps, m, v);
    Ok(Checkpoint { config, state: TrainState { model, optimizer, epochs_done: header.epochs_done } })
}

/// Writes atomically: a crash mid-write leaves any previous file intact.
pub fn save(path: &Path, cfg: &RunConfig, state: &TrainState) -> Result<()> {
    let bytes = to_bytes(cfg, state)?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    from_bytes(&bytes)
}

/// Loads a checkpoint for resuming under `cfg`, refusing when the stored
/// configuration hash differs.
pub fn load_for(path: &Path, cfg: &RunConfig) -> Result<Checkpoint> {
    let ck = load(path)?;
    if ck.config.hash() != cfg.hash() {
        return Err(Error::Checkpoint(format!("configuration hash {} does not match checkpoint {}", cfg.hash(), ck.config.hash())));
    }
    Ok(ck)
}
