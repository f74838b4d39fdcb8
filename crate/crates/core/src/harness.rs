//! The four commands behind the CLI: generate, train, evaluate, diagnose.
//! Each works on directories of artifacts so runs can be inspected and
//! resumed from disk.

use std::collections::BTreeSet;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::diagnostics::{diagnose, export_embeddings, DiagnosticsReport, InfoNceConfig, ProbeConfig};
use crate::error::{Error, Result};
use crate::identification::{report_from_features, Fusion, RetrievalReport};
use crate::manifest::{ingest_manifest, write_dataset};
use crate::plot;
use crate::train::{train, EpochRecord, TrainState};
use crate::world::{generate_dataset, split_identities, split_protocol, Dataset, Protocol};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const TRAIN_LOG_FILE: &str = "train_log.jsonl";
pub const CONFIG_FILE: &str = "config.toml";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.f32";

pub fn report_file(protocol: Protocol) -> String {
    format!("report_{}.json", protocol.name())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateSummary {
    pub clips: usize,
    pub identities: usize,
    pub actions: usize,
    pub clothing: usize,
    pub views: usize,
}

fn ensure_empty_or_forced(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force && std::fs::read_dir(dir)?.next().is_some() {
        return Err(Error::InvalidConfig(format!("{} exists and is not empty; pass --force to overwrite", dir.display())));
    }
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, out: &Path, force: bool) -> Result<GenerateSummary> {
    cfg.world.validate()?;
    ensure_empty_or_forced(out, force)?;
    let dataset = generate_dataset(&cfg.world)?;
    write_dataset(&dataset, out)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    Ok(GenerateSummary {
        clips: dataset.len(),
        identities: dataset.num_identities,
        actions: dataset.num_actions,
        clothing: dataset.num_clothing,
        views: dataset.num_views,
    })
}

/// Trains on the dataset at `data`, writing one NDJSON log line and one
/// checkpoint per epoch into `out`. A failed epoch leaves the previous
/// checkpoint in place.
pub fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path, resume: Option<&Path>, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainState> {
    cfg.validate()?;
    let dataset = ingest_manifest(data)?;
    std::fs::create_dir_all(out)?;
    let state = match resume {
        Some(path) => Some(checkpoint::load_for(path, cfg)?.state),
        None => None,
    };
    let log_path = out.join(TRAIN_LOG_FILE);
    let mut log = std::fs::OpenOptions::new().create(true).append(resume.is_some()).write(true).truncate(resume.is_none()).open(&log_path)?;
    std::fs::write(out.join(CONFIG_FILE), cfg.to_toml())?;
    let ckpt = out.join(CHECKPOINT_FILE);
    let state = train(cfg, &dataset, state, |state, record| {
        writeln!(log, "{}", serde_json::to_string(record)?)?;
        checkpoint::save(&ckpt, cfg, state)?;
        on_epoch(record);
        Ok(())
    })?;
    if cfg.evaluation.plots {
        plot::loss_plot(&out.join("loss_curves.svg"), &read_log(&log_path)?)?;
    }
    Ok(state)
}

pub fn read_log(path: &Path) -> Result<Vec<EpochRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
}

#[derive(Clone, Debug, Default)]
pub struct EvaluateOutcome {
    pub reports: Vec<RetrievalReport>,
    /// Protocols that could not be formed on this dataset, with the reason.
    pub skipped: Vec<(Protocol, String)>,
}

/// Text-free evaluation of a checkpoint on every requested protocol. Writes
/// one report per protocol and, with `plots`, one CMC figure each.
pub fn cmd_evaluate(ckpt: &Path, data: &Path, protocols: Option<&[Protocol]>, fusion: Option<Fusion>, plots: bool, out: &Path) -> Result<EvaluateOutcome> {
    let ck = checkpoint::load(ckpt)?;
    let dataset = ingest_manifest(data)?;
    let model = &ck.state.model;
    let features = model.infer_all(&dataset)?;
    std::fs::create_dir_all(out)?;
    let protocols = protocols.unwrap_or(&ck.config.evaluation.protocols);
    let fusion = fusion.unwrap_or(ck.config.evaluation.fusion);
    let mut outcome = EvaluateOutcome::default();
    for &p in protocols {
        let split = match split_protocol(&dataset, p, ck.config.seed) {
            Ok(s) => s,
            Err(e @ (Error::ImpossibleSplit(_) | Error::InsufficientData(_))) => {
                outcome.skipped.push((p, e.to_string()));
                continue;
            }
            Err(e) => return Err(e),
        };
        let report = report_from_features(&split, &dataset, &features, fusion, &model.store, &model.weigher)?;
        std::fs::write(out.join(report_file(p)), serde_json::to_vec_pretty(&report)?)?;
        if plots {
            plot::cmc_plot(&out.join(format!("cmc_{}.svg", p.name())), &report)?;
        }
        outcome.reports.push(report);
    }
    Ok(outcome)
}

/// Clips of the identities held out from training.
pub fn held_out_clips(dataset: &Dataset, seed: u64) -> Result<Vec<usize>> {
    let (_, test) = split_identities(dataset, seed)?;
    let test: BTreeSet<usize> = test.into_iter().collect();
    Ok((0..dataset.len()).filter(|&i| test.contains(&dataset.samples[i].identity)).collect())
}

/// Diagnostics on the held-out identities' clips, optionally exporting all
/// embeddings next to the report.
pub fn cmd_diagnose(ckpt: &Path, data: &Path, out: &Path, export: bool) -> Result<DiagnosticsReport> {
    let ck = checkpoint::load(ckpt)?;
    let dataset = ingest_manifest(data)?;
    let features = ck.state.model.infer_all(&dataset)?;
    let clips = held_out_clips(&dataset, ck.config.seed)?;
    let seed = ck.config.seed;
    let report = diagnose(&features, &dataset, &clips, &InfoNceConfig { seed, ..Default::default() }, &ProbeConfig { seed, ..Default::default() })?;
    std::fs::create_dir_all(out)?;
    std::fs::write(out.join(DIAGNOSTICS_FILE), serde_json::to_vec_pretty(&report)?)?;
    if export {
        export_embeddings(&features, &dataset, &out.join(EMBEDDINGS_FILE))?;
    }
    Ok(report)
}

/// Resolves an output directory: the explicit flag, else `root/<name>`.
pub fn output_dir(explicit: Option<PathBuf>, root: Option<PathBuf>, name: &str) -> Result<PathBuf> {
    match (explicit, root) {
        (Some(p), _) => Ok(p),
        (None, Some(r)) => Ok(r.join(name)),
        (None, None) => Err(Error::InvalidConfig("no output directory: pass --out or set DISENQ_OUTPUT_ROOT".into())),
    }
}
