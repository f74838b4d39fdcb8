//! On-disk dataset format: `manifest.json` plus one float32 feature file per
//! clip and an optional float32 text file.
//!
//! Feature files hold a `[frames, tokens, dim, 1]` u32 header followed by
//! `frames · tokens · dim` little-endian f32 values. Text files hold a
//! `[3, dim, 1]` header followed by the biometrics, motion and
//! non-biometrics vectors.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Mat;
use crate::world::{Dataset, TextTriplet, VideoSample};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClipRecord {
    pub clip_id: String,
    pub identity: usize,
    pub action: usize,
    pub clothing: usize,
    pub view: usize,
    pub feature_file: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_file: Option<String>,
    /// Defaults to the middle frame.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_frame_index: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub version: u32,
    pub frames_per_clip: usize,
    pub tokens_per_frame: usize,
    pub token_dim: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_dim: Option<usize>,
    pub num_identities: usize,
    pub num_actions: usize,
    pub num_clothing: usize,
    pub num_views: usize,
    pub clips: Vec<ClipRecord>,
}

fn encode(header: &[u32], values: impl Iterator<Item = f64>) -> Vec<u8> {
    let mut buf: Vec<u8> = header.iter().flat_map(|h| h.to_le_bytes()).collect();
    for v in values {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

/// Splits a file into its u32 header and f32 payload, checking the payload
/// length against the product of the header's shape entries.
fn decode(path: &Path, header_len: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::manifest(path, format!("cannot read: {e}")))?;
    if bytes.len() < 4 * header_len {
        return Err(Error::manifest(path, "truncated header"));
    }
    let header: Vec<usize> = bytes[..4 * header_len].chunks_exact(4).map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize).collect();
    if header[header_len - 1] != FORMAT_VERSION as usize {
        return Err(Error::manifest(path, format!("unsupported version {}", header[header_len - 1])));
    }
    let expected: usize = header[..header_len - 1].iter().product();
    let payload = &bytes[4 * header_len..];
    if payload.len() != 4 * expected {
        return Err(Error::manifest(path, format!("payload holds {} bytes, header implies {}", payload.len(), 4 * expected)));
    }
    let values = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
    Ok((header, values))
}

pub fn encode_features(frames: &[Mat]) -> Vec<u8> {
    let (n, d) = frames.first().map_or((0, 0), |f| (f.rows, f.cols));
    encode(&[frames.len() as u32, n as u32, d as u32, FORMAT_VERSION], frames.iter().flat_map(|f| f.data.iter().copied()))
}

pub fn encode_text(text: &TextTriplet) -> Vec<u8> {
    let values = text.biometrics.iter().chain(&text.motion).chain(&text.non_biometrics).copied();
    encode(&[3, text.dim() as u32, FORMAT_VERSION], values)
}

/// Writes `dataset` under `dir`, creating it if needed.
pub fn write_dataset(dataset: &Dataset, dir: &Path) -> Result<Manifest> {
    std::fs::create_dir_all(dir.join("features"))?;
    let has_text = dataset.samples.iter().any(|s| s.text.is_some());
    if has_text {
        std::fs::create_dir_all(dir.join("text"))?;
    }
    let mut clips = Vec::with_capacity(dataset.samples.len());
    for s in &dataset.samples {
        let feature_file = format!("features/{}.f32", s.clip_id);
        std::fs::write(dir.join(&feature_file), encode_features(&s.frames))?;
        let text_file = match &s.text {
            Some(t) => {
                let name = format!("text/{}.f32", s.clip_id);
                std::fs::write(dir.join(&name), encode_text(t))?;
                Some(name)
            }
            None => None,
        };
        clips.push(ClipRecord {
            clip_id: s.clip_id.clone(),
            identity: s.identity,
            action: s.action,
            clothing: s.clothing,
            view: s.view,
            feature_file,
            text_file,
            key_frame_index: Some(s.key_frame_index),
        });
    }
    let manifest = Manifest {
        version: FORMAT_VERSION,
        frames_per_clip: dataset.frames_per_clip,
        tokens_per_frame: dataset.tokens_per_frame,
        token_dim: dataset.token_dim,
        text_dim: dataset.text_dim,
        num_identities: dataset.num_identities,
        num_actions: dataset.num_actions,
        num_clothing: dataset.num_clothing,
        num_views: dataset.num_views,
        clips,
    };
    std::fs::write(dir.join(MANIFEST_FILE), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}

/// Loads a dataset from a manifest directory (or the manifest file itself).
/// Clips without a text file make the dataset inference-only.
pub fn ingest_manifest(path: &Path) -> Result<Dataset> {
    let file = manifest_path(path);
    let text = std::fs::read_to_string(&file).map_err(|e| Error::manifest(&file, format!("cannot read: {e}")))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::manifest(&file, format!("schema: {e}")))?;
    let root = file.parent().unwrap_or(Path::new("."));
    if m.version != FORMAT_VERSION {
        return Err(Error::manifest(&file, format!("unsupported version {}", m.version)));
    }
    if m.clips.is_empty() {
        return Err(Error::manifest(&file, "no clips listed"));
    }
    if [m.frames_per_clip, m.tokens_per_frame, m.token_dim, m.num_identities, m.num_actions, m.num_clothing, m.num_views].contains(&0) {
        return Err(Error::manifest(&file, "shape and label counts must be >= 1"));
    }
    let mut ids = std::collections::BTreeSet::new();
    let mut samples = Vec::with_capacity(m.clips.len());
    for c in &m.clips {
        if !ids.insert(c.clip_id.as_str()) {
            return Err(Error::manifest(&file, format!("duplicate clip_id {}", c.clip_id)));
        }
        for (name, value, count) in [
            ("identity", c.identity, m.num_identities),
            ("action", c.action, m.num_actions),
            ("clothing", c.clothing, m.num_clothing),
            ("view", c.view, m.num_views),
        ] {
            if value >= count {
                return Err(Error::LabelOutOfRange(format!("clip {}: {name} {value} not below declared count {count}", c.clip_id)));
            }
        }
        let fpath = root.join(&c.feature_file);
        let (h, values) = decode(&fpath, 4)?;
        let shape_error = |what: &str, expected: usize, got: usize| Error::DimMismatch { what: format!("clip {} {what}", c.clip_id), expected, got };
        if h[0] != m.frames_per_clip {
            return Err(shape_error("frame count", m.frames_per_clip, h[0]));
        }
        if h[1] != m.tokens_per_frame {
            return Err(shape_error("tokens per frame", m.tokens_per_frame, h[1]));
        }
        if h[2] != m.token_dim {
            return Err(shape_error("token dim", m.token_dim, h[2]));
        }
        let per_frame = h[1] * h[2];
        let frames = values.chunks_exact(per_frame).map(|f| Mat::from_vec(h[1], h[2], f.iter().map(|&x| x as f64).collect())).collect();
        let text = match &c.text_file {
            Some(t) => {
                let tpath = root.join(t);
                let (th, tv) = decode(&tpath, 3)?;
                if th[0] != 3 {
                    return Err(Error::manifest(&tpath, format!("text file must hold 3 vectors, holds {}", th[0])));
                }
                let dt = th[1];
                if let Some(expected) = m.text_dim {
                    if dt != expected {
                        return Err(shape_error("text dim", expected, dt));
                    }
                }
                let v: Vec<f64> = tv.iter().map(|&x| x as f64).collect();
                let triplet = TextTriplet { biometrics: v[..dt].to_vec(), motion: v[dt..2 * dt].to_vec(), non_biometrics: v[2 * dt..].to_vec() };
                triplet.validate()?;
                Some(triplet)
            }
            None => None,
        };
        let key_frame_index = c.key_frame_index.unwrap_or(m.frames_per_clip / 2);
        if key_frame_index >= m.frames_per_clip {
            return Err(Error::manifest(&file, format!("clip {}: key_frame_index {key_frame_index} out of range", c.clip_id)));
        }
        samples.push(VideoSample {
            clip_id: c.clip_id.clone(),
            frames,
            identity: c.identity,
            action: c.action,
            clothing: c.clothing,
            view: c.view,
            key_frame_index,
            text,
        });
    }
    let text_dim = m.text_dim.or_else(|| samples.iter().find_map(|s| s.text.as_ref().map(TextTriplet::dim)));
    Ok(Dataset {
        frames_per_clip: m.frames_per_clip,
        tokens_per_frame: m.tokens_per_frame,
        token_dim: m.token_dim,
        text_dim,
        num_identities: m.num_identities,
        num_actions: m.num_actions,
        num_clothing: m.num_clothing,
        num_views: m.num_views,
        samples,
    })
}

/// The dataset as it reads back from disk: every value rounded through f32.
pub fn round_trip_f32(dataset: &Dataset) -> Dataset {
    let mut d = dataset.clone();
    let round = |x: &mut f64| *x = *x as f32 as f64;
    for s in &mut d.samples {
        s.frames.iter_mut().for_each(|f| f.data.iter_mut().for_each(round));
        if let Some(t) = &mut s.text {
            t.biometrics.iter_mut().chain(&mut t.motion).chain(&mut t.non_biometrics).for_each(round);
        }
    }
    d
}
