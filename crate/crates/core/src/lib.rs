//! Disentangling querying transformer for activity-biometrics retrieval at desk scale.
//!
//! Three isolated learnable query streams (biometrics, motion, non-biometrics)
//! read a pooled video feature through shared transformer layers, guided by
//! per-stream text embeddings during training. Retrieval fuses biometrics and
//! motion cosine similarities with a small learned weigher.

pub mod autograd;
pub mod checkpoint;
pub mod config;
pub mod diagnostics;
pub mod disenq;
pub mod encoder;
pub mod error;
pub mod gradcheck;
pub mod harness;
pub mod identification;
pub mod losses;
pub mod manifest;
pub mod model;
pub mod optim;
pub mod params;
pub mod plot;
pub mod tensor;
pub mod train;
pub mod world;

pub use error::{Error, Result};
