#![allow(dead_code)]

use disenq::config::RunConfig;
use disenq::world::{generate_dataset, Dataset};

/// A world small enough to train in well under a second per epoch.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.seed = seed;
    c.world.num_identities = 10;
    c.world.num_actions = 2;
    c.world.num_clothing = 2;
    c.world.num_views = 2;
    c.world.frames_per_clip = 4;
    c.world.tokens_per_frame = 4;
    c.world.token_dim = 8;
    c.world.text_dim = 4;
    c.world.seed = seed;
    let d = &mut c.model.disenq;
    d.layers = 1;
    d.heads = 2;
    d.model_dim = 8;
    d.queries_per_stream = 2;
    d.visual_dim = 8;
    d.text_dim = 4;
    d.ffn_mult = 2;
    c.model.sampling.frames = 4;
    c.training.epochs = 2;
    c.training.identities_per_batch = 2;
    c.training.clips_per_identity = 2;
    c.training.workers = 1;
    c.optimizer.lr = 1e-3;
    c
}

pub fn tiny_dataset(cfg: &RunConfig) -> Dataset {
    generate_dataset(&cfg.world).unwrap()
}
