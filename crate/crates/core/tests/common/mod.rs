#![allow(dead_code)]

use swinlstm::data::{build_dataset, GeneratorConfig, SequenceDataset, Sprites};
use swinlstm::ModelConfig;

/// Single-cell model small enough for debug-speed tests.
pub fn tiny_model(side: usize) -> ModelConfig {
    let mut c = ModelConfig::base(side, side, 2, 8, 2);
    c.window_size = 2;
    c.heads = 2;
    c.mlp_ratio = 2;
    c
}

/// Procedural bouncing-glyph sequences on a `side x side` canvas.
pub fn dataset(seed: u64, count: usize, side: usize, frames: usize) -> SequenceDataset {
    build_dataset(
        seed,
        count,
        &GeneratorConfig::for_canvas(side, frames),
        Sprites::Procedural,
    )
    .unwrap()
}
