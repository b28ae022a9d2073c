//! Small shared fixtures for unit tests.

use crate::data::{synthetic_sequences, Dataset, PreprocessConfig, SynthConfig};
use crate::models::{ModelConfig, ModelKind};
use crate::nn::BlockKind;

pub const SIDE: usize = 6;
pub const WINDOW: usize = 5;

pub fn tiny_model(kind: ModelKind) -> ModelConfig {
    ModelConfig {
        stream_depth: 1,
        interweave_depth: 2,
        base_width: 2,
        side_dims: [SIDE, SIDE],
        frames: WINDOW,
        flows: WINDOW - 1,
        downsample_every: 2,
        ..ModelConfig::new(kind, BlockKind::mobilenet())
    }
}

pub fn tiny_synth() -> SynthConfig {
    SynthConfig {
        seed: 5,
        clips: [2, 1, 1],
        segments: 3,
        segment_frames: 24,
        ..SynthConfig::default()
    }
}

/// Train and validation windows of the tiny synthetic set.
pub fn tiny_datasets(stride: usize) -> (Dataset, Dataset) {
    let synth = tiny_synth();
    let seqs = synthetic_sequences(&synth, &PreprocessConfig::for_dims(synth.dims, [SIDE, SIDE])).unwrap();
    let (train, rest): (Vec<_>, Vec<_>) = seqs
        .into_iter()
        .partition(|c| c.split == crate::data::Split::Train);
    let val = rest
        .into_iter()
        .filter(|c| c.split == crate::data::Split::Validation)
        .collect();
    (
        Dataset::new(train, WINDOW, stride).unwrap(),
        Dataset::new(val, WINDOW, stride).unwrap(),
    )
}
