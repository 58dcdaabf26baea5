#![allow(dead_code)]

use freesdg::data_pipeline::{synthetic_dataset, Sample, SynthConfig};
use freesdg::network::ModelConfig;
use freesdg::trainer::TrainConfig;

pub fn tiny_model() -> ModelConfig {
    ModelConfig {
        depth: 2,
        base_channels: 4,
        image_size: 64,
        ..ModelConfig::desk()
    }
}

pub fn tiny_train(epochs: usize, seed: u64) -> TrainConfig {
    let mut cfg = TrainConfig::desk().with_epochs(epochs);
    cfg.seed = seed;
    cfg
}

pub fn synth_samples(count: usize, seed: u64) -> Vec<Sample> {
    synthetic_dataset(&SynthConfig {
        count,
        seed,
        ..SynthConfig::default()
    })
    .unwrap()
    .samples
}
