#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;

use monoiqa::data::synth::{
    read_latents, synth_generate, write_synth_tree, MonotoneMap, SynthConfig,
};
use monoiqa::data::{split_all, DataSplit, LoadedDataset};
use monoiqa::par::Execution;
use monoiqa::train::{load_training_data, TrainConfig};

/// A synthetic tree written to disk and loaded back, with the generating
/// curve and per-sample latents of every dataset.
pub struct SynthFixture {
    pub data: Vec<LoadedDataset>,
    pub maps: BTreeMap<String, MonotoneMap>,
    pub latents: BTreeMap<String, Vec<f64>>,
}

pub fn synth_fixture(root: &Path, config: &SynthConfig) -> SynthFixture {
    let generated = synth_generate(config).expect("valid generator config");
    write_synth_tree(root, config, &generated).expect("writable tree");
    let data = load_training_data(root, Some(config.channels), Execution::default())
        .expect("loadable tree");
    let maps = generated
        .iter()
        .map(|d| (d.descriptor.dataset_id.clone(), d.map.clone()))
        .collect();
    let latents = data
        .iter()
        .map(|d| {
            let rows = read_latents(root, d.dataset_id()).expect("latents file");
            let v = d
                .manifest
                .records
                .iter()
                .map(|r| rows[&r.sample_id].latent)
                .collect();
            (d.dataset_id().to_string(), v)
        })
        .collect();
    SynthFixture {
        data,
        maps,
        latents,
    }
}

pub fn split_for(data: &[LoadedDataset], config: &TrainConfig) -> DataSplit {
    let manifests: Vec<_> = data.iter().map(|d| d.manifest.clone()).collect();
    split_all(&manifests, config.seed, config.proportions).expect("splittable")
}

pub fn dataset_ids(data: &[LoadedDataset]) -> Vec<&str> {
    data.iter().map(LoadedDataset::dataset_id).collect()
}

/// Small generator config for fast tests.
pub fn small_synth(seed: u64) -> SynthConfig {
    let mut cfg = SynthConfig {
        seed,
        channels: 4,
        length: 8,
        ..SynthConfig::default()
    };
    for (d, n) in cfg.datasets.iter_mut().zip([120, 80, 60]) {
        d.size = n;
    }
    cfg
}
