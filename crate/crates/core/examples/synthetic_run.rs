//! Generates the default synthetic datasets in memory, trains with the
//! default configuration and prints held-out correlations. Optional
//! arguments: a synthetic generator config and a training config (JSON).

use std::time::Instant;

use monoiqa::data::synth::{synth_generate, SynthConfig};
use monoiqa::data::{split_all, LoadedDataset, Subset};
use monoiqa::train::{evaluate, train, EvalMode, QualityModel, TrainConfig};

fn main() -> monoiqa::Result<()> {
    env_logger::init();
    let args: Vec<String> = std::env::args().collect();
    let read = |i: usize| {
        args.get(i)
            .map(|p| std::fs::read_to_string(p).expect("readable config"))
    };
    let synth: SynthConfig = read(1).map_or_else(SynthConfig::default, |s| {
        serde_json::from_str(&s).expect("synth config")
    });
    let config: TrainConfig = read(2).map_or_else(TrainConfig::default, |s| {
        serde_json::from_str(&s).expect("train config")
    });
    let data: Vec<LoadedDataset> = synth_generate(&synth)?
        .into_iter()
        .map(|d| {
            Ok(LoadedDataset {
                manifest: d.manifest()?,
                features: d.samples.into_iter().map(|s| s.features).collect(),
            })
        })
        .collect::<monoiqa::Result<_>>()?;
    let manifests: Vec<_> = data.iter().map(|d| d.manifest.clone()).collect();
    let split = split_all(&manifests, config.seed, config.proportions)?;
    let ids: Vec<&str> = data.iter().map(LoadedDataset::dataset_id).collect();
    let model = QualityModel::init(synth.channels, &ids, &config)?;
    let start = Instant::now();
    let out = train(model, &data, &split, &config)?;
    eprintln!(
        "trained {} epochs in {:.1?} (best epoch {:?})",
        out.epochs_run,
        start.elapsed(),
        out.best_epoch
    );
    let report = evaluate(&out.model, &data, Some(&split), Subset::Test, EvalMode::Raw)?;
    print!("{}", report.to_table());
    Ok(())
}
