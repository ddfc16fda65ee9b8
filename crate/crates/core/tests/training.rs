mod common;

use common::{dataset_ids, small_synth, split_for, synth_fixture};
use monoiqa::data::Subset;
use monoiqa::par::Execution;
use monoiqa::train::{evaluate, train, train_in, EvalMode, QualityModel, TrainConfig};
use monoiqa::verify::{check_model_transformers, SAMPLE_RANGE};

fn quick_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden1: 32,
        hidden2: 16,
        patience: epochs + 1,
        ..TrainConfig::default()
    }
}

#[test]
fn loss_decreases_on_noise_free_labels() {
    let dir = tempfile::tempdir().unwrap();
    let mut synth = small_synth(3);
    for d in &mut synth.datasets {
        d.label_noise = 0.0;
    }
    let fx = synth_fixture(dir.path(), &synth);
    let config = quick_config(6);
    let split = split_for(&fx.data, &config);
    let model = QualityModel::init(synth.channels, &dataset_ids(&fx.data), &config).unwrap();
    let out = train(model, &fx.data, &split, &config).unwrap();
    let epochs: Vec<_> = out.epoch_records().collect();
    assert_eq!(epochs.len(), 6);
    assert!(
        epochs[5].loss_all < epochs[0].loss_all,
        "epoch losses {:?}",
        epochs.iter().map(|r| r.loss_all).collect::<Vec<_>>()
    );
    assert!(out.log.iter().all(|r| r.loss_all.is_finite()));
}

#[test]
fn trained_transformers_stay_monotone_and_positive() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(5);
    let fx = synth_fixture(dir.path(), &synth);
    let config = quick_config(4);
    let split = split_for(&fx.data, &config);
    let model = QualityModel::init(synth.channels, &dataset_ids(&fx.data), &config).unwrap();
    let out = train(model, &fx.data, &split, &config).unwrap();
    let report = check_model_transformers(&out.model, 200, SAMPLE_RANGE, 11).unwrap();
    assert!(report.passed(), "{report:?}");
    assert_eq!(report.transformers, 3);
    assert!(report.min_effective_weight >= monoiqa::monotone::WEIGHT_FLOOR);
    assert!(report.min_input_grad > 0.0);
}

#[test]
fn raw_and_calibrated_rankings_agree_after_training() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(8);
    let fx = synth_fixture(dir.path(), &synth);
    let config = quick_config(3);
    let split = split_for(&fx.data, &config);
    let model = QualityModel::init(synth.channels, &dataset_ids(&fx.data), &config).unwrap();
    let out = train(model, &fx.data, &split, &config).unwrap();
    let raw = evaluate(
        &out.model,
        &fx.data,
        Some(&split),
        Subset::Test,
        EvalMode::Raw,
    )
    .unwrap();
    let cal = evaluate(
        &out.model,
        &fx.data,
        Some(&split),
        Subset::Test,
        EvalMode::Calibrated,
    )
    .unwrap();
    for (id, r) in &raw.per_dataset {
        assert!((r.srcc - cal.per_dataset[id].srcc).abs() <= 1e-12, "{id}");
    }
}

#[test]
fn sequential_and_parallel_training_match_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(13);
    let fx = synth_fixture(dir.path(), &synth);
    let config = quick_config(2);
    let split = split_for(&fx.data, &config);
    let ids = dataset_ids(&fx.data);
    let run = |exec| {
        let model = QualityModel::init(synth.channels, &ids, &config).unwrap();
        train_in(exec, model, &fx.data, &split, &config).unwrap()
    };
    let a = run(Execution::Sequential);
    let b = run(Execution::Parallel);
    assert_eq!(a.log, b.log);
    assert_eq!(a.model, b.model);
}

#[test]
fn early_stopping_keeps_the_best_epoch() {
    let dir = tempfile::tempdir().unwrap();
    let synth = small_synth(21);
    let fx = synth_fixture(dir.path(), &synth);
    let config = TrainConfig {
        patience: 1,
        ..quick_config(8)
    };
    let split = split_for(&fx.data, &config);
    let model = QualityModel::init(synth.channels, &dataset_ids(&fx.data), &config).unwrap();
    let out = train(model, &fx.data, &split, &config).unwrap();
    let best = out.best_epoch.expect("at least one validated epoch");
    assert!(out.epochs_run <= best + 2);
    let val = evaluate(
        &out.model,
        &fx.data,
        Some(&split),
        Subset::Val,
        EvalMode::Raw,
    )
    .unwrap();
    assert!((val.weighted_srcc - out.best_val_srcc.unwrap()).abs() < 1e-12);
}
