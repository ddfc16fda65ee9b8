use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{
    discover_datasets, load_dataset, make_batches, split_all, DataSplit, DatasetManifest,
    LoadedDataset, Subset,
};
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::losses::{combined_loss, combined_loss_grad, LossValue};
use crate::metrics::{median_over_splits, weighted_report, CorrelationResult, WeightedReport};
use crate::par::Execution;
use crate::regressor::HeadGrads;

use super::adam::{AdamHyper, AdamState};
use super::config::TrainConfig;
use super::model::QualityModel;

/// One line of the training log. Batch records carry `batch` and
/// `dataset_id`; the record closing an epoch carries neither, holds the
/// epoch-mean losses and the validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub epoch: usize,
    pub batch: Option<usize>,
    pub dataset_id: Option<String>,
    pub loss_sl: f64,
    pub loss_nin: f64,
    pub loss_all: f64,
    pub val_weighted_srcc: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation score.
    pub model: QualityModel,
    pub log: Vec<LogRecord>,
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_srcc: Option<f64>,
}

impl TrainOutcome {
    pub fn epoch_records(&self) -> impl Iterator<Item = &LogRecord> {
        self.log.iter().filter(|r| r.batch.is_none())
    }

    pub fn log_json_lines(&self) -> String {
        self.log
            .iter()
            .map(|r| serde_json::to_string(r).expect("log record") + "\n")
            .collect()
    }
}

/// Gradients of one batch loss with respect to every model parameter.
/// Transformers other than the batch's dataset get all-zero vectors.
#[derive(Debug, Clone)]
pub struct ModelGrads {
    pub regressor: HeadGrads,
    pub transformers: BTreeMap<String, Vec<f64>>,
}

/// Loss and gradients for one single-dataset batch.
pub fn batch_gradients(
    model: &QualityModel,
    exec: Execution,
    dataset_id: &str,
    features: &[&Matrix],
    mos: &[f64],
    lambda: f64,
) -> Result<(LossValue, ModelGrads)> {
    let transformer = model.transformer(dataset_id)?;
    let qp = model.regressor.forward_batch_in(exec, features)?;
    let qr = transformer.forward(&qp)?;
    let loss = combined_loss(&qr, mos, lambda)?;
    if !loss.total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss {} on a batch of dataset {dataset_id}",
            loss.total
        )));
    }
    let upstream = combined_loss_grad(&qr, mos, lambda)?;
    let tg = transformer.backward(&qp, &upstream)?;
    let regressor = model
        .regressor
        .batch_backward_in(exec, features, &tg.input)?;
    let transformers = model
        .transformers
        .iter()
        .map(|(id, t)| {
            let g = if id == dataset_id {
                tg.flat()
            } else {
                vec![0.0; t.parameter_count()]
            };
            (id.clone(), g)
        })
        .collect();
    Ok((
        loss,
        ModelGrads {
            regressor,
            transformers,
        },
    ))
}

fn check_finite(grads: &[f64], what: &str) -> Result<()> {
    match grads.iter().position(|g| !g.is_finite()) {
        Some(i) => Err(Error::Numeric(format!(
            "non-finite gradient at {what}[{i}]"
        ))),
        None => Ok(()),
    }
}

fn subset_features<'a>(d: &'a LoadedDataset, idx: &[usize]) -> (Vec<&'a Matrix>, Vec<f64>) {
    let feats = idx.iter().map(|&i| &d.features[i]).collect();
    let mos = idx.iter().map(|&i| d.manifest.records[i].mos).collect();
    (feats, mos)
}

/// Raw-mode weighted SRCC on each dataset's validation subset. A dataset
/// whose predictions are all equal contributes 0.
fn validation_srcc(
    model: &QualityModel,
    exec: Execution,
    data: &[LoadedDataset],
    val: &[Vec<usize>],
) -> Result<f64> {
    let mut num = 0.0;
    let mut den = 0usize;
    for (d, idx) in data.iter().zip(val) {
        if idx.is_empty() {
            continue;
        }
        let (feats, mos) = subset_features(d, idx);
        let qp = model.predict_batch_in(exec, &feats)?;
        if let Some(i) = qp.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite prediction for sample {} of dataset {}",
                d.manifest.records[idx[i]].sample_id,
                d.dataset_id()
            )));
        }
        let s = match crate::metrics::srcc(&qp, &mos) {
            Ok(s) => s,
            Err(Error::UndefinedCorrelation(_)) => 0.0,
            Err(e) => return Err(e),
        };
        num += s * idx.len() as f64;
        den += idx.len();
    }
    if den == 0 {
        return Err(Error::Validation("validation subsets are empty".into()));
    }
    Ok(num / den as f64)
}

/// Trains `model` on the training subsets of `split`. Batches are drawn
/// from one dataset each and visited sequentially; within a batch the
/// per-sample work uses `Execution::default()`.
pub fn train(
    model: QualityModel,
    data: &[LoadedDataset],
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    train_in(Execution::default(), model, data, split, config)
}

pub fn train_in(
    exec: Execution,
    mut model: QualityModel,
    data: &[LoadedDataset],
    split: &DataSplit,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    for d in data {
        model.transformer(d.dataset_id())?;
    }
    let mut train_idx = Vec::with_capacity(data.len());
    let mut val_idx = Vec::with_capacity(data.len());
    for d in data {
        let a = split.get(d.dataset_id())?;
        train_idx.push((
            d.dataset_id().to_string(),
            a.indices(&d.manifest, Subset::Train),
        ));
        val_idx.push(a.indices(&d.manifest, Subset::Val));
    }

    let hyper = |lr| AdamHyper {
        lr,
        beta1: config.beta1,
        beta2: config.beta2,
        eps: config.adam_eps,
    };
    let reg_hyper = hyper(config.lr_regressor);
    let tr_hyper = hyper(config.lr_transformer);
    let mut reg_state = AdamState::new(model.regressor.parameter_count());
    let mut tr_states: BTreeMap<String, AdamState> = model
        .transformers
        .iter()
        .map(|(id, t)| (id.clone(), AdamState::new(t.parameter_count())))
        .collect();

    let mut log = Vec::new();
    let mut best = model.clone();
    let mut best_val = None::<f64>;
    let mut best_epoch = None;
    let mut stale = 0;
    let mut epochs_run = 0;

    for epoch in 0..config.epochs {
        let batches = make_batches(&train_idx, config.batch_size, config.seed, epoch as u64)?;
        let mut sums = [0.0; 3];
        for (b, batch) in batches.iter().enumerate() {
            let d = &data[batch.dataset];
            let (feats, mos) = subset_features(d, &batch.indices);
            let (loss, grads) =
                batch_gradients(&model, exec, &batch.dataset_id, &feats, &mos, config.lambda)?;

            let g = grads.regressor.flat();
            check_finite(&g, "regressor")?;
            let mut p = model.regressor.flat_params();
            reg_state.step(&mut p, &g, reg_hyper)?;
            model.regressor.set_flat_params(&p)?;

            let t = model
                .transformers
                .get_mut(&batch.dataset_id)
                .expect("checked above");
            let g = &grads.transformers[&batch.dataset_id];
            check_finite(g, &batch.dataset_id)?;
            let mut p = t.flat_params();
            tr_states
                .get_mut(&batch.dataset_id)
                .expect("one state per transformer")
                .step(&mut p, g, tr_hyper)?;
            t.set_flat_params(&p)?;

            sums[0] += loss.smooth_l1;
            sums[1] += loss.nin;
            sums[2] += loss.total;
            log.push(LogRecord {
                epoch,
                batch: Some(b),
                dataset_id: Some(batch.dataset_id.clone()),
                loss_sl: loss.smooth_l1,
                loss_nin: loss.nin,
                loss_all: loss.total,
                val_weighted_srcc: None,
            });
        }
        let n = batches.len().max(1) as f64;
        let val = validation_srcc(&model, exec, data, &val_idx)?;
        log.push(LogRecord {
            epoch,
            batch: None,
            dataset_id: None,
            loss_sl: sums[0] / n,
            loss_nin: sums[1] / n,
            loss_all: sums[2] / n,
            val_weighted_srcc: Some(val),
        });
        log::info!(
            "epoch {epoch}: loss {:.5} (smooth-l1 {:.5}, nin {:.5}), val weighted SRCC {val:.4}",
            sums[2] / n,
            sums[0] / n,
            sums[1] / n
        );
        epochs_run = epoch + 1;
        if best_val.is_none_or(|b| val > b) {
            best_val = Some(val);
            best_epoch = Some(epoch);
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                log::info!("no validation improvement for {stale} epochs, stopping");
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        log,
        epochs_run,
        best_epoch,
        best_val_srcc: best_val,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    /// Correlate the regressor output directly.
    Raw,
    /// Map through the dataset's transformer first.
    Calibrated,
}

/// Per-dataset SRCC/PLCC on `subset` (every sample when `split` is absent).
pub fn evaluate(
    model: &QualityModel,
    data: &[LoadedDataset],
    split: Option<&DataSplit>,
    subset: Subset,
    mode: EvalMode,
) -> Result<WeightedReport> {
    evaluate_in(Execution::default(), model, data, split, subset, mode)
}

pub fn evaluate_in(
    exec: Execution,
    model: &QualityModel,
    data: &[LoadedDataset],
    split: Option<&DataSplit>,
    subset: Subset,
    mode: EvalMode,
) -> Result<WeightedReport> {
    if mode == EvalMode::Calibrated {
        for d in data {
            model.transformer(d.dataset_id())?;
        }
    }
    let mut results = BTreeMap::new();
    for d in data {
        let idx = match split {
            Some(s) => s.get(d.dataset_id())?.indices(&d.manifest, subset),
            None => (0..d.features.len()).collect(),
        };
        if idx.is_empty() {
            return Err(Error::Validation(format!(
                "dataset {} has no samples in the {subset:?} subset",
                d.dataset_id()
            )));
        }
        let (feats, mos) = subset_features(d, &idx);
        let mut pred = model.predict_batch_in(exec, &feats)?;
        if mode == EvalMode::Calibrated {
            pred = model.calibrate(d.dataset_id(), &pred)?;
        }
        results.insert(
            d.dataset_id().to_string(),
            CorrelationResult::compute(&pred, &mos)?,
        );
    }
    weighted_report(results)
}

/// Discovers and loads every dataset under `root`, checking that all
/// feature maps share one channel count.
pub fn load_training_data(
    root: &Path,
    channels: Option<usize>,
    exec: Execution,
) -> Result<Vec<LoadedDataset>> {
    let manifests = discover_datasets(root)?;
    if manifests.is_empty() {
        return Err(Error::Validation(format!(
            "no datasets found under {}",
            root.display()
        )));
    }
    load_manifests(root, manifests, channels, exec)
}

/// Loads only the listed dataset directories (relative to `root`).
pub fn load_dataset_dirs(
    root: &Path,
    dirs: &[PathBuf],
    channels: Option<usize>,
    exec: Execution,
) -> Result<Vec<LoadedDataset>> {
    if dirs.is_empty() {
        return Err(Error::Config("the dataset list is empty".into()));
    }
    let mut manifests = Vec::with_capacity(dirs.len());
    let mut ids = BTreeSet::new();
    for dir in dirs {
        let m = DatasetManifest::read(root, dir)?;
        if !ids.insert(m.dataset_id().to_string()) {
            return Err(Error::Validation(format!(
                "dataset id {} appears twice",
                m.dataset_id()
            )));
        }
        manifests.push(m);
    }
    load_manifests(root, manifests, channels, exec)
}

fn load_manifests(
    root: &Path,
    manifests: Vec<DatasetManifest>,
    channels: Option<usize>,
    exec: Execution,
) -> Result<Vec<LoadedDataset>> {
    let mut out = Vec::with_capacity(manifests.len());
    let mut channels = channels;
    for m in manifests {
        let d = load_dataset(root, m, channels, exec)?;
        if channels.is_none() {
            channels = d.features.first().map(Matrix::rows);
        }
        out.push(d);
    }
    Ok(out)
}

/// Results of retraining on several independently seeded splits.
#[derive(Debug, Clone)]
pub struct SplitRuns {
    pub seeds: Vec<u64>,
    pub reports: Vec<WeightedReport>,
    pub median: WeightedReport,
}

/// Trains one fresh model per split (seeds `config.seed + i`) and reports
/// test-subset medians.
pub fn run_splits(
    data: &[LoadedDataset],
    config: &TrainConfig,
    n_splits: usize,
    mode: EvalMode,
) -> Result<SplitRuns> {
    if n_splits == 0 {
        return Err(Error::Config("at least one split is required".into()));
    }
    let channels = channels_of(data)?;
    let ids: Vec<&str> = data.iter().map(LoadedDataset::dataset_id).collect();
    let manifests: Vec<_> = data.iter().map(|d| d.manifest.clone()).collect();
    let mut seeds = Vec::with_capacity(n_splits);
    let mut reports = Vec::with_capacity(n_splits);
    for i in 0..n_splits {
        let cfg = TrainConfig {
            seed: config.seed.wrapping_add(i as u64),
            ..config.clone()
        };
        let split = split_all(&manifests, cfg.seed, cfg.proportions)?;
        let model = QualityModel::init(channels, &ids, &cfg)?;
        let out = train(model, data, &split, &cfg)?;
        let report = evaluate(&out.model, data, Some(&split), Subset::Test, mode)?;
        log::info!(
            "split {i} (seed {}): weighted SRCC {:.4}",
            cfg.seed,
            report.weighted_srcc
        );
        seeds.push(cfg.seed);
        reports.push(report);
    }
    let median = median_over_splits(&reports)?;
    Ok(SplitRuns {
        seeds,
        reports,
        median,
    })
}

pub(crate) fn channels_of(data: &[LoadedDataset]) -> Result<usize> {
    data.iter()
        .find_map(|d| d.features.first().map(Matrix::rows))
        .ok_or_else(|| Error::Validation("no feature maps loaded".into()))
}
