use std::collections::BTreeMap;

use crate::data::stream_seed;
use crate::diffcore::Matrix;
use crate::error::{Error, Result};
use crate::monotone::{MonotonicTransformer, TransformerOptions};
use crate::par::Execution;
use crate::regressor::{RegressorConfig, RegressorHead};

use super::checkpoint;
use super::config::TrainConfig;

/// The shared regressor plus one monotonic transformer per training dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    pub regressor: RegressorHead,
    pub transformers: BTreeMap<String, MonotonicTransformer>,
}

impl QualityModel {
    /// Fresh model for `channels`-channel features and the given datasets,
    /// seeded from `config.seed`.
    pub fn init<S: AsRef<str>>(
        channels: usize,
        dataset_ids: &[S],
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let reg_config = RegressorConfig {
            channels,
            hidden1: config.hidden1,
            hidden2: config.hidden2,
            normalization: config.normalization,
        };
        let regressor = RegressorHead::new(reg_config, stream_seed(config.seed, "regressor", 2))?;
        let opts = TransformerOptions {
            alpha: config.elu_alpha,
            allow_any_depth: config.allow_any_depth,
            ..Default::default()
        };
        let widths = config.widths();
        let mut transformers = BTreeMap::new();
        for id in dataset_ids {
            let id = id.as_ref();
            let t =
                MonotonicTransformer::with_options(&widths, stream_seed(config.seed, id, 3), opts)?;
            if transformers.insert(id.to_string(), t).is_some() {
                return Err(Error::Config(format!("dataset {id} listed twice")));
            }
        }
        Ok(QualityModel {
            regressor,
            transformers,
        })
    }

    pub fn channels(&self) -> usize {
        self.regressor.channels()
    }

    pub fn transformer(&self, dataset_id: &str) -> Result<&MonotonicTransformer> {
        self.transformers.get(dataset_id).ok_or_else(|| {
            Error::Config(format!(
                "no transformer for dataset {dataset_id}; known datasets: {:?}",
                self.transformers.keys().collect::<Vec<_>>()
            ))
        })
    }

    /// Raw predicted quality. Only the regressor is involved.
    pub fn predict(&self, features: &Matrix) -> Result<f64> {
        self.regressor.forward(features)
    }

    pub fn predict_batch_in(&self, exec: Execution, features: &[&Matrix]) -> Result<Vec<f64>> {
        self.regressor.forward_batch_in(exec, features)
    }

    pub fn predict_batch(&self, features: &[&Matrix]) -> Result<Vec<f64>> {
        self.predict_batch_in(Execution::default(), features)
    }

    /// Raw prediction mapped onto `dataset_id`'s MOS scale.
    pub fn calibrate(&self, dataset_id: &str, qp: &[f64]) -> Result<Vec<f64>> {
        self.transformer(dataset_id)?.forward(qp)
    }

    pub fn parameter_count(&self) -> usize {
        self.regressor.parameter_count()
            + self
                .transformers
                .values()
                .map(|t| t.parameter_count())
                .sum::<usize>()
    }

    /// The model a checkpoint round trip produces: regressor parameters
    /// rounded to f32 and transformer weights re-derived from their f32
    /// effective values.
    pub fn quantize_f32(&self) -> Result<Self> {
        let mut out = self.clone();
        let reg: Vec<f64> = out
            .regressor
            .flat_params()
            .iter()
            .map(|&v| v as f32 as f64)
            .collect();
        out.regressor.set_flat_params(&reg)?;
        for t in out.transformers.values_mut() {
            checkpoint::quantize_transformer(t);
        }
        Ok(out)
    }
}
