use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::data::Proportions;
use crate::error::{Error, Result};
use crate::monotone::{default_widths, validate_widths, DEFAULT_ALPHA, DEFAULT_DEPTH};
use crate::regressor::{PoolNormalization, DEFAULT_HIDDEN1, DEFAULT_HIDDEN2};

/// Every training hyper-parameter. Missing keys in a config file take the
/// defaults below; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Adam learning rate for the shared regressor.
    pub lr_regressor: f64,
    /// Adam learning rate for every per-dataset transformer.
    pub lr_transformer: f64,
    pub batch_size: usize,
    /// Weight of the norm-in-norm term.
    pub lambda: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub cfcl_depth: usize,
    /// Explicit transformer widths; derived from `cfcl_depth` when absent.
    pub transformer_widths: Option<Vec<usize>>,
    pub allow_any_depth: bool,
    pub elu_alpha: f64,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub hidden1: usize,
    pub hidden2: usize,
    pub normalization: PoolNormalization,
    pub proportions: Proportions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_regressor: 3e-5,
            lr_transformer: 3e-4,
            batch_size: 32,
            lambda: 1.0,
            epochs: 50,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            cfcl_depth: DEFAULT_DEPTH,
            transformer_widths: None,
            allow_any_depth: false,
            elu_alpha: DEFAULT_ALPHA,
            patience: 10,
            hidden1: DEFAULT_HIDDEN1,
            hidden2: DEFAULT_HIDDEN2,
            normalization: PoolNormalization::None,
            proportions: Proportions::default(),
        }
    }
}

/// Default widths for the supported depths; `[1, 8, …, 8, 1]` otherwise.
pub fn widths_for_depth(depth: usize) -> Vec<usize> {
    default_widths(depth).unwrap_or_else(|_| {
        let mut w = vec![1];
        w.extend(std::iter::repeat_n(8, depth.saturating_sub(1)));
        w.push(1);
        w
    })
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("lr_regressor", self.lr_regressor),
            ("lr_transformer", self.lr_transformer),
            ("adam_eps", self.adam_eps),
            ("elu_alpha", self.elu_alpha),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!(
                "lambda must be non-negative, got {}",
                self.lambda
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "batch_size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.hidden1 == 0 || self.hidden2 == 0 {
            return Err(Error::Config(
                "regressor hidden widths must be positive".into(),
            ));
        }
        self.proportions.validate()?;
        let widths = self.widths();
        if widths.len() != self.cfcl_depth + 1 {
            return Err(Error::Config(format!(
                "transformer_widths {widths:?} describe {} layers but cfcl_depth is {}",
                widths.len().saturating_sub(1),
                self.cfcl_depth
            )));
        }
        validate_widths(&widths, self.allow_any_depth)
    }

    pub fn widths(&self) -> Vec<usize> {
        self.transformer_widths
            .clone()
            .unwrap_or_else(|| widths_for_depth(self.cfcl_depth))
    }
}

/// On-disk run configuration: every [`TrainConfig`] key at the top level,
/// plus optional `datasets` (dataset directories relative to the data root)
/// and `output_dir`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfigFile {
    pub train: TrainConfig,
    pub datasets: Option<Vec<PathBuf>>,
    pub output_dir: Option<PathBuf>,
}

fn take_key<T: serde::de::DeserializeOwned>(
    obj: &mut serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<Option<T>> {
    obj.remove(key)
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| Error::Config(format!("run config key {key}: {e}")))
}

impl RunConfigFile {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("run config: {e}")))?;
        let obj = value
            .as_object_mut()
            .ok_or_else(|| Error::Config("run config must be a JSON object".into()))?;
        let datasets = take_key(obj, "datasets")?;
        let output_dir = take_key(obj, "output_dir")?;
        let train: TrainConfig =
            serde_json::from_value(value).map_err(|e| Error::Config(format!("run config: {e}")))?;
        train.validate()?;
        Ok(RunConfigFile {
            train,
            datasets,
            output_dir,
        })
    }

    pub fn to_json(&self) -> String {
        let mut value = serde_json::to_value(&self.train).expect("plain struct");
        let obj = value
            .as_object_mut()
            .expect("struct serializes to an object");
        if let Some(d) = &self.datasets {
            obj.insert("datasets".into(), serde_json::to_value(d).expect("paths"));
        }
        if let Some(o) = &self.output_dir {
            obj.insert("output_dir".into(), serde_json::to_value(o).expect("path"));
        }
        serde_json::to_string_pretty(&value).expect("json value")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = TrainConfig::default();
        assert_eq!((c.lr_regressor, c.lr_transformer), (3e-5, 3e-4));
        assert_eq!((c.batch_size, c.lambda, c.cfcl_depth), (32, 1.0, 5));
        assert_eq!(c.widths(), vec![1, 8, 16, 16, 8, 1]);
        c.validate().unwrap();
    }

    #[test]
    fn run_config_defaults_and_unknown_keys() {
        let r = RunConfigFile::from_json(r#"{"epochs": 3, "output_dir": "out"}"#).unwrap();
        assert_eq!(r.train.epochs, 3);
        assert_eq!(r.train.batch_size, 32);
        assert_eq!(r.output_dir, Some(PathBuf::from("out")));
        assert!(matches!(
            RunConfigFile::from_json(r#"{"epochz": 3}"#),
            Err(Error::Config(_))
        ));
        let back = RunConfigFile::from_json(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn depth_four_needs_override() {
        let c = TrainConfig {
            cfcl_depth: 4,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        let c = TrainConfig {
            allow_any_depth: true,
            ..c
        };
        c.validate().unwrap();
        assert_eq!(c.widths(), vec![1, 8, 8, 8, 1]);
    }

    #[test]
    fn invalid_values_rejected() {
        for c in [
            TrainConfig {
                lr_regressor: 0.0,
                ..Default::default()
            },
            TrainConfig {
                lambda: -1.0,
                ..Default::default()
            },
            TrainConfig {
                batch_size: 1,
                ..Default::default()
            },
            TrainConfig {
                transformer_widths: Some(vec![1, 4, 1]),
                ..Default::default()
            },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
