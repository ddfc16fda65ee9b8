//! Checkpoint container.
//!
//! ```text
//! "MQAC" | u32 LE header length | JSON header | f32 LE tensor blob
//! ```
//!
//! The header lists every tensor by name and shape in blob order. CFCL
//! layers are stored as their effective weights rather than `theta`, so a
//! reader can check positivity without knowing the reparameterization.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::ops::softplus_inverse;
use crate::diffcore::Matrix;
use crate::error::{Error, FormatError, Result};
use crate::monotone::{CfclLayer, MonotonicTransformer, WEIGHT_FLOOR};
use crate::regressor::{Dense, RegressorConfig, RegressorHead};

use super::config::TrainConfig;
use super::model::QualityModel;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"MQAC";
pub const CHECKPOINT_VERSION: u32 = 1;
const REGRESSOR_LAYERS: [&str; 3] = ["fc1", "fc2", "fc_out"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorSpec {
    pub name: String,
    pub shape: [usize; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformerEntry {
    pub dataset_id: String,
    pub widths: Vec<usize>,
    pub alpha: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub version: u32,
    pub regressor: RegressorConfig,
    pub transformers: Vec<TransformerEntry>,
    pub tensors: Vec<TensorSpec>,
    pub train_config: Option<TrainConfig>,
}

impl CheckpointHeader {
    fn expected_tensors(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        for (name, (fan_in, fan_out)) in REGRESSOR_LAYERS.iter().zip(self.regressor.layer_shapes())
        {
            out.push(TensorSpec {
                name: format!("regressor.{name}.weight"),
                shape: [fan_in, fan_out],
            });
            out.push(TensorSpec {
                name: format!("regressor.{name}.bias"),
                shape: [1, fan_out],
            });
        }
        for t in &self.transformers {
            for (k, w) in t.widths.windows(2).enumerate() {
                out.push(TensorSpec {
                    name: cfcl_name(&t.dataset_id, k, "weight"),
                    shape: [w[0], w[1]],
                });
                out.push(TensorSpec {
                    name: cfcl_name(&t.dataset_id, k, "bias"),
                    shape: [1, w[1]],
                });
            }
        }
        out
    }
}

fn cfcl_name(dataset_id: &str, layer: usize, part: &str) -> String {
    format!("transformer.{dataset_id}.cfcl{}.{part}", layer + 1)
}

/// A CFCL weight that fails the positivity check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightViolation {
    pub location: String,
    pub value: f32,
}

/// A parsed checkpoint before any model is built from it.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub path: PathBuf,
    pub header: CheckpointHeader,
    pub tensors: Vec<Vec<f32>>,
}

fn header_err(path: &Path, message: impl Into<String>) -> Error {
    FormatError::Header {
        path: path.to_path_buf(),
        message: message.into(),
    }
    .into()
}

fn take<'a>(bytes: &'a [u8], at: usize, n: usize, path: &Path) -> Result<&'a [u8]> {
    bytes.get(at..at + n).ok_or_else(|| {
        FormatError::Truncated {
            path: path.to_path_buf(),
            expected: at + n,
            found: bytes.len(),
        }
        .into()
    })
}

impl RawCheckpoint {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let magic = take(bytes, 0, 4, path)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(FormatError::BadMagic {
                path: path.to_path_buf(),
                expected: CHECKPOINT_MAGIC,
                found: magic.try_into().expect("4 bytes"),
            }
            .into());
        }
        let len =
            u32::from_le_bytes(take(bytes, 4, 4, path)?.try_into().expect("4 bytes")) as usize;
        let header_bytes = take(bytes, 8, len, path)?;
        let header: CheckpointHeader = serde_json::from_slice(header_bytes)
            .map_err(|e| header_err(path, format!("invalid JSON header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(FormatError::BadVersion {
                path: path.to_path_buf(),
                expected: CHECKPOINT_VERSION,
                found: header.version,
            }
            .into());
        }
        let expected = header.expected_tensors();
        if expected != header.tensors {
            return Err(FormatError::Shape {
                path: path.to_path_buf(),
                message: format!(
                    "tensor table does not match the declared architecture: expected {}, found {}",
                    describe(&expected),
                    describe(&header.tensors)
                ),
            }
            .into());
        }
        let total: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1]).sum();
        let blob_start = 8 + len;
        let blob = take(bytes, blob_start, total * 4, path)?;
        if bytes.len() != blob_start + total * 4 {
            return Err(header_err(
                path,
                format!(
                    "{} trailing bytes after the tensor blob",
                    bytes.len() - blob_start - total * 4
                ),
            ));
        }
        let mut values = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        if let Some(index) = blob
            .chunks_exact(4)
            .position(|c| !f32::from_le_bytes(c.try_into().expect("4 bytes")).is_finite())
        {
            return Err(FormatError::NonFinite {
                path: path.to_path_buf(),
                index,
            }
            .into());
        }
        let tensors = header
            .tensors
            .iter()
            .map(|t| values.by_ref().take(t.shape[0] * t.shape[1]).collect())
            .collect();
        Ok(RawCheckpoint {
            path: path.to_path_buf(),
            header,
            tensors,
        })
    }

    /// Every CFCL weight below the positivity floor, in blob order.
    pub fn constrained_weight_violations(&self) -> Vec<WeightViolation> {
        let floor = WEIGHT_FLOOR as f32;
        let mut out = Vec::new();
        for (spec, values) in self.header.tensors.iter().zip(&self.tensors) {
            if !(spec.name.starts_with("transformer.") && spec.name.ends_with(".weight")) {
                continue;
            }
            for (i, &v) in values.iter().enumerate() {
                if v < floor {
                    out.push(WeightViolation {
                        location: format!(
                            "{}[{},{}]",
                            spec.name,
                            i / spec.shape[1],
                            i % spec.shape[1]
                        ),
                        value: v,
                    });
                }
            }
        }
        out
    }

    /// Builds the model, refusing any checkpoint with a non-positive CFCL
    /// weight.
    pub fn into_model(self) -> Result<QualityModel> {
        if let Some(v) = self.constrained_weight_violations().into_iter().next() {
            return Err(FormatError::ConstrainedWeight {
                path: self.path,
                location: v.location,
                value: v.value,
            }
            .into());
        }
        let mut tensors = self
            .header
            .tensors
            .iter()
            .zip(self.tensors)
            .map(|(spec, v)| {
                Matrix::from_vec(
                    spec.shape[0],
                    spec.shape[1],
                    v.into_iter().map(f64::from).collect(),
                )
            });
        let mut next = || {
            tensors
                .next()
                .expect("tensor table checked against the architecture")
        };
        let mut dense = Vec::with_capacity(3);
        for _ in 0..3 {
            dense.push(Dense::from_parts(next()?, next()?)?);
        }
        let layers: [Dense; 3] = dense.try_into().expect("three layers");
        let regressor = RegressorHead::from_layers(self.header.regressor, layers)?;
        let mut transformers = std::collections::BTreeMap::new();
        for entry in &self.header.transformers {
            let mut cfcl = Vec::with_capacity(entry.widths.len() - 1);
            for _ in 1..entry.widths.len() {
                let theta = next()?.map(theta_from_weight);
                cfcl.push(CfclLayer::from_parts(theta, next()?)?);
            }
            let t = MonotonicTransformer::from_layers(cfcl, entry.alpha)?;
            if transformers.insert(entry.dataset_id.clone(), t).is_some() {
                return Err(header_err(
                    &self.path,
                    format!("dataset {} listed twice", entry.dataset_id),
                ));
            }
        }
        Ok(QualityModel {
            regressor,
            transformers,
        })
    }
}

fn describe(specs: &[TensorSpec]) -> String {
    let items: Vec<String> = specs
        .iter()
        .map(|t| format!("{} {}×{}", t.name, t.shape[0], t.shape[1]))
        .collect();
    format!("[{}]", items.join(", "))
}

/// Inverse of `softplus(theta) + WEIGHT_FLOOR` for a stored weight.
fn theta_from_weight(w: f64) -> f64 {
    softplus_inverse((w - WEIGHT_FLOOR).max(f64::MIN_POSITIVE))
}

/// Replaces each `theta` with the value a checkpoint round trip yields.
pub(crate) fn quantize_transformer(t: &mut MonotonicTransformer) {
    for layer in t.layers_mut() {
        let w = layer.effective_weight();
        layer.theta.value = w.map(|v| theta_from_weight(v as f32 as f64));
        layer.bias.value = layer.bias.value.map(|v| v as f32 as f64);
    }
}

fn push_f32(blob: &mut Vec<u8>, name: &str, values: &[f64]) -> Result<()> {
    for &v in values {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::Numeric(format!(
                "{name}: parameter {v} is not representable as f32"
            )));
        }
        blob.extend_from_slice(&f.to_le_bytes());
    }
    Ok(())
}

pub fn encode_checkpoint(
    model: &QualityModel,
    train_config: Option<&TrainConfig>,
) -> Result<Vec<u8>> {
    let transformers: Vec<TransformerEntry> = model
        .transformers
        .iter()
        .map(|(id, t)| TransformerEntry {
            dataset_id: id.clone(),
            widths: t.widths(),
            alpha: t.alpha(),
        })
        .collect();
    let mut header = CheckpointHeader {
        version: CHECKPOINT_VERSION,
        regressor: *model.regressor.config(),
        transformers,
        tensors: Vec::new(),
        train_config: train_config.cloned(),
    };
    header.tensors = header.expected_tensors();

    let mut blob = Vec::with_capacity(model.parameter_count() * 4);
    let mut names = header.tensors.iter().map(|t| t.name.as_str());
    for layer in model.regressor.layers() {
        push_f32(
            &mut blob,
            names.next().expect("name"),
            layer.weight.value.as_slice(),
        )?;
        push_f32(
            &mut blob,
            names.next().expect("name"),
            layer.bias.value.as_slice(),
        )?;
    }
    for t in model.transformers.values() {
        for layer in t.layers() {
            push_f32(
                &mut blob,
                names.next().expect("name"),
                layer.effective_weight().as_slice(),
            )?;
            push_f32(
                &mut blob,
                names.next().expect("name"),
                layer.bias.value.as_slice(),
            )?;
        }
    }

    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(8 + json.len() + blob.len());
    out.extend_from_slice(&CHECKPOINT_MAGIC);
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&blob);
    Ok(out)
}

/// Writes through a temporary file so a failed save never leaves a partial
/// checkpoint behind.
pub fn checkpoint_save(
    path: &Path,
    model: &QualityModel,
    train_config: Option<&TrainConfig>,
) -> Result<()> {
    let bytes = encode_checkpoint(model, train_config)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, &bytes).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn checkpoint_load(path: &Path) -> Result<QualityModel> {
    RawCheckpoint::read(path)?.into_model()
}

/// Loads a checkpoint and checks its architecture against `config`.
pub fn checkpoint_load_for(path: &Path, config: &TrainConfig) -> Result<QualityModel> {
    let raw = RawCheckpoint::read(path)?;
    let want = config.widths();
    for t in &raw.header.transformers {
        if t.widths != want {
            return Err(FormatError::Shape {
                path: path.to_path_buf(),
                message: format!(
                    "transformer {} has depth {} (widths {:?}) but the configuration requests depth {} (widths {:?})",
                    t.dataset_id,
                    t.widths.len() - 1,
                    t.widths,
                    want.len() - 1,
                    want
                ),
            }
            .into());
        }
    }
    let r = &raw.header.regressor;
    if (r.hidden1, r.hidden2, r.normalization)
        != (config.hidden1, config.hidden2, config.normalization)
    {
        return Err(FormatError::Shape {
            path: path.to_path_buf(),
            message: format!(
                "regressor hidden sizes {}/{} ({:?}) differ from the configured {}/{} ({:?})",
                r.hidden1,
                r.hidden2,
                r.normalization,
                config.hidden1,
                config.hidden2,
                config.normalization
            ),
        }
        .into());
    }
    raw.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> QualityModel {
        QualityModel::init(3, &["a", "b"], &TrainConfig::default()).unwrap()
    }

    #[test]
    fn round_trip_matches_quantized_model() {
        let m = model();
        let bytes = encode_checkpoint(&m, Some(&TrainConfig::default())).unwrap();
        let raw = RawCheckpoint::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(raw.header.train_config, Some(TrainConfig::default()));
        let loaded = raw.into_model().unwrap();
        assert_eq!(loaded, m.quantize_f32().unwrap());
        let again = encode_checkpoint(&loaded, Some(&TrainConfig::default())).unwrap();
        assert_eq!(again, bytes);
    }

    #[test]
    fn negative_weight_is_rejected() {
        let m = model();
        let mut bytes = encode_checkpoint(&m, None).unwrap();
        let raw = RawCheckpoint::decode(&bytes, Path::new("mem")).unwrap();
        let idx = raw
            .header
            .tensors
            .iter()
            .position(|t| t.name == "transformer.b.cfcl2.weight")
            .unwrap();
        let before: usize = raw.tensors[..idx].iter().map(Vec::len).sum();
        let header_len = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let at = 8 + header_len + 4 * (before + 3);
        bytes[at..at + 4].copy_from_slice(&(-0.5f32).to_le_bytes());
        let raw = RawCheckpoint::decode(&bytes, Path::new("mem")).unwrap();
        let v = raw.constrained_weight_violations();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].value, -0.5);
        assert!(
            v[0].location.starts_with("transformer.b.cfcl2.weight["),
            "{}",
            v[0].location
        );
        let err = raw.into_model().unwrap_err();
        assert_eq!(err.kind(), crate::ErrorKind::Property);
    }

    #[test]
    fn corrupted_header_length() {
        let mut bytes = encode_checkpoint(&model(), None).unwrap();
        bytes[4..8].copy_from_slice(&u32::MAX.to_le_bytes());
        assert!(matches!(
            RawCheckpoint::decode(&bytes, Path::new("mem")),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut bytes = encode_checkpoint(&model(), None).unwrap();
        bytes[4..8].copy_from_slice(&10u32.to_le_bytes());
        assert!(matches!(
            RawCheckpoint::decode(&bytes, Path::new("mem")),
            Err(Error::Format(FormatError::Header { .. }))
        ));
    }

    #[test]
    fn truncated_and_trailing_blob() {
        let bytes = encode_checkpoint(&model(), None).unwrap();
        assert!(matches!(
            RawCheckpoint::decode(&bytes[..bytes.len() - 2], Path::new("mem")),
            Err(Error::Format(FormatError::Truncated { .. }))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            RawCheckpoint::decode(&long, Path::new("mem")),
            Err(Error::Format(FormatError::Header { .. }))
        ));
        assert!(matches!(
            RawCheckpoint::decode(b"NOPE\0\0\0\0", Path::new("mem")),
            Err(Error::Format(FormatError::BadMagic { .. }))
        ));
    }

    #[test]
    fn depth_mismatch_names_both() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.mqac");
        checkpoint_save(&path, &model(), None).unwrap();
        let want = TrainConfig {
            cfcl_depth: 3,
            ..Default::default()
        };
        let err = checkpoint_load_for(&path, &want).unwrap_err().to_string();
        assert!(err.contains("depth 5") && err.contains("depth 3"), "{err}");
        checkpoint_load_for(&path, &TrainConfig::default()).unwrap();
    }
}
