use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, FormatError, Result};
use crate::par::Execution;

use super::read_feature_file;

pub const DESCRIPTOR_FILE: &str = "descriptor.json";
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetDescriptor {
    pub dataset_id: String,
    pub native_min: f64,
    pub native_max: f64,
    pub higher_is_better: bool,
}

impl DatasetDescriptor {
    pub fn validate(&self) -> Result<()> {
        if self.dataset_id.is_empty()
            || self.dataset_id.contains(['/', '\\'])
            || self.dataset_id.starts_with('.')
        {
            return Err(Error::Validation(format!(
                "invalid dataset id {:?}",
                self.dataset_id
            )));
        }
        if !(self.native_min.is_finite()
            && self.native_max.is_finite()
            && self.native_min < self.native_max)
        {
            return Err(Error::Validation(format!(
                "dataset {}: native range [{}, {}] is empty or not finite",
                self.dataset_id, self.native_min, self.native_max
            )));
        }
        Ok(())
    }
}

/// One CSV row as stored on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub sample_id: String,
    pub content_id: String,
    pub feature_path: String,
    pub mos_raw: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleRecord {
    pub dataset_id: String,
    pub sample_id: String,
    pub content_id: String,
    /// Relative to the data root.
    pub feature_path: PathBuf,
    pub mos_raw: f64,
    /// Opinion score rescaled to [0, 10], higher meaning better.
    pub mos: f64,
    pub higher_is_better: bool,
}

/// Linear map of a native score onto [0, 10]. Scores where lower is better
/// are flipped so that 10 is always the best quality.
pub fn rescale_mos(
    mos_raw: f64,
    native_min: f64,
    native_max: f64,
    higher_is_better: bool,
) -> Result<f64> {
    if !(native_min < native_max) {
        return Err(Error::Validation(format!(
            "empty native range [{native_min}, {native_max}]"
        )));
    }
    if !(mos_raw >= native_min && mos_raw <= native_max) {
        return Err(Error::Validation(format!(
            "score {mos_raw} outside the native range [{native_min}, {native_max}]"
        )));
    }
    let scaled = (10.0 * (mos_raw - native_min) / (native_max - native_min)).clamp(0.0, 10.0);
    Ok(if higher_is_better {
        scaled
    } else {
        10.0 - scaled
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub descriptor: DatasetDescriptor,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn from_rows(descriptor: DatasetDescriptor, rows: Vec<ManifestRow>) -> Result<Self> {
        descriptor.validate()?;
        let id = &descriptor.dataset_id;
        let mut seen = BTreeSet::new();
        let mut records = Vec::with_capacity(rows.len());
        for row in rows {
            if row.content_id.is_empty() {
                return Err(Error::Validation(format!(
                    "dataset {id} sample {}: empty content_id",
                    row.sample_id
                )));
            }
            if !seen.insert(row.sample_id.clone()) {
                return Err(Error::Validation(format!(
                    "dataset {id}: duplicate sample_id {}",
                    row.sample_id
                )));
            }
            let mos = rescale_mos(
                row.mos_raw,
                descriptor.native_min,
                descriptor.native_max,
                descriptor.higher_is_better,
            )
            .map_err(|e| {
                Error::Validation(format!("dataset {id} sample {}: {e}", row.sample_id))
            })?;
            records.push(SampleRecord {
                dataset_id: id.clone(),
                sample_id: row.sample_id,
                content_id: row.content_id,
                feature_path: PathBuf::from(row.feature_path),
                mos_raw: row.mos_raw,
                mos,
                higher_is_better: descriptor.higher_is_better,
            });
        }
        if records.is_empty() {
            return Err(Error::Validation(format!("dataset {id} has no samples")));
        }
        Ok(DatasetManifest {
            descriptor,
            records,
        })
    }

    pub fn dataset_id(&self) -> &str {
        &self.descriptor.dataset_id
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn content_ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.content_id.as_str()).collect()
    }

    /// Reads `<root>/<dir>/descriptor.json` and `manifest.csv`.
    pub fn read(root: &Path, dir: &Path) -> Result<Self> {
        let desc_path = root.join(dir).join(DESCRIPTOR_FILE);
        let text = fs::read_to_string(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
        let descriptor: DatasetDescriptor =
            serde_json::from_str(&text).map_err(|e| FormatError::Manifest {
                path: desc_path.clone(),
                message: e.to_string(),
            })?;
        let csv_path = root.join(dir).join(MANIFEST_FILE);
        let mut reader = csv::Reader::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
        let headers = reader
            .headers()
            .map_err(|e| csv_error(&csv_path, e))?
            .clone();
        let expected = ["sample_id", "content_id", "feature_path", "mos_raw"];
        if headers.iter().ne(expected) {
            return Err(FormatError::Manifest {
                path: csv_path,
                message: format!(
                    "header must be {}, got {}",
                    expected.join(","),
                    headers.iter().collect::<Vec<_>>().join(",")
                ),
            }
            .into());
        }
        let rows = reader
            .deserialize()
            .collect::<std::result::Result<Vec<ManifestRow>, _>>()
            .map_err(|e| csv_error(&csv_path, e))?;
        Self::from_rows(descriptor, rows)
    }

    /// Writes the descriptor and CSV under `<root>/<dataset_id>/`.
    pub fn write(&self, root: &Path) -> Result<()> {
        let dir = root.join(self.dataset_id());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let desc_path = dir.join(DESCRIPTOR_FILE);
        let mut json = serde_json::to_string_pretty(&self.descriptor).expect("plain struct");
        json.push('\n');
        fs::write(&desc_path, json).map_err(|e| Error::io(&desc_path, e))?;
        let csv_path = dir.join(MANIFEST_FILE);
        let mut writer = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
        for r in &self.records {
            writer
                .serialize(ManifestRow {
                    sample_id: r.sample_id.clone(),
                    content_id: r.content_id.clone(),
                    feature_path: r.feature_path.to_string_lossy().replace('\\', "/"),
                    mos_raw: r.mos_raw,
                })
                .map_err(|e| csv_error(&csv_path, e))?;
        }
        writer.flush().map_err(|e| Error::io(&csv_path, e))
    }
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => FormatError::Manifest {
            path: path.into(),
            message: format!("{other:?}"),
        }
        .into(),
    }
}

/// Every subdirectory of `root` holding a descriptor, sorted by name.
pub fn discover_datasets(root: &Path) -> Result<Vec<DatasetManifest>> {
    let entries = fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    let mut dirs = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        if entry.path().join(DESCRIPTOR_FILE).is_file() {
            dirs.push(PathBuf::from(entry.file_name()));
        }
    }
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Validation(format!(
            "no dataset descriptors found under {}",
            root.display()
        )));
    }
    let manifests = dirs
        .iter()
        .map(|d| DatasetManifest::read(root, d))
        .collect::<Result<Vec<_>>>()?;
    let mut ids = BTreeSet::new();
    for m in &manifests {
        if !ids.insert(m.dataset_id()) {
            return Err(Error::Validation(format!(
                "dataset id {} appears twice",
                m.dataset_id()
            )));
        }
    }
    Ok(manifests)
}

/// A manifest with every feature map resident in memory.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub manifest: DatasetManifest,
    pub features: Vec<Matrix>,
}

impl LoadedDataset {
    pub fn dataset_id(&self) -> &str {
        self.manifest.dataset_id()
    }

    pub fn mos(&self) -> Vec<f64> {
        self.manifest.records.iter().map(|r| r.mos).collect()
    }
}

/// Reads every feature file of `manifest`. When `channels` is given, each
/// file must have that many rows; mismatches name the offending file.
pub fn load_dataset(
    root: &Path,
    manifest: DatasetManifest,
    channels: Option<usize>,
    exec: Execution,
) -> Result<LoadedDataset> {
    let features = exec.try_map(&manifest.records, |r| {
        let path = root.join(&r.feature_path);
        let m = read_feature_file(&path)?;
        match channels {
            Some(c) if m.rows() != c => Err(Error::Dimension(format!(
                "{}: feature map {} has {} channels, the regressor expects {c}",
                path.display(),
                m.shape_str(),
                m.rows()
            ))),
            _ => Ok(m),
        }
    })?;
    if let Some(first) = features.first() {
        let l = first.cols();
        if let Some((r, m)) = manifest
            .records
            .iter()
            .zip(&features)
            .find(|(_, m)| m.cols() != l)
        {
            return Err(Error::Dimension(format!(
                "{}: spatial length {} differs from {l} used by the rest of dataset {}",
                root.join(&r.feature_path).display(),
                m.cols(),
                manifest.dataset_id()
            )));
        }
    }
    Ok(LoadedDataset { manifest, features })
}
