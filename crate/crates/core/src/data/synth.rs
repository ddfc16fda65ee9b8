//! Synthetic mixed-scale datasets with known ground truth.
//!
//! Every sample gets a latent quality `q ~ U[0, 10]`. Its feature map is
//! `F = (q/10)·U_c + noise·N`, where `U` is one random `c×l` template shared
//! by all datasets, `U_c` adds a small per-content perturbation, and `N` is
//! i.i.d. noise; both `U` and `N` have entries of variance `s²/l` with
//! `s = feature_scale`. The default `s = 0.1` keeps the raw regressor
//! output of a freshly initialized model small enough that the default
//! transformer, whose initial slope is in the thousands, maps it into the
//! 0–10 score range rather than deep into ELU saturation. The
//! opinion score is `10·g_k(q)` plus observer noise, with `g_k` a strictly
//! increasing per-dataset curve normalized to `g_k(0) = 0`, `g_k(10) = 1`,
//! and is then stored on the dataset's native scale (flipped when lower is
//! better).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::diffcore::Matrix;
use crate::error::{Error, FormatError, Result};

use super::{stream_seed, write_feature_file, DatasetDescriptor, DatasetManifest, ManifestRow};

pub const LATENTS_FILE: &str = "latents.csv";
pub const SYNTH_CONFIG_FILE: &str = "synth_config.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MonotoneMap {
    Identity,
    /// Logistic curve `1/(1 + e^{−slope·(q − midpoint)})`, renormalized.
    Logistic {
        slope: f64,
        midpoint: f64,
    },
    /// `(q/10)^gamma`.
    Gamma {
        gamma: f64,
    },
    /// Linear interpolation through `[q, y]` knots covering [0, 10].
    PiecewiseLinear {
        knots: Vec<[f64; 2]>,
    },
}

fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl MonotoneMap {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            MonotoneMap::Identity => Ok(()),
            MonotoneMap::Logistic { slope, midpoint } => {
                if !(*slope > 0.0 && slope.is_finite() && midpoint.is_finite()) {
                    return Err(format!("logistic slope must be positive and finite, got {slope} (midpoint {midpoint})"));
                }
                Ok(())
            }
            MonotoneMap::Gamma { gamma } => {
                if !(*gamma > 0.0 && gamma.is_finite()) {
                    return Err(format!("gamma must be positive and finite, got {gamma}"));
                }
                Ok(())
            }
            MonotoneMap::PiecewiseLinear { knots } => {
                if knots.len() < 2 {
                    return Err("piecewise map needs at least two knots".into());
                }
                if knots.iter().flatten().any(|v| !v.is_finite()) {
                    return Err("piecewise knots must be finite".into());
                }
                if knots[0][0] > 0.0 || knots[knots.len() - 1][0] < 10.0 {
                    return Err("piecewise knots must cover [0, 10]".into());
                }
                for w in knots.windows(2) {
                    if !(w[1][0] > w[0][0] && w[1][1] > w[0][1]) {
                        return Err(format!(
                            "piecewise knots must strictly increase in both coordinates: {:?} then {:?}",
                            w[0], w[1]
                        ));
                    }
                }
                Ok(())
            }
        }
    }

    fn raw(&self, q: f64) -> f64 {
        match self {
            MonotoneMap::Identity => q,
            MonotoneMap::Logistic { slope, midpoint } => logistic(slope * (q - midpoint)),
            MonotoneMap::Gamma { gamma } => (q / 10.0).powf(*gamma),
            MonotoneMap::PiecewiseLinear { knots } => {
                let i = knots
                    .partition_point(|k| k[0] <= q)
                    .clamp(1, knots.len() - 1);
                let (a, b) = (knots[i - 1], knots[i]);
                a[1] + (b[1] - a[1]) * (q - a[0]) / (b[0] - a[0])
            }
        }
    }

    /// The curve on [0, 10], normalized so that `eval(0) = 0` and `eval(10) = 1`.
    pub fn eval(&self, q: f64) -> f64 {
        let (lo, hi) = (self.raw(0.0), self.raw(10.0));
        (self.raw(q) - lo) / (hi - lo)
    }
}

fn default_channels() -> usize {
    16
}
fn default_length() -> usize {
    32
}
fn default_feature_scale() -> f64 {
    0.1
}
fn default_feature_noise() -> f64 {
    0.05
}
fn default_content_jitter() -> f64 {
    0.1
}
fn default_samples_per_content() -> usize {
    4
}
fn default_label_noise() -> f64 {
    0.3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthDatasetSpec {
    pub dataset_id: String,
    pub size: usize,
    #[serde(default = "default_samples_per_content")]
    pub samples_per_content: usize,
    pub map: MonotoneMap,
    /// Observer noise standard deviation on the 10-point scale.
    #[serde(default = "default_label_noise")]
    pub label_noise: f64,
    pub native_min: f64,
    pub native_max: f64,
    pub higher_is_better: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_channels")]
    pub channels: usize,
    #[serde(default = "default_length")]
    pub length: usize,
    /// Standard deviation of template entries times `sqrt(length)`.
    #[serde(default = "default_feature_scale")]
    pub feature_scale: f64,
    #[serde(default = "default_feature_noise")]
    pub feature_noise: f64,
    #[serde(default = "default_content_jitter")]
    pub content_jitter: f64,
    #[serde(default = "default_datasets")]
    pub datasets: Vec<SynthDatasetSpec>,
}

/// Three datasets (800/600/400 samples) with logistic, gamma and
/// piecewise-linear label curves on three different native scales.
fn default_datasets() -> Vec<SynthDatasetSpec> {
    vec![
        SynthDatasetSpec {
            dataset_id: "synth_logistic".into(),
            size: 800,
            samples_per_content: 4,
            map: MonotoneMap::Logistic {
                slope: 0.6,
                midpoint: 5.0,
            },
            label_noise: 0.3,
            native_min: 0.0,
            native_max: 100.0,
            higher_is_better: true,
        },
        SynthDatasetSpec {
            dataset_id: "synth_gamma".into(),
            size: 600,
            samples_per_content: 4,
            map: MonotoneMap::Gamma { gamma: 0.6 },
            label_noise: 0.3,
            native_min: 0.0,
            native_max: 1.0,
            higher_is_better: false,
        },
        SynthDatasetSpec {
            dataset_id: "synth_piecewise".into(),
            size: 400,
            samples_per_content: 4,
            map: MonotoneMap::PiecewiseLinear {
                knots: vec![[0.0, 0.0], [3.0, 5.0], [7.0, 7.0], [10.0, 10.0]],
            },
            label_noise: 0.3,
            native_min: 1.0,
            native_max: 5.0,
            higher_is_better: true,
        },
    ]
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            channels: default_channels(),
            length: default_length(),
            feature_scale: default_feature_scale(),
            feature_noise: default_feature_noise(),
            content_jitter: default_content_jitter(),
            datasets: default_datasets(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config(
                "synthetic config needs at least one dataset".into(),
            ));
        }
        if self.channels == 0 || self.length == 0 {
            return Err(Error::Config(format!(
                "feature shape {}×{} must be non-empty",
                self.channels, self.length
            )));
        }
        if !(self.feature_scale > 0.0 && self.feature_scale.is_finite()) {
            return Err(Error::Config(format!(
                "feature_scale must be positive, got {}",
                self.feature_scale
            )));
        }
        for (name, v) in [
            ("feature_noise", self.feature_noise),
            ("content_jitter", self.content_jitter),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for d in &self.datasets {
            let fail = |msg: String| Err(Error::Config(format!("dataset {}: {msg}", d.dataset_id)));
            if !ids.insert(d.dataset_id.as_str()) {
                return fail("duplicate dataset id".into());
            }
            DatasetDescriptor {
                dataset_id: d.dataset_id.clone(),
                native_min: d.native_min,
                native_max: d.native_max,
                higher_is_better: d.higher_is_better,
            }
            .validate()
            .or_else(|e| fail(e.to_string()))?;
            if let Err(msg) = d.map.validate() {
                return fail(format!("non-monotone label map: {msg}"));
            }
            if d.size == 0 || d.samples_per_content == 0 {
                return fail("size and samples_per_content must be positive".into());
            }
            if !(d.label_noise >= 0.0 && d.label_noise.is_finite()) {
                return fail(format!(
                    "label_noise must be non-negative, got {}",
                    d.label_noise
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub sample_id: String,
    pub content_id: String,
    pub latent: f64,
    /// `10·g(latent)` before observer noise.
    pub clean_label: f64,
    pub mos_raw: f64,
    pub features: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub descriptor: DatasetDescriptor,
    pub map: MonotoneMap,
    pub samples: Vec<SynthSample>,
}

impl SynthDataset {
    pub fn feature_path(&self, sample: &SynthSample) -> PathBuf {
        PathBuf::from(format!(
            "{}/features/{}.mqaf",
            self.descriptor.dataset_id, sample.sample_id
        ))
    }

    pub fn manifest(&self) -> Result<DatasetManifest> {
        let rows = self
            .samples
            .iter()
            .map(|s| ManifestRow {
                sample_id: s.sample_id.clone(),
                content_id: s.content_id.clone(),
                feature_path: self.feature_path(s).to_string_lossy().into_owned(),
                mos_raw: s.mos_raw,
            })
            .collect();
        DatasetManifest::from_rows(self.descriptor.clone(), rows)
    }
}

fn gaussian_matrix(rows: usize, cols: usize, scale: f64, rng: &mut ChaCha8Rng) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("sized")
}

pub fn synth_generate(config: &SynthConfig) -> Result<Vec<SynthDataset>> {
    config.validate()?;
    let (c, l) = (config.channels, config.length);
    let unit = config.feature_scale / (l as f64).sqrt();
    let mut template_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let template = gaussian_matrix(c, l, unit, &mut template_rng);

    config
        .datasets
        .iter()
        .map(|spec| {
            let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(config.seed, &spec.dataset_id, 7));
            let label_noise = Normal::new(0.0, spec.label_noise)
                .map_err(|e| Error::Config(format!("dataset {}: {e}", spec.dataset_id)))?;
            let span = spec.native_max - spec.native_min;
            let mut samples = Vec::with_capacity(spec.size);
            let mut content_template = template.clone();
            for i in 0..spec.size {
                let content = i / spec.samples_per_content;
                if i % spec.samples_per_content == 0 {
                    content_template = template.clone();
                    if config.content_jitter > 0.0 {
                        let jitter = gaussian_matrix(c, l, unit * config.content_jitter, &mut rng);
                        content_template.add_assign(&jitter)?;
                    }
                }
                let latent: f64 = rng.random_range(0.0..10.0);
                let mut features = content_template.clone();
                features.scale(latent / 10.0);
                if config.feature_noise > 0.0 {
                    features.add_assign(&gaussian_matrix(
                        c,
                        l,
                        unit * config.feature_noise,
                        &mut rng,
                    ))?;
                }
                let clean_label = 10.0 * spec.map.eval(latent);
                let noisy = if spec.label_noise > 0.0 {
                    clean_label + label_noise.sample(&mut rng)
                } else {
                    clean_label
                };
                let frac = noisy.clamp(0.0, 10.0) / 10.0;
                let mos_raw = if spec.higher_is_better {
                    spec.native_min + frac * span
                } else {
                    spec.native_max - frac * span
                }
                .clamp(spec.native_min, spec.native_max);
                samples.push(SynthSample {
                    sample_id: format!("{}_{i:05}", spec.dataset_id),
                    content_id: format!("{}_c{content:04}", spec.dataset_id),
                    latent,
                    clean_label,
                    mos_raw,
                    features,
                });
            }
            Ok(SynthDataset {
                descriptor: DatasetDescriptor {
                    dataset_id: spec.dataset_id.clone(),
                    native_min: spec.native_min,
                    native_max: spec.native_max,
                    higher_is_better: spec.higher_is_better,
                },
                map: spec.map.clone(),
                samples,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentRow {
    pub sample_id: String,
    pub latent: f64,
    pub clean_label: f64,
}

/// Writes descriptors, manifests, feature files and ground-truth latents
/// under `root`, plus a copy of the generator config.
pub fn write_synth_tree(
    root: &Path,
    config: &SynthConfig,
    datasets: &[SynthDataset],
) -> Result<Vec<DatasetManifest>> {
    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;
    let cfg_path = root.join(SYNTH_CONFIG_FILE);
    let mut json = serde_json::to_string_pretty(config).expect("plain struct");
    json.push('\n');
    fs::write(&cfg_path, json).map_err(|e| Error::io(&cfg_path, e))?;
    let mut manifests = Vec::with_capacity(datasets.len());
    for d in datasets {
        let manifest = d.manifest()?;
        manifest.write(root)?;
        for s in &d.samples {
            write_feature_file(&root.join(d.feature_path(s)), &s.features)?;
        }
        let path = root.join(&d.descriptor.dataset_id).join(LATENTS_FILE);
        let mut w = csv::Writer::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
        for s in &d.samples {
            w.serialize(LatentRow {
                sample_id: s.sample_id.clone(),
                latent: s.latent,
                clean_label: s.clean_label,
            })
            .map_err(|e| Error::io(&path, e.into()))?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        manifests.push(manifest);
    }
    Ok(manifests)
}

/// Ground-truth latents written by [`write_synth_tree`], keyed by sample id.
pub fn read_latents(root: &Path, dataset_id: &str) -> Result<BTreeMap<String, LatentRow>> {
    let path = root.join(dataset_id).join(LATENTS_FILE);
    let mut r = csv::Reader::from_path(&path).map_err(|e| Error::io(&path, e.into()))?;
    let mut out = BTreeMap::new();
    for row in r.deserialize() {
        let row: LatentRow = row.map_err(|e| FormatError::Manifest {
            path: path.clone(),
            message: e.to_string(),
        })?;
        out.insert(row.sample_id.clone(), row);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{discover_datasets, read_feature_file};
    use crate::metrics::srcc;

    fn small(map: MonotoneMap, label_noise: f64, hib: bool) -> SynthConfig {
        SynthConfig {
            seed: 3,
            channels: 4,
            length: 6,
            feature_scale: 1.0,
            feature_noise: 0.0,
            content_jitter: 0.0,
            datasets: vec![SynthDatasetSpec {
                dataset_id: "d".into(),
                size: 50,
                samples_per_content: 2,
                map,
                label_noise,
                native_min: 0.0,
                native_max: 1.0,
                higher_is_better: hib,
            }],
        }
    }

    #[test]
    fn noiseless_identity_recovers_latent() {
        for hib in [true, false] {
            let d = &synth_generate(&small(MonotoneMap::Identity, 0.0, hib)).unwrap()[0];
            let m = d.manifest().unwrap();
            for (s, r) in d.samples.iter().zip(&m.records) {
                assert!(
                    (r.mos - s.latent).abs() < 1e-12,
                    "{} vs {}",
                    r.mos,
                    s.latent
                );
            }
        }
    }

    #[test]
    fn monotone_maps_preserve_rank_across_datasets() {
        let maps = [
            MonotoneMap::Logistic {
                slope: 0.4,
                midpoint: 5.0,
            },
            MonotoneMap::Logistic {
                slope: 1.5,
                midpoint: 3.0,
            },
            MonotoneMap::Gamma { gamma: 2.0 },
        ];
        let q: Vec<f64> = (0..40).map(|i| i as f64 / 4.0 + 0.1).collect();
        let labels: Vec<Vec<f64>> = maps
            .iter()
            .map(|m| q.iter().map(|&x| m.eval(x)).collect())
            .collect();
        assert_ne!(labels[0], labels[1]);
        for l in &labels {
            assert_eq!(srcc(&q, l).unwrap(), 1.0);
        }
    }

    #[test]
    fn noiseless_labels_rank_exact_within_dataset() {
        let d = &synth_generate(&small(MonotoneMap::Gamma { gamma: 0.6 }, 0.0, false)).unwrap()[0];
        let m = d.manifest().unwrap();
        let q: Vec<f64> = d.samples.iter().map(|s| s.latent).collect();
        let mos: Vec<f64> = m.records.iter().map(|r| r.mos).collect();
        assert!((srcc(&q, &mos).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn map_endpoints_and_monotonicity() {
        for m in &SynthConfig::default().datasets {
            assert!(m.map.eval(0.0).abs() < 1e-12);
            assert!((m.map.eval(10.0) - 1.0).abs() < 1e-12);
            let mut prev = -1.0;
            for i in 0..=1000 {
                let v = m.map.eval(i as f64 / 100.0);
                assert!(v > prev);
                prev = v;
            }
        }
    }

    #[test]
    fn invalid_map_names_dataset() {
        let mut cfg = SynthConfig::default();
        cfg.datasets[1].map = MonotoneMap::PiecewiseLinear {
            knots: vec![[0.0, 0.0], [5.0, 0.8], [10.0, 0.6]],
        };
        let err = synth_generate(&cfg).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(err.to_string().contains("synth_gamma"), "{err}");
        cfg.datasets[1].map = MonotoneMap::Logistic {
            slope: -1.0,
            midpoint: 5.0,
        };
        assert!(synth_generate(&cfg).is_err());
    }

    #[test]
    fn default_config_round_trips_as_json() {
        let cfg = SynthConfig::default();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SynthConfig>(&text).unwrap(), cfg);
        assert!(serde_json::from_str::<SynthConfig>(r#"{"datasets":[],"bogus":1}"#).is_err());
    }

    #[test]
    fn written_tree_reads_back() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = small(MonotoneMap::Identity, 0.3, true);
        let data = synth_generate(&cfg).unwrap();
        let written = write_synth_tree(dir.path(), &cfg, &data).unwrap();
        assert_eq!(discover_datasets(dir.path()).unwrap(), written);
        let latents = read_latents(dir.path(), "d").unwrap();
        assert_eq!(latents.len(), 50);
        for s in &data[0].samples {
            let f = read_feature_file(&dir.path().join(data[0].feature_path(s))).unwrap();
            assert_eq!(f.shape(), (4, 6));
            assert_eq!(latents[&s.sample_id].latent, s.latent);
        }
    }
}
