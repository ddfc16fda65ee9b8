use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{stream_seed, DatasetManifest};

pub const MIN_CONTENTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Proportions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Proportions {
    fn default() -> Self {
        Proportions {
            train: 0.6,
            val: 0.2,
            test: 0.2,
        }
    }
}

impl Proportions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|p| !(*p > 0.0 && p.is_finite()))
            || ((parts.iter().sum::<f64>() - 1.0).abs() > 1e-9)
        {
            return Err(Error::Config(format!(
                "split proportions must be positive and sum to 1, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subset {
    Train,
    Val,
    Test,
}

/// Content-disjoint train/val/test partition of one dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub dataset_id: String,
    pub seed: u64,
    pub train: BTreeSet<String>,
    pub val: BTreeSet<String>,
    pub test: BTreeSet<String>,
}

impl SplitAssignment {
    pub fn subset_of(&self, content_id: &str) -> Option<Subset> {
        if self.train.contains(content_id) {
            Some(Subset::Train)
        } else if self.val.contains(content_id) {
            Some(Subset::Val)
        } else if self.test.contains(content_id) {
            Some(Subset::Test)
        } else {
            None
        }
    }

    pub fn contents(&self, subset: Subset) -> &BTreeSet<String> {
        match subset {
            Subset::Train => &self.train,
            Subset::Val => &self.val,
            Subset::Test => &self.test,
        }
    }

    /// Record indices of `manifest` whose content falls in `subset`.
    pub fn indices(&self, manifest: &DatasetManifest, subset: Subset) -> Vec<usize> {
        let set = self.contents(subset);
        manifest
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| set.contains(&r.content_id))
            .map(|(i, _)| i)
            .collect()
    }
}

/// Shuffles the distinct content groups of `manifest` and partitions them
/// by group count. Deterministic in `(manifest, seed)`.
pub fn split_by_content(
    manifest: &DatasetManifest,
    seed: u64,
    proportions: Proportions,
) -> Result<SplitAssignment> {
    proportions.validate()?;
    let contents: Vec<&str> = manifest.content_ids().into_iter().collect();
    let g = contents.len();
    if g < MIN_CONTENTS {
        return Err(Error::Validation(format!(
            "dataset {} has {g} distinct contents; at least {MIN_CONTENTS} are needed to split",
            manifest.dataset_id()
        )));
    }
    let mut order = contents;
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(seed, manifest.dataset_id(), 1));
    order.shuffle(&mut rng);

    let n_train = ((g as f64 * proportions.train).round() as usize).clamp(1, g - 2);
    let n_val = ((g as f64 * proportions.val).round() as usize).clamp(1, g - n_train - 1);
    let take = |range: std::ops::Range<usize>| order[range].iter().map(|s| s.to_string()).collect();
    Ok(SplitAssignment {
        dataset_id: manifest.dataset_id().to_string(),
        seed,
        train: take(0..n_train),
        val: take(n_train..n_train + n_val),
        test: take(n_train + n_val..g),
    })
}

/// Splits for every dataset of one run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DataSplit {
    pub seed: u64,
    pub datasets: BTreeMap<String, SplitAssignment>,
}

impl DataSplit {
    pub fn get(&self, dataset_id: &str) -> Result<&SplitAssignment> {
        self.datasets
            .get(dataset_id)
            .ok_or_else(|| Error::Config(format!("no split for dataset {dataset_id}")))
    }
}

pub fn split_all(
    manifests: &[DatasetManifest],
    seed: u64,
    proportions: Proportions,
) -> Result<DataSplit> {
    let datasets = manifests
        .iter()
        .map(|m| {
            Ok((
                m.dataset_id().to_string(),
                split_by_content(m, seed, proportions)?,
            ))
        })
        .collect::<Result<_>>()?;
    Ok(DataSplit { seed, datasets })
}
