use std::collections::BTreeSet;

use serde::Serialize;

use crate::data::{DataSplit, LoadedDataset, Subset};
use crate::error::Result;
use crate::metrics::WeightedReport;

use super::config::{widths_for_depth, TrainConfig};
use super::model::QualityModel;
use super::trainer::{channels_of, evaluate, train, EvalMode};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationRow {
    pub depth: usize,
    pub widths: Vec<usize>,
    pub report: WeightedReport,
}

impl AblationRow {
    pub fn label(&self) -> String {
        let n = |k: usize| match k {
            1 => "One".to_string(),
            2 => "Two".into(),
            3 => "Three".into(),
            4 => "Four".into(),
            5 => "Five".into(),
            6 => "Six".into(),
            7 => "Seven".into(),
            8 => "Eight".into(),
            9 => "Nine".into(),
            k => k.to_string(),
        };
        let plural = |k: usize, w: &str| {
            if k == 1 {
                w.to_string()
            } else {
                format!("{w}s")
            }
        };
        format!(
            "{} {} and {} {}",
            n(self.depth),
            plural(self.depth, "CFCL"),
            n(self.depth - 1),
            plural(self.depth - 1, "ELU")
        )
    }
}

/// One trained-and-evaluated model per transformer depth, in input order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    /// One object per row: structure label, depth, widths, per-dataset
    /// correlations and the weighted scores.
    pub fn to_json(&self) -> Vec<serde_json::Value> {
        self.rows
            .iter()
            .map(|r| {
                let mut per = serde_json::Map::new();
                for (id, c) in &r.report.per_dataset {
                    per.insert(
                        id.clone(),
                        serde_json::json!({"srcc": c.srcc, "plcc": c.plcc, "n": c.n}),
                    );
                }
                serde_json::json!({
                    "structure": r.label(),
                    "depth": r.depth,
                    "widths": r.widths,
                    "per_dataset": per,
                    "weighted_srcc": r.report.weighted_srcc,
                    "weighted_plcc": r.report.weighted_plcc,
                })
            })
            .collect()
    }

    pub fn to_json_lines(&self) -> String {
        self.to_json().iter().map(|v| format!("{v}\n")).collect()
    }

    /// Text table: one row per structure, one SRCC/PLCC column pair per
    /// dataset and a weighted column.
    pub fn to_table(&self) -> String {
        let ids: BTreeSet<&str> = self
            .rows
            .iter()
            .flat_map(|r| r.report.per_dataset.keys().map(String::as_str))
            .collect();
        let labels: Vec<String> = self.rows.iter().map(AblationRow::label).collect();
        let lw = labels
            .iter()
            .map(String::len)
            .max()
            .unwrap_or(0)
            .max("Structure".len());
        let cw = ids.iter().map(|s| s.len()).max().unwrap_or(0).max(13);
        let mut out = format!("{:<lw$}", "Structure");
        for id in ids.iter().copied().chain(["weighted"]) {
            out.push_str(&format!("  {id:>cw$}"));
        }
        out.push('\n');
        for (r, label) in self.rows.iter().zip(&labels) {
            out.push_str(&format!("{label:<lw$}"));
            for id in &ids {
                let cell = r
                    .report
                    .per_dataset
                    .get(*id)
                    .map(|c| format!("{:.3} / {:.3}", c.srcc, c.plcc))
                    .unwrap_or_else(|| "-".into());
                out.push_str(&format!("  {cell:>cw$}"));
            }
            let w = format!(
                "{:.3} / {:.3}",
                r.report.weighted_srcc, r.report.weighted_plcc
            );
            out.push_str(&format!("  {w:>cw$}\n"));
        }
        out
    }
}

/// Trains and evaluates (raw mode, test subset) one model per depth with
/// otherwise identical configuration and seed.
pub fn ablate_depth(
    data: &[LoadedDataset],
    split: &DataSplit,
    config: &TrainConfig,
    depths: &[usize],
) -> Result<AblationTable> {
    let configs: Vec<TrainConfig> = depths
        .iter()
        .map(|&depth| {
            let c = TrainConfig {
                cfcl_depth: depth,
                transformer_widths: None,
                ..config.clone()
            };
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let channels = channels_of(data)?;
    let ids: Vec<&str> = data.iter().map(LoadedDataset::dataset_id).collect();
    let mut rows = Vec::with_capacity(depths.len());
    for cfg in configs {
        let model = QualityModel::init(channels, &ids, &cfg)?;
        let out = train(model, data, split, &cfg)?;
        let report = evaluate(&out.model, data, Some(split), Subset::Test, EvalMode::Raw)?;
        log::info!(
            "depth {}: weighted SRCC {:.4}",
            cfg.cfcl_depth,
            report.weighted_srcc
        );
        rows.push(AblationRow {
            depth: cfg.cfcl_depth,
            widths: widths_for_depth(cfg.cfcl_depth),
            report,
        });
    }
    Ok(AblationTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels() {
        let row = |depth| AblationRow {
            depth,
            widths: widths_for_depth(depth),
            report: WeightedReport {
                per_dataset: Default::default(),
                weighted_srcc: 0.0,
                weighted_plcc: 0.0,
            },
        };
        assert_eq!(row(3).label(), "Three CFCLs and Two ELUs");
        assert_eq!(row(5).label(), "Five CFCLs and Four ELUs");
        assert_eq!(row(7).label(), "Seven CFCLs and Six ELUs");
        assert_eq!(row(2).label(), "Two CFCLs and One ELU");
    }

    #[test]
    fn unsupported_depth_fails_before_training() {
        let err = ablate_depth(
            &[],
            &DataSplit {
                seed: 0,
                datasets: Default::default(),
            },
            &TrainConfig::default(),
            &[5, 4],
        );
        assert!(matches!(err, Err(crate::Error::Config(_))));
    }
}
