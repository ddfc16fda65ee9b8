//! Rank and linear correlation, plus the image-count-weighted aggregation
//! used to summarize several datasets with one number.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) hold ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Dimension(format!(
            "{} predictions but {} ground-truth values",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation(format!(
            "need at least two samples, got {}",
            pred.len()
        )));
    }
    if pred.iter().chain(truth).any(|v| !v.is_finite()) {
        return Err(Error::Numeric(
            "non-finite value in correlation input".into(),
        ));
    }
    Ok(())
}

fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Spearman rank-order correlation: Pearson correlation of average ranks.
pub fn srcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    pearson(&average_ranks(pred), &average_ranks(truth))
        .map_err(|_| Error::UndefinedCorrelation("zero rank variance".into()))
}

/// Pearson linear correlation.
pub fn plcc(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    pearson(pred, truth)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrelationResult {
    pub srcc: f64,
    pub plcc: f64,
    pub n: usize,
}

impl CorrelationResult {
    pub fn compute(pred: &[f64], truth: &[f64]) -> Result<Self> {
        Ok(CorrelationResult {
            srcc: srcc(pred, truth)?,
            plcc: plcc(pred, truth)?,
            n: pred.len(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedReport {
    pub per_dataset: BTreeMap<String, CorrelationResult>,
    pub weighted_srcc: f64,
    pub weighted_plcc: f64,
}

/// Image-count-weighted SRCC and PLCC over the given datasets.
pub fn weighted_report(results: BTreeMap<String, CorrelationResult>) -> Result<WeightedReport> {
    if results.is_empty() {
        return Err(Error::Parameter(
            "cannot aggregate an empty result set".into(),
        ));
    }
    let total: usize = results.values().map(|r| r.n).sum();
    if total == 0 {
        return Err(Error::Parameter("all datasets report zero samples".into()));
    }
    let wsum = |f: fn(&CorrelationResult) -> f64| {
        results.values().map(|r| r.n as f64 * f(r)).sum::<f64>() / total as f64
    };
    Ok(WeightedReport {
        weighted_srcc: wsum(|r| r.srcc),
        weighted_plcc: wsum(|r| r.plcc),
        per_dataset: results,
    })
}

/// Median of a non-empty list; even lengths average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Element-wise median across split reports. A dataset missing from some
/// reports takes the median over the reports that contain it.
pub fn median_over_splits(reports: &[WeightedReport]) -> Result<WeightedReport> {
    if reports.is_empty() {
        return Err(Error::Parameter("no split reports to summarize".into()));
    }
    let mut per_dataset = BTreeMap::new();
    let ids: std::collections::BTreeSet<&String> =
        reports.iter().flat_map(|r| r.per_dataset.keys()).collect();
    for id in ids {
        let rows: Vec<&CorrelationResult> = reports
            .iter()
            .filter_map(|r| r.per_dataset.get(id))
            .collect();
        let col = |f: fn(&CorrelationResult) -> f64| {
            median(&rows.iter().map(|r| f(r)).collect::<Vec<_>>())
        };
        per_dataset.insert(
            id.clone(),
            CorrelationResult {
                srcc: col(|r| r.srcc),
                plcc: col(|r| r.plcc),
                n: col(|r| r.n as f64).round() as usize,
            },
        );
    }
    Ok(WeightedReport {
        per_dataset,
        weighted_srcc: median(&reports.iter().map(|r| r.weighted_srcc).collect::<Vec<_>>()),
        weighted_plcc: median(&reports.iter().map(|r| r.weighted_plcc).collect::<Vec<_>>()),
    })
}

#[derive(Serialize)]
struct DatasetRow<'a> {
    dataset: &'a str,
    n: usize,
    srcc: f64,
    plcc: f64,
}

#[derive(Serialize)]
struct WeightedRow {
    weighted_srcc: f64,
    weighted_plcc: f64,
}

impl WeightedReport {
    /// One JSON object per line: `{dataset, n, srcc, plcc}` rows followed by
    /// `{weighted_srcc, weighted_plcc}`.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (id, r) in &self.per_dataset {
            let row = DatasetRow {
                dataset: id,
                n: r.n,
                srcc: r.srcc,
                plcc: r.plcc,
            };
            out.push_str(&serde_json::to_string(&row).expect("plain struct"));
            out.push('\n');
        }
        let w = WeightedRow {
            weighted_srcc: self.weighted_srcc,
            weighted_plcc: self.weighted_plcc,
        };
        out.push_str(&serde_json::to_string(&w).expect("plain struct"));
        out.push('\n');
        out
    }

    pub fn to_table(&self) -> String {
        let width = self
            .per_dataset
            .keys()
            .map(String::len)
            .chain(std::iter::once("weighted".len()))
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<width$}  {:>6}  {:>7}  {:>7}",
            "dataset", "n", "SRCC", "PLCC"
        );
        for (id, r) in &self.per_dataset {
            let _ = writeln!(
                out,
                "{id:<width$}  {:>6}  {:>7.4}  {:>7.4}",
                r.n, r.srcc, r.plcc
            );
        }
        let n: usize = self.per_dataset.values().map(|r| r.n).sum();
        let _ = writeln!(
            out,
            "{:<width$}  {n:>6}  {:>7.4}  {:>7.4}",
            "weighted", self.weighted_srcc, self.weighted_plcc
        );
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    /// Brute force: rank by counting smaller and equal elements.
    fn brute_ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|x| {
                let less = v.iter().filter(|y| *y < x).count() as f64;
                let eq = v.iter().filter(|y| *y == x).count() as f64;
                less + (eq + 1.0) / 2.0
            })
            .collect()
    }

    #[test]
    fn srcc_examples() {
        assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[1.0, 2.0, 3.0, 4.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((srcc(&[1.0, 2.0, 3.0, 4.0], &[4.0, 3.0, 2.0, 1.0]).unwrap() + 1.0).abs() < 1e-15);
        // Σd² = 6 with n = 3: 1 − 6·6/(3·8) = −0.5
        assert!((srcc(&[1.0, 2.0, 3.0], &[3.0, 1.0, 2.0]).unwrap() + 0.5).abs() < 1e-15);
    }

    #[test]
    fn srcc_undefined_cases() {
        assert!(matches!(
            srcc(&[1.0], &[2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            srcc(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn ties_get_average_ranks() {
        let v = [3.0, 1.0, 3.0, 2.0, 3.0, 1.0];
        assert_eq!(average_ranks(&v), brute_ranks(&v));
        assert_eq!(average_ranks(&v), vec![5.0, 1.5, 5.0, 3.0, 5.0, 1.5]);
    }

    #[test]
    fn srcc_matches_brute_force_on_tied_data() {
        let a = [1.0, 2.0, 2.0, 3.0, 5.0, 5.0, 5.0, 0.0];
        let b = [2.0, 2.0, 1.0, 4.0, 4.0, 3.0, 6.0, 0.0];
        let oracle = pearson(&brute_ranks(&a), &brute_ranks(&b)).unwrap();
        assert!((srcc(&a, &b).unwrap() - oracle).abs() < 1e-15);
    }

    #[test]
    fn plcc_examples() {
        let p = [0.5, 1.5, -2.0, 3.0, 0.0];
        let t: Vec<f64> = p.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((plcc(&p, &t).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = p.iter().map(|x| -x).collect();
        assert!((plcc(&p, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(
            plcc(&[1.0, 1.0], &[1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
    }

    #[test]
    fn plcc_independent_samples_near_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let a: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        let b: Vec<f64> = (0..10_000)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        assert!(plcc(&a, &b).unwrap().abs() < 0.05);
    }

    fn result(srcc: f64, plcc: f64, n: usize) -> CorrelationResult {
        CorrelationResult { srcc, plcc, n }
    }

    #[test]
    fn weighted_examples() {
        let one =
            weighted_report(BTreeMap::from([("a".to_string(), result(0.8, 0.7, 50))])).unwrap();
        assert_eq!((one.weighted_srcc, one.weighted_plcc), (0.8, 0.7));

        let two = weighted_report(BTreeMap::from([
            ("a".to_string(), result(1.0, 0.9, 100)),
            ("b".to_string(), result(0.5, 0.5, 300)),
        ]))
        .unwrap();
        assert!((two.weighted_srcc - 0.625).abs() < 1e-15);

        let equal = weighted_report(BTreeMap::from([
            ("a".to_string(), result(0.2, 0.1, 10)),
            ("b".to_string(), result(0.6, 0.3, 10)),
        ]))
        .unwrap();
        assert!((equal.weighted_srcc - 0.4).abs() < 1e-15);
        assert!(weighted_report(BTreeMap::new()).is_err());
    }

    fn single(v: f64) -> WeightedReport {
        weighted_report(BTreeMap::from([("a".to_string(), result(v, v, 10))])).unwrap()
    }

    #[test]
    fn median_examples() {
        let r = single(0.42);
        assert_eq!(median_over_splits(std::slice::from_ref(&r)).unwrap(), r);
        let odd = median_over_splits(&[single(0.1), single(0.9), single(0.2)]).unwrap();
        assert_eq!(odd.weighted_srcc, 0.2);
        assert_eq!(odd.per_dataset["a"].srcc, 0.2);
        let even = median_over_splits(&[single(0.1), single(0.3)]).unwrap();
        assert!((even.weighted_srcc - 0.2).abs() < 1e-15);
        assert!(median_over_splits(&[]).is_err());
    }

    #[test]
    fn json_lines_schema() {
        let two = weighted_report(BTreeMap::from([
            ("a".to_string(), result(1.0, 0.9, 100)),
            ("b".to_string(), result(0.5, 0.5, 300)),
        ]))
        .unwrap();
        let lines: Vec<serde_json::Value> = two
            .to_json_lines()
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["dataset"], "a");
        assert_eq!(lines[1]["n"], 300);
        assert_eq!(lines[2]["weighted_srcc"], 0.625);
        assert!(two.to_table().contains("weighted"));
    }
}
