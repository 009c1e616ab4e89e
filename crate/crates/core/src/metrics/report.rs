use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{contract, Error, Result};

pub const MEAN_ROW: &str = "Mean";

/// Mean, population standard deviation and the raw per-seed values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

impl MetricSummary {
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        contract!(!values.is_empty(), "a metric summary needs at least one value");
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            per_seed: values,
        })
    }
}

/// Metric values of every category for one seed, categories in report order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SeedRun {
    pub seed: u64,
    pub rows: Vec<(String, BTreeMap<String, f64>)>,
}

impl SeedRun {
    pub fn new(seed: u64) -> Self {
        Self { seed, rows: Vec::new() }
    }

    pub fn push(&mut self, category: impl Into<String>, metrics: BTreeMap<String, f64>) {
        self.rows.push((category.into(), metrics));
    }
}

/// Per-category summaries over seeds followed by a `Mean` row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub seeds: Vec<u64>,
    pub metrics: Vec<String>,
    pub rows: Vec<(String, BTreeMap<String, MetricSummary>)>,
}

/// Combines seed runs over identical category and metric sets. The `Mean`
/// row averages categories within each seed, then summarizes over seeds.
pub fn aggregate_runs(runs: &[SeedRun]) -> Result<EvalReport> {
    contract!(!runs.is_empty(), "aggregation needs at least one seed");
    let first = &runs[0];
    contract!(!first.rows.is_empty(), "seed {} has no categories", first.seed);
    let categories: Vec<&str> = first.rows.iter().map(|(c, _)| c.as_str()).collect();
    let metrics: Vec<String> = first.rows[0].1.keys().cloned().collect();
    for run in runs {
        let cats: Vec<&str> = run.rows.iter().map(|(c, _)| c.as_str()).collect();
        if cats != categories {
            return Err(Error::Contract(format!(
                "seed {} covers categories {cats:?}, expected {categories:?}",
                run.seed
            )));
        }
        for (cat, m) in &run.rows {
            if !m.keys().eq(metrics.iter()) {
                return Err(Error::Contract(format!(
                    "seed {} category {cat} reports metrics {:?}, expected {metrics:?}",
                    run.seed,
                    m.keys().collect::<Vec<_>>()
                )));
            }
        }
    }
    let mut rows = Vec::with_capacity(categories.len() + 1);
    for (ci, cat) in categories.iter().enumerate() {
        let mut row = BTreeMap::new();
        for m in &metrics {
            let values = runs.iter().map(|r| r.rows[ci].1[m]).collect();
            row.insert(m.clone(), MetricSummary::from_values(values)?);
        }
        rows.push((cat.to_string(), row));
    }
    let mut mean_row = BTreeMap::new();
    for m in &metrics {
        let values = runs
            .iter()
            .map(|r| r.rows.iter().map(|(_, v)| v[m]).sum::<f64>() / r.rows.len() as f64)
            .collect();
        mean_row.insert(m.clone(), MetricSummary::from_values(values)?);
    }
    rows.push((MEAN_ROW.to_string(), mean_row));
    Ok(EvalReport {
        seeds: runs.iter().map(|r| r.seed).collect(),
        metrics,
        rows,
    })
}

impl EvalReport {
    pub fn row(&self, category: &str) -> Option<&BTreeMap<String, MetricSummary>> {
        self.rows.iter().find(|(c, _)| c == category).map(|(_, r)| r)
    }

    pub fn categories(&self) -> impl Iterator<Item = &str> {
        self.rows.iter().map(|(c, _)| c.as_str()).filter(|c| *c != MEAN_ROW)
    }

    /// `{category → {metric → {mean, std, per_seed}}}`.
    pub fn results_json(&self) -> Value {
        let map: serde_json::Map<String, Value> = self
            .rows
            .iter()
            .map(|(c, r)| (c.clone(), serde_json::to_value(r).expect("finite summaries")))
            .collect();
        Value::Object(map)
    }

    /// The results alongside the run description that produced them.
    pub fn to_json(&self, run: &Value) -> Value {
        serde_json::json!({
            "run": run,
            "seeds": self.seeds,
            "std": "population",
            "results": self.results_json(),
        })
    }

    /// One row per category plus `Mean`, with `<metric>_mean` and
    /// `<metric>_std` columns. The run description leads as a `# run:` line.
    pub fn to_csv(&self, run: &Value) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["category".to_string()];
        for m in &self.metrics {
            header.push(format!("{m}_mean"));
            header.push(format!("{m}_std"));
        }
        w.write_record(&header)?;
        for (cat, row) in &self.rows {
            let mut rec = vec![cat.clone()];
            for m in &self.metrics {
                rec.push(format!("{:.6}", row[m].mean));
                rec.push(format!("{:.6}", row[m].std));
            }
            w.write_record(&rec)?;
        }
        let body = String::from_utf8(w.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?)
            .expect("csv output is utf-8");
        Ok(format!(
            "# run: {run}\n{body}# std: population standard deviation over {} seed(s)\n",
            self.seeds.len()
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(seed: u64, rows: &[(&str, f64)]) -> SeedRun {
        let mut r = SeedRun::new(seed);
        for (c, v) in rows {
            r.push(*c, BTreeMap::from([("image_auroc".to_string(), *v)]));
        }
        r
    }

    #[test]
    fn summaries() {
        let one = MetricSummary::from_values(vec![93.1]).unwrap();
        assert_eq!((one.mean, one.std), (93.1, 0.0));
        let two = MetricSummary::from_values(vec![90.0, 94.0]).unwrap();
        assert_eq!((two.mean, two.std), (92.0, 2.0));
    }

    #[test]
    fn mean_row_averages_categories_per_seed() {
        let rep = aggregate_runs(&[run(0, &[("a", 0.8), ("b", 0.6)]), run(1, &[("a", 1.0), ("b", 0.6)])]).unwrap();
        assert_eq!(rep.rows.len(), 3);
        let mean = &rep.row(MEAN_ROW).unwrap()["image_auroc"];
        assert!((mean.per_seed[0] - 0.7).abs() < 1e-15 && (mean.per_seed[1] - 0.8).abs() < 1e-15);
        assert!((mean.std - 0.05).abs() < 1e-12);
        assert_eq!(rep.categories().collect::<Vec<_>>(), ["a", "b"]);
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        assert!(aggregate_runs(&[]).is_err());
        assert!(aggregate_runs(&[run(0, &[("a", 0.8)]), run(1, &[("b", 0.6)])]).is_err());
    }

    #[test]
    fn json_and_csv_shapes() {
        let rep = aggregate_runs(&[run(0, &[("a", 0.5)])]).unwrap();
        let cfg = serde_json::json!({"k": 0});
        let j = rep.to_json(&cfg);
        assert_eq!(j["results"]["a"]["image_auroc"]["std"], 0.0);
        assert_eq!(j["results"]["Mean"]["image_auroc"]["per_seed"][0], 0.5);
        assert_eq!(j["run"]["k"], 0);
        let csv = rep.to_csv(&cfg).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "# run: {\"k\":0}");
        assert_eq!(lines[1], "category,image_auroc_mean,image_auroc_std");
        assert_eq!(lines[2], "a,0.500000,0.000000");
        assert!(lines.last().unwrap().contains("population"));
    }
}
