use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::metrics::aggregate_repetitions;
use crate::{Error, Result};

/// One evaluated model: a repetition of (task, method, shots).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub task: String,
    pub method: String,
    pub shots: usize,
    pub repetition: usize,
    pub metric: String,
    pub value: f64,
    /// Training pairs or few-shot items actually used.
    pub pairs: usize,
    /// Fewer pairs were available than requested.
    pub truncated: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub task: String,
    pub method: String,
    pub shots: usize,
    pub metric: String,
    pub repetitions: usize,
    pub median: f64,
    pub min: f64,
    pub max: f64,
    pub truncated: bool,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub repetition_seeds: Vec<u64>,
    pub few_shot_seeds: Vec<u64>,
    /// Checkpoint name to sha256 of its file.
    pub checkpoints: BTreeMap<String, String>,
    /// Stage name to the stamp it ran under.
    pub stamps: BTreeMap<String, String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub rows: Vec<ResultRow>,
    pub aggregates: Vec<AggregateRow>,
    pub provenance: Provenance,
}

/// Which figure-analogue CSV a method belongs to.
pub fn is_coop_method(method: &str) -> bool {
    method.starts_with("coop") || method.starts_with("tapt+coop")
}

/// Group rows by (task, method, shots) in first-seen order and summarize.
pub fn aggregate(rows: &[ResultRow]) -> Result<Vec<AggregateRow>> {
    let mut groups: indexmap::IndexMap<(&str, &str, usize), Vec<&ResultRow>> = indexmap::IndexMap::new();
    for r in rows {
        groups.entry((&r.task, &r.method, r.shots)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((task, method, shots), group)| {
            let values: Vec<f64> = group.iter().map(|r| r.value).collect();
            let s = aggregate_repetitions(&values)?;
            Ok(AggregateRow {
                task: task.into(),
                method: method.into(),
                shots,
                metric: group[0].metric.clone(),
                repetitions: group.len(),
                median: s.median,
                min: s.min,
                max: s.max,
                truncated: group.iter().any(|r| r.truncated),
            })
        })
        .collect()
}

impl RunReport {
    pub fn new(rows: Vec<ResultRow>, provenance: Provenance) -> Result<Self> {
        let aggregates = aggregate(&rows)?;
        Ok(RunReport {
            rows,
            aggregates,
            provenance,
        })
    }

    pub fn aggregate_for(&self, task: &str, method: &str, shots: usize) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.task == task && a.method == method && a.shots == shots)
    }

    /// Repetition rows followed by an `all` summary row per group. Rows go
    /// to the figure-analogue selected by `coop`.
    pub fn write_csv(&self, path: &Path, coop: bool) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["task", "method", "shots", "repetition", "metric", "median", "min", "max", "truncated"])?;
        for a in self.aggregates.iter().filter(|a| is_coop_method(&a.method) == coop) {
            for r in self
                .rows
                .iter()
                .filter(|r| r.task == a.task && r.method == a.method && r.shots == a.shots)
            {
                w.write_record([
                    r.task.clone(),
                    r.method.clone(),
                    r.shots.to_string(),
                    r.repetition.to_string(),
                    r.value.to_string(),
                    String::new(),
                    String::new(),
                    String::new(),
                    r.truncated.to_string(),
                ])?;
            }
            w.write_record([
                a.task.clone(),
                a.method.clone(),
                a.shots.to_string(),
                "all".into(),
                String::new(),
                a.median.to_string(),
                a.min.to_string(),
                a.max.to_string(),
                a.truncated.to_string(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, shots: usize, rep: usize, value: f64) -> ResultRow {
        ResultRow {
            task: "t".into(),
            method: method.into(),
            shots,
            repetition: rep,
            metric: "balanced_accuracy".into(),
            value,
            pairs: shots,
            truncated: false,
        }
    }

    #[test]
    fn aggregates_are_backed_by_rows() {
        let rows = vec![
            row("tapt", 4, 0, 0.5),
            row("tapt", 4, 1, 0.9),
            row("tapt", 4, 2, 0.7),
            row("coop-unified-m4", 1, 0, 0.3),
        ];
        let report = RunReport::new(rows, Provenance::default()).unwrap();
        let a = report.aggregate_for("t", "tapt", 4).unwrap();
        assert_eq!((a.median, a.min, a.max, a.repetitions), (0.7, 0.5, 0.9, 3));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("fig2.csv");
        report.write_csv(&p, false).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 + 1);
        assert!(text.contains("t,tapt,4,all,,0.7,0.5,0.9,false"));
        assert!(!text.contains("coop"));
    }
}
