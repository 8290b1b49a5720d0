use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use mdat_core::mdat::Ablation;
use serde::Serialize;

use super::{GradcheckRow, RunRecord};
use crate::config::RunConfig;
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const TABLE_FILE: &str = "table.csv";

/// The machine-readable record of one command. `generated_at_unix` is the
/// only field that differs between identical invocations.
#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub generated_at_unix: u64,
    pub command: String,
    pub seed: u64,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gradcheck: Vec<GradcheckRow>,
    pub runs: Vec<RunRecord>,
}

impl Report {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        let now = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
        Self {
            generated_at_unix: now,
            command: command.into(),
            seed: config.train.seed,
            config: config.clone(),
            gradcheck: Vec::new(),
            runs: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Report(e.to_string()))
    }

    /// Writes `report.json` and `table.csv` into `dir`, creating it.
    pub fn write(&self, dir: &Path, table: &Table) -> Result<()> {
        fs::create_dir_all(dir).map_err(Error::io(dir))?;
        let path = dir.join(REPORT_FILE);
        fs::write(&path, self.to_json()? + "\n").map_err(Error::io(&path))?;
        table.write_csv(&dir.join(TABLE_FILE))
    }
}

/// A flat table written as CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::Report(e.to_string());
        w.write_record(&self.header).map_err(csv_err)?;
        for r in &self.rows {
            w.write_record(r).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Report(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()?).map_err(Error::io(path))
    }
}

fn ua(v: f64) -> String {
    format!("{v:.6}")
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// One row per (dataset, model, seed).
pub fn within_table(runs: &[RunRecord]) -> Table {
    let mut t = Table::new(&["dataset", "model", "seed", "ua", "test_samples"]);
    for r in runs {
        t.rows.push(vec![
            r.source.clone(),
            r.model.to_string(),
            r.seed.to_string(),
            ua(r.metrics.ua),
            r.metrics.samples.to_string(),
        ]);
    }
    t
}

/// One row per (source, target, model, seed).
pub fn cross_table(runs: &[RunRecord]) -> Table {
    let mut t = Table::new(&["source", "target", "model", "seed", "ua", "test_samples"]);
    for r in runs {
        t.rows.push(vec![
            r.source.clone(),
            r.target.clone(),
            r.model.to_string(),
            r.seed.to_string(),
            ua(r.metrics.ua),
            r.metrics.samples.to_string(),
        ]);
    }
    t
}

/// Per-seed rows followed by the mean over seeds for each
/// (source, target, model, k).
pub fn kshot_table(runs: &[RunRecord]) -> Table {
    let mut t = Table::new(&["source", "target", "model", "k", "seed", "ua"]);
    let mut groups: Vec<((String, String, String, usize), Vec<f64>)> = Vec::new();
    for r in runs {
        let k = r.k.unwrap_or(0);
        t.rows.push(vec![
            r.source.clone(),
            r.target.clone(),
            r.model.to_string(),
            k.to_string(),
            r.seed.to_string(),
            ua(r.metrics.ua),
        ]);
        let key = (r.source.clone(), r.target.clone(), r.model.to_string(), k);
        match groups.iter_mut().find(|(g, _)| *g == key) {
            Some((_, v)) => v.push(r.metrics.ua),
            None => groups.push((key, vec![r.metrics.ua])),
        }
    }
    for ((s, tg, m, k), v) in groups {
        t.rows.push(vec![s, tg, m, k.to_string(), "mean".into(), ua(mean(&v))]);
    }
    t
}

/// Exactly seven rows, one per module combination, with the mean UA over
/// seeds for each evaluation set in its own column.
pub fn ablation_table(runs: &[RunRecord]) -> Table {
    let mut targets: Vec<String> = Vec::new();
    let mut cells: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in runs {
        let col = match targets.iter().position(|t| *t == r.target) {
            Some(i) => i,
            None => {
                targets.push(r.target.clone());
                targets.len() - 1
            }
        };
        if let Some(a) = r.ablation {
            cells.entry((a, col)).or_default().push(r.metrics.ua);
        }
    }
    let mut header = vec!["model", "graph_attention", "co_attention", "transformer"];
    header.extend(targets.iter().map(String::as_str));
    let mut t = Table::new(&header);
    let mark = |b: bool| if b { "yes" } else { "no" }.to_string();
    for a in Ablation::ALL {
        let (g, c, tr) = a.flags();
        let mut row = vec![format!("Model {}", a.number()), mark(g), mark(c), mark(tr)];
        for col in 0..targets.len() {
            row.push(cells.get(&(a.number(), col)).map_or(String::new(), |v| ua(mean(v))));
        }
        t.rows.push(row);
    }
    t
}
