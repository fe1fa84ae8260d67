//! Per-round metrics, CSV/JSON output.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub round: u32,
    pub main_accuracy: f64,
    /// `(trigger name, backdoor accuracy)` in column order.
    pub backdoor_accuracy: Vec<(String, f64)>,
    pub mean_loss: f64,
}

impl MetricsRow {
    pub fn backdoor(&self, name: &str) -> Option<f64> {
        self.backdoor_accuracy.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Settings for the summary written next to the CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryOptions {
    pub threshold: f64,
    /// Round each trigger first became active; missing names count from 1.
    pub activation_rounds: Vec<(String, u32)>,
}

impl Default for SummaryOptions {
    fn default() -> Self {
        SummaryOptions {
            threshold: 0.8,
            activation_rounds: Vec::new(),
        }
    }
}

impl SummaryOptions {
    fn activation(&self, name: &str) -> u32 {
        self.activation_rounds
            .iter()
            .find(|(n, _)| n == name)
            .map_or(1, |(_, r)| *r)
    }
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from("round,main_acc");
    if let Some(first) = rows.first() {
        for (name, _) in &first.backdoor_accuracy {
            write!(out, ",backdoor_acc_{name}").unwrap();
        }
    }
    out.push_str(",mean_loss\n");
    for row in rows {
        write!(out, "{},{:.6}", row.round, row.main_accuracy).unwrap();
        for (_, v) in &row.backdoor_accuracy {
            write!(out, ",{v:.6}").unwrap();
        }
        writeln!(out, ",{:.6}", row.mean_loss).unwrap();
    }
    out
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    let bad = |msg: String| Error::InvalidArgument(format!("metrics csv: {msg}"));
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("missing header".into()))?
        .split(',')
        .collect();
    if header.len() < 3 || header[0] != "round" || header[1] != "main_acc" || header[header.len() - 1] != "mean_loss" {
        return Err(bad(format!("unexpected header {header:?}")));
    }
    let names: Vec<String> = header[2..header.len() - 1]
        .iter()
        .map(|h| {
            h.strip_prefix("backdoor_acc_")
                .map(str::to_string)
                .ok_or_else(|| bad(format!("unexpected column `{h}`")))
        })
        .collect::<Result<_>>()?;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != header.len() {
                return Err(bad(format!("line {} has {} fields", i + 2, f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("line {}: {e}", i + 2)));
            Ok(MetricsRow {
                round: f[0].parse().map_err(|e| bad(format!("line {}: {e}", i + 2)))?,
                main_accuracy: num(f[1])?,
                backdoor_accuracy: names
                    .iter()
                    .zip(&f[2..f.len() - 1])
                    .map(|(n, v)| Ok((n.clone(), num(v)?)))
                    .collect::<Result<_>>()?,
                mean_loss: num(f[f.len() - 1])?,
            })
        })
        .collect()
}

/// Per trigger: `(first round at or after activation with accuracy >=
/// threshold, rounds of exposure needed)`. Exposure counts the activation
/// round itself as 1.
pub fn rounds_to_threshold(rows: &[MetricsRow], name: &str, activation: u32, threshold: f64) -> Option<(u32, u32)> {
    rows.iter()
        .filter(|r| r.round >= activation)
        .find(|r| r.backdoor(name).is_some_and(|v| v >= threshold))
        .map(|r| (r.round, r.round - activation + 1))
}

pub fn summary_json(rows: &[MetricsRow], opts: &SummaryOptions) -> Value {
    let last = rows.last();
    let mut triggers = Map::new();
    if let Some(last) = last {
        for (name, v) in &last.backdoor_accuracy {
            let activation = opts.activation(name);
            let reached = rounds_to_threshold(rows, name, activation, opts.threshold);
            triggers.insert(
                name.clone(),
                json!({
                    "final_backdoor_acc": v,
                    "activation_round": activation,
                    "first_round_at_threshold": reached.map(|r| r.0),
                    "rounds_to_threshold": reached.map(|r| r.1),
                }),
            );
        }
    }
    json!({
        "rounds": rows.len(),
        "threshold": opts.threshold,
        "final_main_acc": last.map(|r| r.main_accuracy),
        "final_mean_loss": last.map(|r| r.mean_loss),
        "triggers": triggers,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetricsFiles {
    pub csv: PathBuf,
    pub summary: PathBuf,
}

/// Writes `metrics.csv` and `summary.json` into `out_dir`, creating it if
/// needed.
pub fn write_metrics(rows: &[MetricsRow], out_dir: &Path, opts: &SummaryOptions) -> Result<MetricsFiles> {
    if rows.is_empty() {
        return Err(Error::InvalidArgument("no metrics rows to write".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let csv = out_dir.join("metrics.csv");
    std::fs::write(&csv, metrics_csv(rows)).map_err(|e| Error::io(&csv, e))?;
    let summary = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary_json(rows, opts)).expect("summary serializes");
    std::fs::write(&summary, text + "\n").map_err(|e| Error::io(&summary, e))?;
    Ok(MetricsFiles { csv, summary })
}
