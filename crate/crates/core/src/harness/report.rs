use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::results::check_version;
use super::{AggregateStats, RunRecord, RESULTS_FORMAT_VERSION};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "markdown" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::UnknownFormat(other.to_string())),
        }
    }
}

/// Structured form of a report: every run, in input order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportDocument {
    pub format_version: u32,
    pub crate_version: String,
    pub runs: Vec<RunRecord>,
}

/// Renders runs as JSON, or as one markdown table per task with a row per
/// method and a closing dataset-best row.
///
/// ```
/// use mbo::harness::{emit_report, run, ReportFormat, RunConfig};
/// use mbo::tasks::make_toy_quadratic;
///
/// let mut cfg = RunConfig::new(&make_toy_quadratic(), "dataset-best", 0).unwrap();
/// cfg.k = 4;
/// cfg.trials = 1;
/// let table = emit_report(&[run(&cfg).unwrap()], ReportFormat::Markdown).unwrap();
/// assert!(table.contains("| dataset-best |"));
/// assert!(table.contains("| 𝒟 (best) |"));
/// ```
pub fn emit_report(runs: &[RunRecord], format: ReportFormat) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::InsufficientData("nothing to report".into()));
    }
    match format {
        ReportFormat::Json => {
            let doc = ReportDocument {
                format_version: RESULTS_FORMAT_VERSION,
                crate_version: env!("CARGO_PKG_VERSION").to_string(),
                runs: runs.to_vec(),
            };
            let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Malformed(e.to_string()))?;
            text.push('\n');
            Ok(text)
        }
        ReportFormat::Markdown => Ok(markdown(runs)),
    }
}

/// Reads back the JSON form of [`emit_report`].
pub fn parse_report(text: &str) -> Result<ReportDocument> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    check_version(&value)?;
    serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))
}

fn cell(s: &AggregateStats) -> String {
    format!("{:.3} ± {:.3}", s.mean, s.std)
}

fn markdown(runs: &[RunRecord]) -> String {
    let mut tasks: Vec<&str> = Vec::new();
    for r in runs {
        if !tasks.contains(&r.config.task.as_str()) {
            tasks.push(&r.config.task);
        }
    }
    let mut out = String::new();
    for task in tasks {
        let group: Vec<&RunRecord> = runs.iter().filter(|r| r.config.task == task).collect();
        let first = group[0];
        let _ = writeln!(
            out,
            "## {task} (K = {}, {} trials)\n\n| method | p100 | p50 |\n|---|---|---|",
            first.config.k, first.aggregate.trials
        );
        for r in &group {
            let a = &r.aggregate;
            let _ = writeln!(out, "| {} | {} | {} |", r.config.method.name, cell(&a.p100), cell(&a.p50));
        }
        let best = cell(&first.aggregate.dataset_best);
        let _ = writeln!(out, "| 𝒟 (best) | {best} | {best} |\n");
    }
    out
}
