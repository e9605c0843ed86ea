//! Two-file dataset persistence: a TOML manifest plus a CSV of rows.
//!
//! Each CSV line holds one design followed by its score. Reals are written
//! with 17 significant digits so they round-trip exactly. Loading re-scores
//! every row with the task oracle and rejects files whose scores disagree.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::space::{Design, DesignSpace};

pub const DATASET_FORMAT_VERSION: u32 = 1;

const CONTINUOUS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub task: String,
    pub seed: u64,
    pub keep_percentile: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub rows: usize,
    /// Row file name, relative to the manifest's directory.
    pub rows_file: String,
    pub space: DesignSpace,
}

pub(crate) fn format_real(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes `manifest_path` and a sibling `.csv` row file.
pub fn save_dataset(
    manifest_path: &Path,
    task: &Task,
    dataset: &Dataset,
    seed: u64,
) -> Result<DatasetManifest> {
    let rows_path = manifest_path.with_extension("csv");
    let manifest = DatasetManifest {
        format_version: DATASET_FORMAT_VERSION,
        task: task.name().to_string(),
        seed,
        keep_percentile: task.dataset_spec().keep_percentile,
        y_min: task.y_min(),
        y_max: task.y_max(),
        rows: dataset.len(),
        rows_file: rows_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Parameter("manifest path needs a file name".into()))?
            .to_string(),
        space: task.space().clone(),
    };
    let mut rows = String::new();
    for (design, score) in dataset.designs().iter().zip(dataset.scores()) {
        match design {
            Design::Continuous(x) => {
                for v in x {
                    rows.push_str(&format_real(*v));
                    rows.push(',');
                }
            }
            Design::Discrete(s) => {
                for c in s {
                    write!(rows, "{c},").expect("writing to a String");
                }
            }
        }
        rows.push_str(&format_real(*score));
        rows.push('\n');
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(&rows_path, rows).map_err(|e| Error::io(&rows_path, e))?;
    Ok(manifest)
}

/// Reads a dataset back, rebuilding its task by name and verifying every
/// stored score against the oracle.
pub fn load_dataset(manifest_path: &Path) -> Result<(Task, Dataset, DatasetManifest)> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| Error::Malformed(e.to_string()))?;
    match raw.get("format_version").and_then(|v| v.as_integer()) {
        Some(v) if v == DATASET_FORMAT_VERSION as i64 => {}
        Some(v) => {
            return Err(Error::Version {
                found: v.to_string(),
                expected: DATASET_FORMAT_VERSION.to_string(),
            })
        }
        None => return Err(Error::Malformed("manifest lacks format_version".into())),
    }
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| Error::Malformed(e.to_string()))?;
    let task = Task::by_name(&manifest.task)?;
    if task.space() != &manifest.space {
        return Err(Error::Data(format!(
            "space in manifest does not match task {}",
            manifest.task
        )));
    }
    let rows_path: PathBuf = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.rows_file);
    let rows = fs::read_to_string(&rows_path).map_err(|e| Error::io(&rows_path, e))?;
    let width = task.space().dim() + 1;
    let mut designs = Vec::with_capacity(manifest.rows);
    let mut scores = Vec::with_capacity(manifest.rows);
    for (line_no, line) in rows.lines().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(Error::Malformed(format!(
                "row {}: expected {width} fields, got {}",
                line_no + 1,
                fields.len()
            )));
        }
        let bad = |f: &str| Error::Malformed(format!("row {}: cannot parse `{f}`", line_no + 1));
        let (design_fields, score_field) = fields.split_at(width - 1);
        let design = match task.space() {
            DesignSpace::Continuous { .. } => Design::Continuous(
                design_fields
                    .iter()
                    .map(|f| f.trim().parse::<f64>().map_err(|_| bad(f)))
                    .collect::<Result<_>>()?,
            ),
            DesignSpace::Discrete { .. } => Design::Discrete(
                design_fields
                    .iter()
                    .map(|f| f.trim().parse::<usize>().map_err(|_| bad(f)))
                    .collect::<Result<_>>()?,
            ),
        };
        let stored: f64 = score_field[0].trim().parse().map_err(|_| bad(score_field[0]))?;
        let actual = task.oracle_evaluate(&design)?;
        let agrees = if task.space().is_discrete() {
            actual == stored
        } else {
            (actual - stored).abs() <= CONTINUOUS_TOLERANCE
        };
        if !agrees {
            return Err(Error::Data(format!(
                "row {}: stored score {stored} but oracle gives {actual}",
                line_no + 1
            )));
        }
        designs.push(design);
        scores.push(stored);
    }
    if designs.len() != manifest.rows {
        return Err(Error::Malformed(format!(
            "manifest declares {} rows, file has {}",
            manifest.rows,
            designs.len()
        )));
    }
    let dataset = Dataset::new(designs, scores, task.name())?;
    Ok((task, dataset, manifest))
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, make_discrete_lookup, make_separable};
    use super::*;

    #[test]
    fn continuous_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let task = make_separable(4).unwrap();
        let data = build_dataset(&task, 4).unwrap();
        let path = dir.path().join("sep.toml");
        save_dataset(&path, &task, &data, 4).unwrap();
        let (t2, d2, m) = load_dataset(&path).unwrap();
        assert_eq!(t2, task);
        assert_eq!(d2, data);
        assert_eq!(m.seed, 4);
        assert_eq!(m.rows, 5000);
    }

    #[test]
    fn discrete_round_trip_and_tamper_detection() {
        let dir = tempfile::tempdir().unwrap();
        let task = make_discrete_lookup(4, 3).unwrap();
        let data = build_dataset(&task, 0).unwrap();
        let path = dir.path().join("lookup.toml");
        save_dataset(&path, &task, &data, 0).unwrap();
        let (_, d2, _) = load_dataset(&path).unwrap();
        assert_eq!(d2, data);

        let rows_path = path.with_extension("csv");
        let rows = fs::read_to_string(&rows_path).unwrap();
        // Change the first design's first category; its stored score is now wrong.
        let first = rows.as_bytes()[0];
        let swapped = if first == b'0' { "1" } else { "0" };
        let tampered = format!("{swapped}{}", &rows[1..]);
        fs::write(&rows_path, &tampered).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Data(_))));

        let truncated: String = rows.lines().take(3).collect::<Vec<_>>().join("\n");
        fs::write(&rows_path, truncated).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Malformed(_))));
    }

    #[test]
    fn version_mismatch_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let task = make_discrete_lookup(3, 2).unwrap();
        let data = build_dataset(&task, 0).unwrap();
        let path = dir.path().join("v.toml");
        save_dataset(&path, &task, &data, 0).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replace("format_version = 1", "format_version = 7")).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Version { .. })));
    }
}
