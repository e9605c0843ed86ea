use std::fs;
use std::path::Path;

use super::RunRecord;
use crate::error::{Error, Result};

pub const RESULTS_FORMAT_VERSION: u32 = 1;

/// Writes a run record as pretty-printed JSON.
pub fn save_results(path: &Path, record: &RunRecord) -> Result<()> {
    let mut text = serde_json::to_string_pretty(record).map_err(|e| Error::Malformed(e.to_string()))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Reads a run record, rejecting other format versions.
pub fn load_results(path: &Path) -> Result<RunRecord> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_record(&text)
}

pub(crate) fn parse_record(text: &str) -> Result<RunRecord> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| Error::Malformed(e.to_string()))?;
    check_version(&value)?;
    serde_json::from_value(value).map_err(|e| Error::Malformed(e.to_string()))
}

pub(crate) fn check_version(value: &serde_json::Value) -> Result<()> {
    match value.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == RESULTS_FORMAT_VERSION as u64 => Ok(()),
        Some(v) => Err(Error::Version {
            found: v.to_string(),
            expected: RESULTS_FORMAT_VERSION.to_string(),
        }),
        None => Err(Error::Malformed("missing format_version".into())),
    }
}
