//! Model snapshots in the dataset layout: a TOML manifest with the layer sizes
//! and a CSV holding, per layer, the weight matrix row by row and then the bias.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, MlpModel};
use crate::error::{Error, Result};
use crate::tasks::format_real;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelManifest {
    format_version: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    rows_file: String,
}

pub fn save_model(manifest_path: &Path, model: &MlpModel) -> Result<()> {
    let rows_path = manifest_path.with_extension("csv");
    let manifest = ModelManifest {
        format_version: MODEL_FORMAT_VERSION,
        layer_sizes: model.layer_sizes().to_vec(),
        activation: model.activation(),
        rows_file: rows_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Parameter("manifest path needs a file name".into()))?
            .to_string(),
    };
    let mut rows = String::new();
    for (w, b) in model.weights().iter().zip(model.biases()) {
        for row in w.rows() {
            let line: Vec<String> = row.iter().map(|v| format_real(*v)).collect();
            rows.push_str(&line.join(","));
            rows.push('\n');
        }
        let line: Vec<String> = b.iter().map(|v| format_real(*v)).collect();
        rows.push_str(&line.join(","));
        rows.push('\n');
    }
    let text = toml::to_string(&manifest).map_err(|e| Error::Malformed(e.to_string()))?;
    fs::write(manifest_path, text).map_err(|e| Error::io(manifest_path, e))?;
    fs::write(&rows_path, rows).map_err(|e| Error::io(&rows_path, e))
}

pub fn load_model(manifest_path: &Path) -> Result<MlpModel> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let manifest: ModelManifest =
        toml::from_str(&text).map_err(|e| Error::Malformed(e.to_string()))?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(Error::Version {
            found: manifest.format_version.to_string(),
            expected: MODEL_FORMAT_VERSION.to_string(),
        });
    }
    let rows_path = manifest_path
        .parent()
        .unwrap_or_else(|| Path::new("."))
        .join(&manifest.rows_file);
    let rows = fs::read_to_string(&rows_path).map_err(|e| Error::io(&rows_path, e))?;
    let mut lines = rows.lines();
    let mut next_row = |width: usize| -> Result<Vec<f64>> {
        let line = lines
            .next()
            .ok_or_else(|| Error::Malformed("model file ends early".into()))?;
        let values = line
            .split(',')
            .map(|f| f.trim().parse::<f64>().map_err(|_| Error::Malformed(format!("cannot parse `{f}`"))))
            .collect::<Result<Vec<f64>>>()?;
        if values.len() != width {
            return Err(Error::Malformed(format!(
                "expected {width} values, got {}",
                values.len()
            )));
        }
        Ok(values)
    };
    let mut weights = Vec::new();
    let mut biases = Vec::new();
    for pair in manifest.layer_sizes.windows(2) {
        let (fan_in, fan_out) = (pair[0], pair[1]);
        let mut flat = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in {
            flat.extend(next_row(fan_out)?);
        }
        weights.push(Array2::from_shape_vec((fan_in, fan_out), flat).expect("sized above"));
        biases.push(Array1::from(next_row(fan_out)?));
    }
    MlpModel::from_parameters(manifest.layer_sizes, weights, biases, manifest.activation)
}
