//! Learned objective models: small tanh MLPs with exact input gradients,
//! min/mean ensembles, importance-weighted refits and conservative training.

mod ensemble;
mod mlp;
mod snapshot;
mod train;

pub use ensemble::{EnsembleMode, SurrogateEnsemble};
pub use mlp::{Activation, MlpModel};
pub use snapshot::{load_model, save_model, MODEL_FORMAT_VERSION};
pub use train::{
    ascend, fit_conservative, fit_reweighted, fit_surrogate, Conservatism, Fit, TrainConfig,
};

use ndarray::{ArrayView1, ArrayView2};

use crate::error::{Error, Result};

/// Spearman rank correlation of `model`'s predictions against held-out targets.
pub fn validation_rank_correlation(
    model: &MlpModel,
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
) -> Result<f64> {
    let pred = model.predict_batch(x)?;
    spearman(pred.as_slice().expect("contiguous"), &y.to_vec())
}

/// Spearman's rho with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(Error::InsufficientData("rank correlation needs 2 points".into()));
    }
    let ra = average_ranks(a);
    let rb = average_ranks(b);
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut cov, mut va, mut vb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        cov += (x - mean) * (y - mean);
        va += (x - mean).powi(2);
        vb += (y - mean).powi(2);
    }
    if va == 0.0 {
        return Err(Error::UndefinedCorrelation("first sample is constant"));
    }
    if vb == 0.0 {
        return Err(Error::UndefinedCorrelation("second sample is constant"));
    }
    Ok((cov / (va * vb).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of their positions.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}
