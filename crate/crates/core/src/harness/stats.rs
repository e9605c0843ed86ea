//! Order statistics, interquartile mean and percentile bootstrap intervals.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Default bootstrap resample count.
pub const BOOTSTRAP_SAMPLES: usize = 2000;
/// Default confidence level.
pub const CONFIDENCE: f64 = 0.95;

/// The `P`-th percentile without interpolation: the sorted element at index
/// `⌈P/100 · n⌉ - 1`.
///
/// ```
/// use mbo::harness::percentile_score;
/// assert_eq!(percentile_score(&[0.1, 0.9, 0.5], 100.0).unwrap(), 0.9);
/// assert_eq!(percentile_score(&[1.0, 2.0, 3.0, 4.0], 50.0).unwrap(), 2.0);
/// ```
pub fn percentile_score(scores: &[f64], p: f64) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::InsufficientData("percentile of no scores".into()));
    }
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::Parameter(format!("percentile {p} outside (0, 100]")));
    }
    let mut v = scores.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((p / 100.0 * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    Ok(v[idx])
}

/// Mean after dropping the `⌊n/4⌋` smallest and largest values.
pub fn iqm(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("iqm of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let cut = v.len() / 4;
    let kept = &v[cut..v.len() - cut];
    Ok(kept.iter().sum::<f64>() / kept.len() as f64)
}

pub fn mean(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("mean of no values".into()));
    }
    Ok(values.iter().sum::<f64>() / values.len() as f64)
}

/// Middle value, or the mean of the two middle values.
pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::InsufficientData("median of no values".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

/// Sample standard deviation (divisor `n - 1`); zero for a single value.
pub fn sample_std(values: &[f64]) -> Result<f64> {
    let m = mean(values)?;
    if values.len() < 2 {
        return Ok(0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - m) * (v - m)).sum();
    Ok((ss / (values.len() - 1) as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Statistic {
    Mean,
    Median,
    Iqm,
}

impl Statistic {
    pub fn apply(self, values: &[f64]) -> Result<f64> {
        match self {
            Statistic::Mean => mean(values),
            Statistic::Median => median(values),
            Statistic::Iqm => iqm(values),
        }
    }
}

/// Percentile bootstrap interval from `b` seeded resamples.
pub fn bootstrap_ci(values: &[f64], statistic: Statistic, b: usize, level: f64, seed: u64) -> Result<(f64, f64)> {
    stratified_bootstrap_ci(&[values], statistic, b, level, seed)
}

/// Bootstrap over several strata: each resample redraws within every stratum,
/// applies the statistic per stratum and averages the strata with equal weight.
pub fn stratified_bootstrap_ci(
    strata: &[&[f64]],
    statistic: Statistic,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<(f64, f64)> {
    if strata.is_empty() || strata.iter().any(|s| s.len() < 2) {
        return Err(Error::InsufficientData("bootstrap needs at least 2 values per stratum".into()));
    }
    if b == 0 || !(level > 0.0 && level < 1.0) {
        return Err(Error::Parameter("bootstrap needs b >= 1 and level in (0, 1)".into()));
    }
    let mut r = rng::stream(seed, rng::streams::BOOTSTRAP);
    let mut stats = Vec::with_capacity(b);
    let mut buf = Vec::new();
    for _ in 0..b {
        let mut total = 0.0;
        for s in strata {
            buf.clear();
            buf.extend((0..s.len()).map(|_| s[r.random_range(0..s.len())]));
            total += statistic.apply(&buf)?;
        }
        stats.push(total / strata.len() as f64);
    }
    let tail = (1.0 - level) / 2.0 * 100.0;
    Ok((percentile_score(&stats, tail)?, percentile_score(&stats, 100.0 - tail)?))
}
