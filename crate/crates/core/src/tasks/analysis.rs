//! Dataset-shape diagnostics: score histograms of the offline data against
//! uniform resamples of the space, and one-dimensional oracle slices.

use serde::{Deserialize, Serialize};

use super::{Dataset, Task};
use crate::error::{Error, Result};
use crate::rng;
use crate::space::Design;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: Vec<u64>,
    pub mean: f64,
}

/// Two score histograms on shared equal-width bins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramPair {
    pub task: String,
    pub edges: Vec<f64>,
    pub dataset: Histogram,
    pub resampled: Histogram,
}

/// Scores `n` uniform draws from the task's space and bins them together with
/// the dataset scores on `bins` equal-width bins spanning the joint range.
pub fn resample_histogram(
    task: &Task,
    dataset: &Dataset,
    n: usize,
    bins: usize,
    seed: u64,
) -> Result<HistogramPair> {
    if n == 0 || bins == 0 {
        return Err(Error::Parameter("histogram needs n >= 1 and bins >= 1".into()));
    }
    let mut r = rng::stream(seed, rng::streams::SAMPLER);
    let resampled = (0..n)
        .map(|_| task.oracle_evaluate(&task.space().sample_uniform(&mut r)))
        .collect::<Result<Vec<f64>>>()?;
    let all = dataset.scores().iter().chain(&resampled);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
        (a.min(v), b.max(v))
    });
    if hi <= lo {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let bin = |v: f64| (((v - lo) / width).floor() as usize).min(bins - 1);
    let histogram = |values: &[f64]| {
        let mut counts = vec![0u64; bins];
        for &v in values {
            counts[bin(v)] += 1;
        }
        Histogram {
            counts,
            mean: values.iter().sum::<f64>() / values.len() as f64,
        }
    };
    Ok(HistogramPair {
        task: task.name().to_string(),
        edges,
        dataset: histogram(dataset.scores()),
        resampled: histogram(&resampled),
    })
}

/// Oracle values along coordinate `coordinate` of `base`, at `points` evenly
/// spaced positions over `[from, to]`.
pub fn slice_scan(
    task: &Task,
    base: &Design,
    coordinate: usize,
    from: f64,
    to: f64,
    points: usize,
) -> Result<Vec<(f64, f64)>> {
    let x = base
        .as_continuous()
        .ok_or_else(|| Error::Unsupported("slices need a continuous design".into()))?;
    if coordinate >= x.len() {
        return Err(Error::shape(x.len(), coordinate + 1));
    }
    if points < 2 {
        return Err(Error::Parameter("a slice needs at least 2 points".into()));
    }
    let mut probe = x.to_vec();
    (0..points)
        .map(|i| {
            let t = from + (to - from) * i as f64 / (points - 1) as f64;
            probe[coordinate] = t;
            Ok((t, task.oracle_evaluate(&Design::Continuous(probe.clone()))?))
        })
        .collect()
}

/// How sharply the oracle falls off around the best point of a slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceSensitivity {
    pub peak_at: f64,
    pub peak: f64,
    /// Lowest value within `window` of the peak.
    pub window_min: f64,
    /// Lowest value over the whole slice.
    pub floor: f64,
    /// `(peak - window_min) / (peak - floor)`: the share of the slice's
    /// dynamic range lost within the window.
    pub drop_fraction: f64,
}

/// Scans coordinate `coordinate` of `base` across the task bounds and measures
/// the drop within `±window` of the slice maximum.
pub fn slice_sensitivity(
    task: &Task,
    base: &Design,
    coordinate: usize,
    window: f64,
    points: usize,
) -> Result<SliceSensitivity> {
    let crate::space::DesignSpace::Continuous { bounds } = task.space() else {
        return Err(Error::Unsupported("slices need a continuous space".into()));
    };
    let (lo, hi) = *bounds
        .get(coordinate)
        .ok_or_else(|| Error::shape(bounds.len(), coordinate + 1))?;
    let scan = slice_scan(task, base, coordinate, lo, hi, points)?;
    let &(peak_at, peak) = scan
        .iter()
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .expect("at least two points");
    let floor = scan.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let window_min = scan
        .iter()
        .filter(|p| (p.0 - peak_at).abs() <= window + 1e-12)
        .map(|p| p.1)
        .fold(f64::INFINITY, f64::min);
    let range = peak - floor;
    Ok(SliceSensitivity {
        peak_at,
        peak,
        window_min,
        floor,
        drop_fraction: if range > 0.0 { (peak - window_min) / range } else { 0.0 },
    })
}

#[cfg(test)]
mod tests {
    use super::super::{build_dataset, make_sensitive_ridge, make_toy_quadratic};
    use super::*;

    #[test]
    fn counts_sum_to_sample_sizes() {
        let t = make_toy_quadratic();
        let data = build_dataset(&t, 0).unwrap();
        let h = resample_histogram(&t, &data, 3200, 40, 1).unwrap();
        assert_eq!(h.edges.len(), 41);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(h.resampled.counts.iter().sum::<u64>(), 3200);
        assert_eq!(h.dataset.counts.iter().sum::<u64>(), data.len() as u64);
        assert!(h.resampled.mean < 0.0);
    }

    #[test]
    fn ridge_resamples_score_below_data() {
        let t = make_sensitive_ridge(16).unwrap();
        let data = build_dataset(&t, 0).unwrap();
        let h = resample_histogram(&t, &data, 3200, 40, 2).unwrap();
        assert!(h.resampled.mean < h.dataset.mean);
    }

    #[test]
    fn ridge_slice_collapses_near_peak() {
        let t = make_sensitive_ridge(16).unwrap();
        let data = build_dataset(&t, 0).unwrap();
        let s = slice_sensitivity(&t, &data.designs()[data.len() / 2], 0, 0.2, 801).unwrap();
        assert!((s.peak_at - 1.0).abs() < 0.01);
        assert!(s.drop_fraction > 0.5, "{s:?}");
    }

    #[test]
    fn slice_points_are_evenly_spaced() {
        let t = make_toy_quadratic();
        let scan = slice_scan(&t, &Design::Continuous(vec![0.0, 1.0]), 0, -1.0, 1.0, 3).unwrap();
        assert_eq!(scan, vec![(-1.0, -2.0), (0.0, -1.0), (1.0, -2.0)]);
        assert!(slice_scan(&t, &Design::Continuous(vec![0.0, 1.0]), 2, -1.0, 1.0, 3).is_err());
    }
}
