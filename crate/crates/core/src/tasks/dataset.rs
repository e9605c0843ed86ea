use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{Oracle, Sampler, Task};
use crate::error::{Error, Result};
use crate::rng;
use crate::space::{Design, DesignSpace};

/// A static offline dataset of `(design, score)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    designs: Vec<Design>,
    scores: Vec<f64>,
    task_name: String,
}

impl Dataset {
    pub fn new(designs: Vec<Design>, scores: Vec<f64>, task_name: impl Into<String>) -> Result<Self> {
        if designs.len() != scores.len() {
            return Err(Error::shape(designs.len(), scores.len()));
        }
        if designs.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "a dataset needs at least 2 rows, got {}",
                designs.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Data("non-finite score".into()));
        }
        Ok(Dataset {
            designs,
            scores,
            task_name: task_name.into(),
        })
    }

    pub fn designs(&self) -> &[Design] {
        &self.designs
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn task_name(&self) -> &str {
        &self.task_name
    }

    pub fn len(&self) -> usize {
        self.designs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.designs.is_empty()
    }

    pub fn max_score(&self) -> f64 {
        self.scores.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_score(&self) -> f64 {
        self.scores.iter().sum::<f64>() / self.len() as f64
    }

    /// Indices of the `k` highest-scoring rows, best first; ties keep row order.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.scores[b].total_cmp(&self.scores[a]).then(a.cmp(&b)));
        idx.truncate(k);
        idx
    }

    pub fn validate(&self, space: &DesignSpace) -> Result<()> {
        self.designs.iter().try_for_each(|d| space.validate(d))
    }
}

/// Draws the task's pool, scores it with the exact oracle, sorts ascending and
/// keeps the bottom `keep_percentile` percent.
pub fn build_dataset(task: &Task, seed: u64) -> Result<Dataset> {
    let spec = task.dataset_spec();
    let mut r = rng::stream(seed, rng::streams::SAMPLER);
    let pool: Vec<Design> = match &spec.sampler {
        Sampler::Enumerate => task
            .space()
            .enumerate(super::ENUMERATION_CAP)?
            .map(Design::Discrete)
            .collect(),
        Sampler::Uniform => (0..spec.pool_size)
            .map(|_| task.space().sample_uniform(&mut r))
            .collect(),
        Sampler::Gaussian { mean, std } => {
            let DesignSpace::Continuous { bounds } = task.space() else {
                return Err(Error::Unsupported("gaussian sampler needs a continuous space".into()));
            };
            let normal = Normal::new(*mean, *std).map_err(|e| Error::Parameter(e.to_string()))?;
            (0..spec.pool_size)
                .map(|_| {
                    Design::Continuous(
                        bounds
                            .iter()
                            .map(|&(lo, hi)| normal.sample(&mut r).clamp(lo, hi))
                            .collect(),
                    )
                })
                .collect()
        }
        Sampler::PartitionOptimum {
            noise_std,
            exclusion_radius,
        } => {
            let Oracle::Separable { centers } = task.oracle() else {
                return Err(Error::Unsupported(
                    "partition sampler needs a separable oracle".into(),
                ));
            };
            let DesignSpace::Continuous { bounds } = task.space() else {
                unreachable!("separable tasks are continuous")
            };
            let noise = Normal::new(0.0, *noise_std).map_err(|e| Error::Parameter(e.to_string()))?;
            (0..spec.pool_size)
                .map(|_| {
                    let j = r.random_range(0..centers.len());
                    let mut x = vec![0.0; bounds.len()];
                    for (q, &(cq, dq)) in centers.iter().enumerate() {
                        if q == j {
                            continue;
                        }
                        let (bu, bv) = (bounds[2 * q], bounds[2 * q + 1]);
                        loop {
                            let u = bu.0 + (bu.1 - bu.0) * r.random::<f64>();
                            let v = bv.0 + (bv.1 - bv.0) * r.random::<f64>();
                            if (u - cq).powi(2) + (v - dq).powi(2) >= exclusion_radius.powi(2) {
                                x[2 * q] = u;
                                x[2 * q + 1] = v;
                                break;
                            }
                        }
                    }
                    let (c, d) = centers[j];
                    x[2 * j] = (c + noise.sample(&mut r)).clamp(bounds[2 * j].0, bounds[2 * j].1);
                    x[2 * j + 1] =
                        (d + noise.sample(&mut r)).clamp(bounds[2 * j + 1].0, bounds[2 * j + 1].1);
                    Design::Continuous(x)
                })
                .collect()
        }
    };
    let scores = pool
        .iter()
        .map(|d| task.oracle_evaluate(d))
        .collect::<Result<Vec<f64>>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let keep = keep_count(pool.len(), spec.keep_percentile);
    let mut slots: Vec<Option<Design>> = pool.into_iter().map(Some).collect();
    let (designs, kept): (Vec<Design>, Vec<f64>) = order[..keep]
        .iter()
        .map(|&i| (slots[i].take().expect("each index used once"), scores[i]))
        .unzip();
    Dataset::new(designs, kept, task.name())
}

fn keep_count(pool: usize, percentile: f64) -> usize {
    let raw = pool as f64 * percentile / 100.0;
    ((raw + 1e-9).floor() as usize).clamp(2.min(pool), pool)
}
