//! Synthetic offline-MBO tasks with exact oracles.
//!
//! Each task pairs a [`DesignSpace`] with a closed-form objective, the score
//! bounds used for normalization, and a recipe for its offline dataset. Every
//! task is built to exhibit one failure mode of offline optimization:
//!
//! | task | challenge |
//! |------|-----------|
//! | `toy-quadratic` | the optimum lies in a hole the data never covers |
//! | `separable-<m>` | the data is optimal per partition but never jointly |
//! | `discrete-lookup-<L>x<C>` | enumerable sequences, a bottom-half training set |
//! | `sensitive-ridge-<d>` | narrow bumps: valid designs sit on a thin manifold |

mod analysis;
mod dataset;
mod io;

pub use analysis::{resample_histogram, slice_scan, slice_sensitivity, Histogram, HistogramPair, SliceSensitivity};
pub use dataset::{build_dataset, Dataset};
pub use io::{load_dataset, save_dataset, DatasetManifest, DATASET_FORMAT_VERSION};
pub(crate) use io::format_real;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::{Design, DesignSpace};

/// Largest discrete space we are willing to enumerate.
pub const ENUMERATION_CAP: u128 = 1 << 20;

const ORACLE_SEED: u64 = 20_220_211;
const RIDGE_PEAK: f64 = 1.0;
const RIDGE_VARIANCE: f64 = 0.01;

/// Anything that scores designs exactly.
///
/// The harness is the only caller; optimizers never see an `Objective`.
pub trait Objective: Sync {
    fn space(&self) -> &DesignSpace;
    fn evaluate(&self, design: &Design) -> Result<f64>;
}

/// Closed-form ground-truth objective of a task.
#[derive(Debug, Clone, PartialEq)]
pub enum Oracle {
    /// `-Σ x_i²`.
    Quadratic,
    /// `Σ_j -(u_j - c_j)² - (v_j - d_j)²` over consecutive coordinate pairs.
    Separable { centers: Vec<(f64, f64)> },
    /// Unary plus adjacent-pair coefficient tables over a sequence.
    PairwiseLookup {
        categories: usize,
        unary: Vec<f64>,
        pairwise: Vec<f64>,
    },
    /// `Σ_p exp(-(x_p - peak)² / (2 variance))`.
    SensitiveRidge { peak: f64, variance: f64 },
}

/// How a task draws its offline pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Sampler {
    /// Uniform over the box.
    Uniform,
    /// Pick one partition and put it near its optimum; every other pair is
    /// uniform over the box outside `exclusion_radius` of its own optimum.
    PartitionOptimum { noise_std: f64, exclusion_radius: f64 },
    /// Isotropic Gaussian, clipped to the box.
    Gaussian { mean: f64, std: f64 },
    /// Every design of an enumerable discrete space.
    Enumerate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub pool_size: usize,
    pub keep_percentile: f64,
    pub sampler: Sampler,
    pub seed: u64,
}

/// A synthetic task: space, exact oracle, normalization bounds, data recipe.
#[derive(Debug, Clone, PartialEq)]
pub struct Task {
    name: String,
    space: DesignSpace,
    oracle: Oracle,
    y_min: f64,
    y_max: f64,
    dataset_spec: DatasetSpec,
}

/// Names accepted by [`Task::by_name`], in canonical form.
pub const TASK_NAMES: [&str; 4] = [
    "toy-quadratic",
    "separable-4",
    "discrete-lookup-8x4",
    "sensitive-ridge-16",
];

impl Task {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn space(&self) -> &DesignSpace {
        &self.space
    }

    pub fn oracle(&self) -> &Oracle {
        &self.oracle
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn dataset_spec(&self) -> &DatasetSpec {
        &self.dataset_spec
    }

    pub fn with_dataset_spec(mut self, spec: DatasetSpec) -> Result<Self> {
        if !(spec.keep_percentile > 0.0 && spec.keep_percentile <= 100.0) || spec.pool_size < 2 {
            return Err(Error::Parameter(
                "dataset spec needs pool_size >= 2 and keep_percentile in (0, 100]".into(),
            ));
        }
        self.dataset_spec = spec;
        Ok(self)
    }

    /// Looks up a task by canonical name or short alias
    /// (`separable`, `discrete-lookup`, `sensitive-ridge`).
    pub fn by_name(name: &str) -> Result<Task> {
        let unknown = || Error::UnknownTask(name.to_string());
        match name {
            "toy-quadratic" => return Ok(make_toy_quadratic()),
            "separable" => return make_separable(4),
            "discrete-lookup" => return make_discrete_lookup(8, 4),
            "sensitive-ridge" => return make_sensitive_ridge(16),
            _ => {}
        }
        if let Some(m) = name.strip_prefix("separable-") {
            return make_separable(m.parse().map_err(|_| unknown())?);
        }
        if let Some(shape) = name.strip_prefix("discrete-lookup-") {
            let (l, c) = shape.split_once('x').ok_or_else(unknown)?;
            return make_discrete_lookup(
                l.parse().map_err(|_| unknown())?,
                c.parse().map_err(|_| unknown())?,
            );
        }
        if let Some(d) = name.strip_prefix("sensitive-ridge-") {
            return make_sensitive_ridge(d.parse().map_err(|_| unknown())?);
        }
        Err(unknown())
    }

    /// Exact score of a valid design.
    pub fn oracle_evaluate(&self, design: &Design) -> Result<f64> {
        self.space.validate(design)?;
        Ok(match (&self.oracle, design) {
            (Oracle::Quadratic, Design::Continuous(x)) => -x.iter().map(|v| v * v).sum::<f64>(),
            (Oracle::Separable { centers }, Design::Continuous(x)) => centers
                .iter()
                .zip(x.chunks(2))
                .map(|(&(c, d), pair)| -(pair[0] - c).powi(2) - (pair[1] - d).powi(2))
                .sum(),
            (
                Oracle::PairwiseLookup {
                    categories,
                    unary,
                    pairwise,
                },
                Design::Discrete(s),
            ) => pairwise_score(*categories, unary, pairwise, s),
            (Oracle::SensitiveRidge { peak, variance }, Design::Continuous(x)) => x
                .iter()
                .map(|v| (-(v - peak).powi(2) / (2.0 * variance)).exp())
                .sum(),
            _ => {
                return Err(Error::InvalidDesign(
                    "design kind does not match the task oracle".into(),
                ))
            }
        })
    }

    /// `(y - y_min) / (y_max - y_min)`; unbounded on either side.
    pub fn score_normalize(&self, y: f64) -> f64 {
        (y - self.y_min) / (self.y_max - self.y_min)
    }

    /// Exhaustive argmax over an enumerable discrete task. Ties resolve to the
    /// lexicographically smallest sequence.
    pub fn enumerate_optimum(&self) -> Result<(Design, f64)> {
        let mut best: Option<(Vec<usize>, f64)> = None;
        for seq in self.space.enumerate(ENUMERATION_CAP)? {
            let score = self.oracle_evaluate(&Design::Discrete(seq.clone()))?;
            // Enumeration is lexicographic, so strict improvement keeps the smallest.
            if best.as_ref().is_none_or(|(_, b)| score > *b) {
                best = Some((seq, score));
            }
        }
        let (seq, score) = best.ok_or_else(|| Error::InsufficientData("empty space".into()))?;
        Ok((Design::Discrete(seq), score))
    }
}

impl Objective for Task {
    fn space(&self) -> &DesignSpace {
        &self.space
    }

    fn evaluate(&self, design: &Design) -> Result<f64> {
        self.oracle_evaluate(design)
    }
}

fn pairwise_score(categories: usize, unary: &[f64], pairwise: &[f64], seq: &[usize]) -> f64 {
    let mut y = 0.0;
    for (p, &c) in seq.iter().enumerate() {
        y += unary[p * categories + c];
    }
    for (p, w) in seq.windows(2).enumerate() {
        y += pairwise[(p * categories + w[0]) * categories + w[1]];
    }
    y
}

/// `f(x, y) = -x² - y²` on `[-2, 2]²`, trained on the worst half of a uniform
/// pool so the optimum at the origin sits inside an unobserved hole.
pub fn make_toy_quadratic() -> Task {
    Task {
        name: "toy-quadratic".into(),
        space: DesignSpace::cube(2, -2.0, 2.0).expect("valid bounds"),
        oracle: Oracle::Quadratic,
        y_min: -8.0,
        y_max: 0.0,
        dataset_spec: DatasetSpec {
            pool_size: 5000,
            keep_percentile: 50.0,
            sampler: Sampler::Uniform,
            seed: 0,
        },
    }
}

/// Sum of `m` independent two-dimensional bowls with seeded centers in `[-1, 1]²`.
/// Each training sample is near-optimal in at most one partition.
pub fn make_separable(m: usize) -> Result<Task> {
    if m < 2 {
        return Err(Error::Parameter(format!("separable task needs m >= 2, got {m}")));
    }
    let mut r = rng::stream(ORACLE_SEED, rng::streams::ORACLE);
    let centers: Vec<(f64, f64)> = (0..m)
        .map(|_| {
            use rand::Rng as _;
            (r.random_range(-1.0..=1.0), r.random_range(-1.0..=1.0))
        })
        .collect();
    // Worst corner of each bowl on [-2, 2]².
    let y_min = centers
        .iter()
        .map(|&(c, d)| -(2.0 + c.abs()).powi(2) - (2.0 + d.abs()).powi(2))
        .sum();
    Ok(Task {
        name: format!("separable-{m}"),
        space: DesignSpace::cube(2 * m, -2.0, 2.0)?,
        oracle: Oracle::Separable { centers },
        y_min,
        y_max: 0.0,
        dataset_spec: DatasetSpec {
            pool_size: 5000,
            keep_percentile: 100.0,
            sampler: Sampler::PartitionOptimum {
                noise_std: 0.05,
                exclusion_radius: 0.5,
            },
            seed: 0,
        },
    })
}

/// Pairwise-coupled sequence landscape with seeded standard-normal tables.
pub fn make_discrete_lookup(length: usize, categories: usize) -> Result<Task> {
    let mut r = rng::stream(ORACLE_SEED, rng::streams::ORACLE + 1);
    let unary: Vec<f64> = (0..length * categories)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    let pairwise: Vec<f64> = (0..length.saturating_sub(1) * categories * categories)
        .map(|_| StandardNormal.sample(&mut r))
        .collect();
    discrete_lookup_from_tables(length, categories, unary, pairwise)
}

/// Discrete lookup task from explicit coefficient tables: `unary` is
/// `length × categories`, `pairwise` is `(length-1) × categories × categories`,
/// both row-major. Bounds come from exhaustive enumeration; a flat landscape
/// gets `y_min = y_max - 1` so normalization stays defined.
pub fn discrete_lookup_from_tables(
    length: usize,
    categories: usize,
    unary: Vec<f64>,
    pairwise: Vec<f64>,
) -> Result<Task> {
    let space = DesignSpace::discrete(length, categories)?;
    if unary.len() != length * categories {
        return Err(Error::shape(length * categories, unary.len()));
    }
    if pairwise.len() != (length - 1) * categories * categories {
        return Err(Error::shape((length - 1) * categories * categories, pairwise.len()));
    }
    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for seq in space.enumerate(ENUMERATION_CAP)? {
        let y = pairwise_score(categories, &unary, &pairwise, &seq);
        y_min = y_min.min(y);
        y_max = y_max.max(y);
    }
    if y_max <= y_min {
        y_min = y_max - 1.0;
    }
    let pool_size = space.cardinality().expect("enumerable") as usize;
    Ok(Task {
        name: format!("discrete-lookup-{length}x{categories}"),
        space,
        oracle: Oracle::PairwiseLookup {
            categories,
            unary,
            pairwise,
        },
        y_min,
        y_max,
        dataset_spec: DatasetSpec {
            pool_size,
            keep_percentile: 50.0,
            sampler: Sampler::Enumerate,
            seed: 0,
        },
    })
}

/// One narrow Gaussian bump per coordinate, all peaking at 1; data is drawn
/// around 0.8 so it sits on the bumps' flanks.
pub fn make_sensitive_ridge(dim: usize) -> Result<Task> {
    Ok(Task {
        name: format!("sensitive-ridge-{dim}"),
        space: DesignSpace::cube(dim, -2.0, 2.0)?,
        oracle: Oracle::SensitiveRidge {
            peak: RIDGE_PEAK,
            variance: RIDGE_VARIANCE,
        },
        y_min: 0.0,
        y_max: dim as f64,
        dataset_spec: DatasetSpec {
            pool_size: 5000,
            keep_percentile: 80.0,
            sampler: Sampler::Gaussian {
                mean: 0.8,
                std: 0.15,
            },
            seed: 0,
        },
    })
}
