//! The evaluation protocol.
//!
//! A trial builds the task's dataset with the trial seed, asks a method for
//! `K` candidates and then, and only then, scores them with the oracle. Trial
//! `i` of a run uses seed `base_seed + i`. Scores are normalized with the
//! task's bounds and summarized by their 100th and 50th percentiles.

mod report;
mod results;
mod stats;

pub use report::{emit_report, parse_report, ReportDocument, ReportFormat};
pub use results::{load_results, save_results, RESULTS_FORMAT_VERSION};
pub use stats::{
    bootstrap_ci, iqm, mean, median, percentile_score, sample_std, stratified_bootstrap_ci, Statistic,
    BOOTSTRAP_SAMPLES, CONFIDENCE,
};

use std::path::PathBuf;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::{propose, MethodSpec};
use crate::space::{Design, DesignSpace};
use crate::tasks::{build_dataset, Dataset, Objective, Task};

/// Environment variable capping the number of concurrent trials.
pub const THREADS_ENV: &str = "MBO_THREADS";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub task: String,
    pub method: MethodSpec,
    pub k: usize,
    pub trials: usize,
    pub base_seed: u64,
    pub output_path: Option<PathBuf>,
}

impl RunConfig {
    /// `K = 128`, 8 trials, default hyperparameters for `method`.
    pub fn new(task: &Task, method: &str, base_seed: u64) -> Result<Self> {
        Ok(RunConfig {
            task: task.name().to_string(),
            method: MethodSpec::new(method, task.space())?,
            k: 128,
            trials: 8,
            base_seed,
            output_path: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.trials == 0 {
            return Err(Error::Parameter("K and trials must be positive".into()));
        }
        self.method.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub raw_scores: Vec<f64>,
    pub normalized_scores: Vec<f64>,
    pub p100: f64,
    pub p50: f64,
    /// Normalized score of the best training design.
    pub dataset_best: f64,
    pub oracle_calls: usize,
    pub oracle_calls_during_propose: usize,
    pub notes: Vec<String>,
}

/// Wraps an objective and counts evaluations.
pub struct CountingOracle<'a> {
    inner: &'a dyn Objective,
    calls: AtomicUsize,
}

impl<'a> CountingOracle<'a> {
    pub fn new(inner: &'a dyn Objective) -> Self {
        CountingOracle {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Objective for CountingOracle<'_> {
    fn space(&self) -> &DesignSpace {
        self.inner.space()
    }

    fn evaluate(&self, design: &Design) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.evaluate(design)
    }
}

/// One trial on a freshly built dataset.
pub fn run_trial(task: &Task, method: &MethodSpec, k: usize, seed: u64) -> Result<TrialResult> {
    let trial = || {
        let dataset = build_dataset(task, seed)?;
        trial_on(task, &dataset, method, k, seed)
    };
    trial().map_err(|e| annotate(e, seed))
}

/// One trial on a given dataset, for example one loaded from disk.
pub fn run_trial_on(task: &Task, dataset: &Dataset, method: &MethodSpec, k: usize, seed: u64) -> Result<TrialResult> {
    trial_on(task, dataset, method, k, seed).map_err(|e| annotate(e, seed))
}

fn annotate(e: Error, seed: u64) -> Error {
    match e {
        Error::Trial { .. } => e,
        other => Error::Trial {
            seed,
            source: Box::new(other),
        },
    }
}

fn trial_on(task: &Task, dataset: &Dataset, method: &MethodSpec, k: usize, seed: u64) -> Result<TrialResult> {
    let oracle = CountingOracle::new(task);
    let candidates = propose(method, dataset, task.space(), k, seed)?;
    let during = oracle.calls();
    if candidates.designs.len() != k {
        return Err(Error::Shape {
            expected: k,
            got: candidates.designs.len(),
        });
    }
    let raw_scores = candidates
        .designs
        .iter()
        .map(|d| oracle.evaluate(d))
        .collect::<Result<Vec<f64>>>()?;
    let normalized_scores: Vec<f64> = raw_scores.iter().map(|&y| task.score_normalize(y)).collect();
    Ok(TrialResult {
        seed,
        p100: percentile_score(&normalized_scores, 100.0)?,
        p50: percentile_score(&normalized_scores, 50.0)?,
        raw_scores,
        normalized_scores,
        dataset_best: task.score_normalize(dataset.max_score()),
        oracle_calls: oracle.calls() - during,
        oracle_calls_during_propose: during,
        notes: candidates.notes,
    })
}

/// A run: its configuration, every trial and the cross-trial summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format_version: u32,
    pub crate_version: String,
    pub config: RunConfig,
    pub trials: Vec<TrialResult>,
    pub aggregate: AggregateReport,
}

/// Trial count from `MBO_THREADS`, else the number of processors.
pub fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs every trial of `config`, concurrently up to [`thread_count`].
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    run_with(config, None)
}

/// Like [`run`], but every trial uses `dataset` instead of building its own.
pub fn run_with(config: &RunConfig, dataset: Option<&Dataset>) -> Result<RunRecord> {
    config.validate()?;
    let task = Task::by_name(&config.task)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count().min(config.trials))
        .build()
        .map_err(|e| Error::Parameter(format!("thread pool: {e}")))?;
    let trials = pool.install(|| {
        (0..config.trials as u64)
            .into_par_iter()
            .map(|i| {
                let seed = config.base_seed.wrapping_add(i);
                match dataset {
                    Some(d) => run_trial_on(&task, d, &config.method, config.k, seed),
                    None => run_trial(&task, &config.method, config.k, seed),
                }
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let aggregate = aggregate(&trials, config.base_seed)?;
    Ok(RunRecord {
        format_version: RESULTS_FORMAT_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        config: config.clone(),
        trials,
        aggregate,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
}

/// Summary of one per-trial quantity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateStats {
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub iqm: f64,
    pub mean_ci: Interval,
    pub median_ci: Interval,
    pub iqm_ci: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub trials: usize,
    pub p100: AggregateStats,
    pub p50: AggregateStats,
    pub dataset_best: AggregateStats,
}

/// Cross-trial statistics of p100, p50 and the dataset-best reference.
pub fn aggregate(trials: &[TrialResult], seed: u64) -> Result<AggregateReport> {
    aggregate_strata(&[trials], seed)
}

/// Aggregates trials grouped by task. Point estimates average the per-task
/// statistic with equal weight, intervals resample within each task, and the
/// standard deviation pools all trials.
pub fn aggregate_strata(strata: &[&[TrialResult]], seed: u64) -> Result<AggregateReport> {
    if strata.is_empty() || strata.iter().any(|s| s.is_empty()) {
        return Err(Error::InsufficientData("aggregate needs at least one trial per task".into()));
    }
    let field = |f: fn(&TrialResult) -> f64| -> Vec<Vec<f64>> {
        strata.iter().map(|s| s.iter().map(f).collect()).collect()
    };
    Ok(AggregateReport {
        trials: strata.iter().map(|s| s.len()).sum(),
        p100: summarize(&field(|t| t.p100), crate::rng::derive(seed, 100))?,
        p50: summarize(&field(|t| t.p50), crate::rng::derive(seed, 50))?,
        dataset_best: summarize(&field(|t| t.dataset_best), crate::rng::derive(seed, 0))?,
    })
}

fn summarize(strata: &[Vec<f64>], seed: u64) -> Result<AggregateStats> {
    let values: Vec<f64> = strata.concat();
    let point = |s: Statistic| -> Result<f64> {
        let mut total = 0.0;
        for v in strata {
            total += s.apply(v)?;
        }
        Ok(total / strata.len() as f64)
    };
    let interval = |s: Statistic, p: f64, i: u64| -> Result<Interval> {
        let (lower, upper) = if strata.iter().all(|v| v.len() >= 2) {
            let refs: Vec<&[f64]> = strata.iter().map(Vec::as_slice).collect();
            stratified_bootstrap_ci(&refs, s, BOOTSTRAP_SAMPLES, CONFIDENCE, crate::rng::derive(seed, i))?
        } else {
            (p, p)
        };
        // A percentile interval can miss a skewed point estimate; widen to cover it.
        Ok(Interval {
            level: CONFIDENCE,
            lower: lower.min(p),
            upper: upper.max(p),
        })
    };
    let (m, med, q) = (point(Statistic::Mean)?, point(Statistic::Median)?, point(Statistic::Iqm)?);
    Ok(AggregateStats {
        std: sample_std(&values)?,
        mean_ci: interval(Statistic::Mean, m, 0)?,
        median_ci: interval(Statistic::Median, med, 1)?,
        iqm_ci: interval(Statistic::Iqm, q, 2)?,
        values,
        mean: m,
        median: med,
        iqm: q,
    })
}
