use ndarray::{Array1, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::{parse, require, Proposal};
use crate::error::Result;
use crate::surrogate::EnsembleMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradConfig {
    pub mode: EnsembleMode,
    /// Ascent steps `T`.
    pub steps: usize,
    /// Base step size, scaled by `sqrt(d)` at run time.
    pub lr: f64,
    /// Members fitted for `min` and `mean`; `single` always fits one.
    pub ensemble: usize,
}

impl GradConfig {
    pub fn new(mode: EnsembleMode) -> Self {
        GradConfig {
            mode,
            steps: 200,
            lr: 0.05,
            ensemble: 5,
        }
    }

    pub fn members(&self) -> usize {
        match self.mode {
            EnsembleMode::Single => 1,
            _ => self.ensemble,
        }
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "mode" => self.mode = value.parse()?,
            "steps" => self.steps = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "ensemble" => self.ensemble = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.lr > 0.0, "lr must be positive")?;
        require(self.ensemble >= 1, "ensemble must be at least 1")
    }
}

pub(crate) fn propose(problem: &Problem, cfg: &GradConfig, k: usize, seed: u64) -> Result<Proposal> {
    problem.require_rows(k)?;
    let ensemble = problem.fit_ensemble(cfg.members(), seed)?;
    let step = cfg.lr * (problem.dim() as f64).sqrt();
    ascend_top_k(problem, k, cfg.steps, step, |z| ensemble.reduce_batch(z, cfg.mode))
}

/// Fixed-step gradient ascent from the top-`k` training rows, decoded at the end.
pub(crate) fn ascend_top_k<F>(problem: &Problem, k: usize, steps: usize, step: f64, objective: F) -> Result<Proposal>
where
    F: Fn(ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)>,
{
    let (idx, start) = problem.top_rows(k)?;
    let z = ascend(start.clone(), steps, step, &objective)?;
    let (values, _) = objective(z.view())?;
    let delta = &z - &start;
    let designs = idx
        .iter()
        .zip(delta.rows())
        .map(|(&i, d)| problem.decode_displaced(i, d.as_slice().expect("standard layout")))
        .collect::<Result<_>>()?;
    Ok(Proposal {
        designs,
        scores: values.iter().map(|&v| problem.raw_score(v)).collect(),
        notes: Vec::new(),
    })
}

pub(crate) fn ascend<F>(mut z: Array2<f64>, steps: usize, step: f64, objective: &F) -> Result<Array2<f64>>
where
    F: Fn(ArrayView2<f64>) -> Result<(Array1<f64>, Array2<f64>)>,
{
    for _ in 0..steps {
        let (_, g) = objective(z.view())?;
        z.scaled_add(step, &g);
    }
    Ok(z)
}
