use serde::{Deserialize, Serialize};

use super::grad::ascend_top_k;
use super::problem::Problem;
use super::{parse, require, Proposal};
use crate::error::Result;
use crate::space::DesignSpace;
use crate::surrogate::{fit_conservative, Conservatism};

/// Surrogate training epochs when COMs runs with default settings.
pub const DEFAULT_EPOCHS: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComsConfig {
    /// Weight of the overestimation penalty.
    pub alpha: f64,
    /// Ascent steps, both for adversarial training designs and for the search.
    pub ascent_steps: usize,
    /// Base step size, scaled by `sqrt(d)` at run time.
    pub ascent_lr: f64,
}

impl ComsConfig {
    pub fn for_space(space: &DesignSpace) -> Self {
        if space.is_discrete() {
            ComsConfig {
                alpha: 2.0,
                ascent_steps: 50,
                ascent_lr: 2.0,
            }
        } else {
            ComsConfig {
                alpha: 0.5,
                ascent_steps: 50,
                ascent_lr: 0.05,
            }
        }
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "alpha" => self.alpha = parse(key, value)?,
            "ascent_steps" => self.ascent_steps = parse(key, value)?,
            "ascent_lr" => self.ascent_lr = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.alpha >= 0.0, "alpha must be nonnegative")?;
        require(self.ascent_lr > 0.0, "ascent_lr must be positive")
    }
}

pub(crate) fn propose(problem: &Problem, cfg: &ComsConfig, k: usize, seed: u64) -> Result<Proposal> {
    problem.require_rows(k)?;
    let step = cfg.ascent_lr * (problem.dim() as f64).sqrt();
    let fit = fit_conservative(
        problem.x.view(),
        problem.y.view(),
        &problem.member_config(seed, 0),
        Conservatism {
            alpha: cfg.alpha,
            ascent_steps: cfg.ascent_steps,
            ascent_lr: step,
        },
    )?;
    ascend_top_k(problem, k, cfg.ascent_steps, step, |z| {
        fit.model.value_and_input_gradient_batch(z)
    })
}
