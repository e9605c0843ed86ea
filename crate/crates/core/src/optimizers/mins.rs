use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::{parse, require, Proposal};
use crate::density::{ConditionalSampler, DEFAULT_BANDWIDTH};
use crate::error::Result;
use crate::rng;
use crate::space::Design;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinsConfig {
    /// Target score above the best training score, in whitened units.
    pub y_margin: f64,
    pub bandwidth: f64,
}

impl Default for MinsConfig {
    fn default() -> Self {
        MinsConfig {
            y_margin: 0.5,
            bandwidth: DEFAULT_BANDWIDTH,
        }
    }
}

impl MinsConfig {
    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "y_margin" => self.y_margin = parse(key, value)?,
            "bandwidth" => self.bandwidth = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.y_margin.is_finite(), "y_margin must be finite")?;
        require(self.bandwidth > 0.0, "bandwidth must be positive")
    }
}

pub(crate) fn propose(problem: &Problem, cfg: &MinsConfig, k: usize, seed: u64) -> Result<Proposal> {
    let categories = problem.categories();
    let points: Vec<Design> = match categories {
        Some(_) => problem.dataset.designs().to_vec(),
        None => problem
            .x
            .rows()
            .into_iter()
            .map(|r| Design::Continuous(r.to_vec()))
            .collect(),
    };
    let y = problem.y.to_vec();
    let y_star = y.iter().copied().fold(f64::NEG_INFINITY, f64::max) + cfg.y_margin;
    let sampler = ConditionalSampler::fit(points, y, categories)?.with_bandwidth(cfg.bandwidth)?;
    let draw = sampler.sample_conditional(y_star, k, rng::derive(seed, 1))?;
    let designs = draw
        .designs
        .iter()
        .map(|p| match p {
            Design::Continuous(z) => problem.decode(z),
            Design::Discrete(_) => Ok(p.clone()),
        })
        .collect::<Result<Vec<_>>>()?;
    // The surrogate only labels the candidates for reporting.
    let model = problem.fit_ensemble(1, seed)?;
    let f = model.models[0].predict_batch(problem.feature_matrix(&designs)?.view())?;
    let mut notes = Vec::new();
    if draw.used_fallback {
        notes.push(format!("all kernel weights underflowed at y* = {y_star:.3}; used nearest rows"));
    }
    Ok(Proposal {
        designs,
        scores: f.iter().map(|&v| problem.raw_score(v)).collect(),
        notes,
    })
}
