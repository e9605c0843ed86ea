use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use super::problem::Problem;
use super::{parse, require, Proposal};
use crate::density::Density;
use crate::error::Result;
use crate::rng;
use crate::space::Design;
use crate::surrogate::{EnsembleMode, SurrogateEnsemble};

/// Importance ratios are clamped to `[1/WEIGHT_CLAMP, WEIGHT_CLAMP]`.
pub const WEIGHT_CLAMP: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbasConfig {
    pub iterations: usize,
    /// Designs drawn from the search density per iteration.
    pub samples_per_iter: usize,
    /// Quantile of batch predictions used as the threshold `τ_t`.
    pub quantile: f64,
    /// Refit the surrogate with importance weights every iteration.
    pub autofocus: bool,
    pub ensemble: usize,
}

impl CbasConfig {
    pub fn new(autofocus: bool) -> Self {
        CbasConfig {
            iterations: 20,
            samples_per_iter: 512,
            quantile: 0.9,
            autofocus,
            ensemble: 5,
        }
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "samples_per_iter" => self.samples_per_iter = parse(key, value)?,
            "quantile" => self.quantile = parse(key, value)?,
            "autofocus" => self.autofocus = parse(key, value)?,
            "ensemble" => self.ensemble = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.samples_per_iter >= 2, "samples_per_iter must be at least 2")?;
        require(self.quantile > 0.0 && self.quantile < 1.0, "quantile must lie in (0, 1)")?;
        require(self.ensemble >= 1, "ensemble must be at least 1")
    }
}

/// What happened inside one CbAS run.
#[derive(Debug, Clone, Default)]
pub struct CbasTrace {
    /// Decoded samples of each search density `p_t`, in order.
    pub batches: Vec<Vec<Design>>,
    /// Mean ensemble prediction over each batch (whitened units).
    pub mean_predictions: Vec<f64>,
    /// Training-row importance weights of every autofocus refit.
    pub autofocus_weights: Vec<Vec<f64>>,
    /// Iteration at which the effective sample size fell below 2.
    pub stopped_at: Option<usize>,
}

/// `exp(clamp(log_num - log_den, ±ln WEIGHT_CLAMP))` elementwise.
pub fn importance_weights(log_num: &[f64], log_den: &[f64]) -> Vec<f64> {
    let bound = WEIGHT_CLAMP.ln();
    log_num
        .iter()
        .zip(log_den)
        .map(|(a, b)| (a - b).clamp(-bound, bound).exp())
        .collect()
}

/// CbAS sample weights: the clamped ratio `p_0 / p_t` times `Pr(f ≥ τ)` under
/// a Gaussian with the ensemble's mean and spread. A zero spread gives a step.
pub fn cbas_weights(log_p0: &[f64], log_pt: &[f64], mean: &[f64], std: &[f64], tau: f64) -> Vec<f64> {
    importance_weights(log_p0, log_pt)
        .into_iter()
        .zip(mean.iter().zip(std))
        .map(|(ratio, (&m, &s))| ratio * survival(m, s, tau))
        .collect()
}

fn survival(mean: f64, std: f64, tau: f64) -> f64 {
    if tau == f64::NEG_INFINITY {
        1.0
    } else if std > 0.0 {
        0.5 * erfc((tau - mean) / (std * std::f64::consts::SQRT_2))
    } else if mean >= tau {
        1.0
    } else {
        0.0
    }
}

/// Order statistic at index `⌈q·n⌉ - 1` of the sorted values.
fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len()) - 1;
    v[idx]
}

fn effective_sample_size(w: &[f64]) -> f64 {
    let s: f64 = w.iter().sum();
    let s2: f64 = w.iter().map(|v| v * v).sum();
    if s2 > 0.0 {
        s * s / s2
    } else {
        0.0
    }
}

pub(crate) fn propose(problem: &Problem, cfg: &CbasConfig, k: usize, seed: u64) -> Result<(Proposal, CbasTrace)> {
    let categories = problem.categories();
    // Search points: whitened features for continuous spaces, sequences otherwise.
    let data_points: Vec<Design> = match categories {
        Some(_) => problem.dataset.designs().to_vec(),
        None => problem
            .x
            .rows()
            .into_iter()
            .map(|r| Design::Continuous(r.to_vec()))
            .collect(),
    };
    let to_design = |p: &Design| -> Result<Design> {
        match p {
            Design::Continuous(z) => problem.decode(z),
            Design::Discrete(_) => Ok(p.clone()),
        }
    };
    let p0 = Density::fit_weighted(&data_points, &vec![1.0; data_points.len()], categories)?;
    let base = problem.fit_ensemble(cfg.ensemble, seed)?;
    let train_cfg = problem.train_config(seed);
    let log_p0_data = log_densities(&p0, &data_points)?;

    let mut trace = CbasTrace::default();
    let mut notes = Vec::new();
    let mut pt = p0.clone();
    let mut ensemble: SurrogateEnsemble = base.clone();
    for t in 0..cfg.iterations {
        let samples = pt.sample(cfg.samples_per_iter, rng::derive(seed, t as u64 + 1));
        let designs = samples.iter().map(to_design).collect::<Result<Vec<_>>>()?;
        if cfg.autofocus {
            let w = importance_weights(&log_densities(&pt, &data_points)?, &log_p0_data);
            ensemble = if w.iter().all(|&v| v == 1.0) {
                base.clone()
            } else {
                SurrogateEnsemble::fit_reweighted(
                    problem.x.view(),
                    problem.y.view(),
                    &w,
                    &train_cfg,
                    cfg.ensemble,
                )?
            };
            trace.autofocus_weights.push(w);
        }
        let features = problem.feature_matrix(&designs)?;
        let (mean, std) = ensemble.mean_std_batch(features.view())?;
        let (mean, std) = (mean.to_vec(), std.to_vec());
        let tau = quantile(&mean, cfg.quantile);
        let weights = cbas_weights(
            &log_densities(&p0, &samples)?,
            &log_densities(&pt, &samples)?,
            &mean,
            &std,
            tau,
        );
        trace.mean_predictions.push(mean.iter().sum::<f64>() / mean.len() as f64);
        trace.batches.push(designs);
        if effective_sample_size(&weights) < 2.0 {
            notes.push(format!("effective sample size below 2 at iteration {t}; kept the previous density"));
            trace.stopped_at = Some(t);
            break;
        }
        pt = Density::fit_weighted(&samples, &weights, categories)?;
    }

    let last = pt.sample(k, rng::derive(seed, 0));
    let designs = last.iter().map(to_design).collect::<Result<Vec<_>>>()?;
    let features = problem.feature_matrix(&designs)?;
    let f = ensemble.predict_batch(features.view(), EnsembleMode::Mean)?;
    let mut order: Vec<usize> = (0..designs.len()).collect();
    order.sort_by(|&a, &b| f[b].total_cmp(&f[a]).then(a.cmp(&b)));
    Ok((
        Proposal {
            designs: order.iter().map(|&i| designs[i].clone()).collect(),
            scores: order.iter().map(|&i| problem.raw_score(f[i])).collect(),
            notes,
        },
        trace,
    ))
}

fn log_densities(p: &Density, points: &[Design]) -> Result<Vec<f64>> {
    points.iter().map(|x| p.log_density(x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ratio_is_one_when_densities_match() {
        let lp = [-3.2, 0.5, -10.0];
        assert!(importance_weights(&lp, &lp).iter().all(|&w| w == 1.0));
        let w = cbas_weights(&lp, &lp, &[0.0; 3], &[1.0; 3], f64::NEG_INFINITY);
        assert_eq!(w, vec![1.0; 3]);
    }

    #[test]
    fn ratios_are_clamped() {
        let w = importance_weights(&[100.0, -100.0, 0.3], &[0.0, 0.0, 0.0]);
        assert!((w[0] - 20.0).abs() < 1e-12);
        assert!((w[1] - 0.05).abs() < 1e-15);
        assert!((w[2] - 0.3f64.exp()).abs() < 1e-15);
    }

    #[test]
    fn survival_probabilities() {
        assert!((survival(0.0, 1.0, 0.0) - 0.5).abs() < 1e-15);
        assert!(survival(0.0, 1.0, 3.0) < 0.01);
        assert_eq!(survival(1.0, 0.0, 1.0), 1.0);
        assert_eq!(survival(0.9, 0.0, 1.0), 0.0);
    }

    #[test]
    fn quantile_rule() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(quantile(&v, 0.9), 9.0);
        assert_eq!(quantile(&v, 0.05), 1.0);
        assert_eq!(effective_sample_size(&[1.0; 8]), 8.0);
        assert_eq!(effective_sample_size(&[0.0, 3.0]), 1.0);
    }
}
