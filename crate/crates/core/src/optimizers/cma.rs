use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::{parse, require, BestSeen, Proposal};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CmaEsConfig {
    /// Initial step size in whitened units.
    pub sigma: f64,
    /// Samples per generation; `None` means `max(4 + ⌊3 ln d⌋, 2K)`.
    pub population: Option<usize>,
    pub iterations: usize,
    /// Share of each generation used for the recombination.
    pub elite_fraction: f64,
}

impl Default for CmaEsConfig {
    fn default() -> Self {
        CmaEsConfig {
            sigma: 0.5,
            population: None,
            iterations: 100,
            elite_fraction: 0.25,
        }
    }
}

impl CmaEsConfig {
    pub fn population_for(&self, dim: usize, k: usize) -> usize {
        self.population
            .unwrap_or_else(|| (4 + (3.0 * (dim as f64).ln()).floor() as usize).max(2 * k))
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "sigma" => self.sigma = parse(key, value)?,
            "population" if value == "auto" => self.population = None,
            "population" => self.population = Some(parse(key, value)?),
            "iterations" => self.iterations = parse(key, value)?,
            "elite_fraction" => self.elite_fraction = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.sigma > 0.0, "sigma must be positive")?;
        require(self.population.is_none_or(|p| p >= 2), "population must be at least 2")?;
        require(
            self.elite_fraction > 0.0 && self.elite_fraction < 1.0,
            "elite_fraction must lie in (0, 1)",
        )
    }
}

/// Covariance matrix adaptation evolution strategy, maximizing.
///
/// Log-rank recombination weights over the best `μ` samples, cumulative
/// step-size adaptation and rank-one plus rank-μ covariance updates.
#[derive(Debug, Clone)]
pub struct CmaEs {
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
    mean: DVector<f64>,
    sigma: f64,
    cov: DMatrix<f64>,
    basis: DMatrix<f64>,
    scales: DVector<f64>,
    p_sigma: DVector<f64>,
    p_c: DVector<f64>,
    generation: usize,
    rng: Rng,
}

impl CmaEs {
    pub fn new(mean: Vec<f64>, sigma: f64, lambda: usize, elite_fraction: f64, seed: u64) -> Result<Self> {
        let n = mean.len();
        if n == 0 || lambda < 2 || !(sigma > 0.0) {
            return Err(Error::Parameter("CMA-ES needs dim >= 1, lambda >= 2, sigma > 0".into()));
        }
        let mu = ((lambda as f64 * elite_fraction).floor() as usize).clamp(1, lambda);
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();
        let nf = n as f64;
        let c_sigma = (mu_eff + 2.0) / (nf + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (nf + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / nf) / (nf + 4.0 + 2.0 * mu_eff / nf);
        let c_1 = 2.0 / ((nf + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((nf + 2.0).powi(2) + mu_eff));
        let chi_n = nf.sqrt() * (1.0 - 1.0 / (4.0 * nf) + 1.0 / (21.0 * nf * nf));
        Ok(CmaEs {
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            mean: DVector::from_vec(mean),
            sigma,
            cov: DMatrix::identity(n, n),
            basis: DMatrix::identity(n, n),
            scales: DVector::from_element(n, 1.0),
            p_sigma: DVector::zeros(n),
            p_c: DVector::zeros(n),
            generation: 0,
            rng: rng::stream(seed, rng::streams::PROPOSAL),
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn lambda(&self) -> usize {
        self.lambda
    }

    pub fn generation(&self) -> usize {
        self.generation
    }

    /// Draws one generation from `N(m, σ² C)`.
    pub fn ask(&mut self) -> Vec<Vec<f64>> {
        let n = self.mean.len();
        let transform = &self.basis * DMatrix::from_diagonal(&self.scales);
        (0..self.lambda)
            .map(|_| {
                let z = DVector::from_fn(n, |_, _| StandardNormal.sample(&mut self.rng));
                (&self.mean + (&transform * z) * self.sigma).as_slice().to_vec()
            })
            .collect()
    }

    /// Updates the distribution from scored samples (higher is better).
    pub fn tell(&mut self, samples: &[Vec<f64>], fitness: &[f64]) -> Result<()> {
        let n = self.mean.len();
        if samples.len() != fitness.len() || samples.len() < self.weights.len() {
            return Err(Error::shape(self.weights.len(), samples.len().min(fitness.len())));
        }
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| fitness[b].total_cmp(&fitness[a]).then(a.cmp(&b)));
        let steps: Vec<DVector<f64>> = order[..self.weights.len()]
            .iter()
            .map(|&i| (DVector::from_column_slice(&samples[i]) - &self.mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(n);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w += y * *w;
        }
        self.mean += &y_w * self.sigma;

        let inv_sqrt = &self.basis
            * DMatrix::from_diagonal(&self.scales.map(|s| 1.0 / s))
            * self.basis.transpose();
        let cs = self.c_sigma;
        self.p_sigma = &self.p_sigma * (1.0 - cs) + (&inv_sqrt * &y_w) * (cs * (2.0 - cs) * self.mu_eff).sqrt();
        self.generation += 1;
        let norm_ps = self.p_sigma.norm();
        let decay = (1.0 - (1.0 - cs).powi(2 * self.generation as i32)).sqrt();
        let h_sigma = norm_ps / decay < (1.4 + 2.0 / (n as f64 + 1.0)) * self.chi_n;
        let cc = self.c_c;
        let h = if h_sigma { 1.0 } else { 0.0 };
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * self.mu_eff).sqrt());

        let mut rank_mu = DMatrix::zeros(n, n);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu += (y * y.transpose()) * *w;
        }
        let rank_one = &self.p_c * self.p_c.transpose() + &self.cov * ((1.0 - h) * cc * (2.0 - cc));
        self.cov = &self.cov * (1.0 - self.c_1 - self.c_mu) + rank_one * self.c_1 + rank_mu * self.c_mu;
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        self.sigma *= ((cs / self.d_sigma) * (norm_ps / self.chi_n - 1.0)).exp();
        if !self.sigma.is_finite() || !self.cov.iter().all(|v| v.is_finite()) {
            return Err(Error::Numerical("CMA-ES state diverged".into()));
        }

        let eig = SymmetricEigen::new(self.cov.clone());
        self.basis = eig.eigenvectors;
        self.scales = eig.eigenvalues.map(|v| v.max(1e-300).sqrt());
        Ok(())
    }
}

pub(crate) fn propose(problem: &Problem, cfg: &CmaEsConfig, k: usize, seed: u64) -> Result<Proposal> {
    let ensemble = problem.fit_ensemble(1, seed)?;
    let model = &ensemble.models[0];
    let (_, top) = problem.top_rows(k.min(problem.dataset.len()))?;
    let start = top.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec();
    let lambda = cfg.population_for(problem.dim(), k);
    let mut es = CmaEs::new(start, cfg.sigma, lambda, cfg.elite_fraction, seed)?;
    let mut seen = BestSeen::default();
    let mut notes = Vec::new();
    for it in 0..=cfg.iterations {
        let xs = es.ask();
        let flat: Vec<f64> = xs.iter().flatten().copied().collect();
        let batch = Array2::from_shape_vec((xs.len(), problem.dim()), flat).expect("rows of length d");
        let f = model.predict_batch(batch.view())?.to_vec();
        for (x, v) in xs.iter().zip(&f) {
            seen.push(problem.raw_score(*v), problem.decode(x)?);
        }
        if it < cfg.iterations {
            if let Err(e) = es.tell(&xs, &f) {
                notes.push(format!("stopped after {it} generations: {e}"));
                break;
            }
        }
    }
    let (designs, scores) = seen.best(k);
    Ok(Proposal { designs, scores, notes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optimizers::{propose as run, MethodSpec};
    use crate::tasks::{build_dataset, make_toy_quadratic, Objective};

    #[test]
    fn converges_on_a_bowl() {
        for seed in 0..5 {
            let mut es = CmaEs::new(vec![0.6, 0.8], 0.5, 6, 0.5, seed).unwrap();
            for _ in 0..200 {
                let xs = es.ask();
                let f: Vec<f64> = xs.iter().map(|x| -(x[0] * x[0] + x[1] * x[1])).collect();
                es.tell(&xs, &f).unwrap();
            }
            let m = es.mean();
            assert!((m[0] * m[0] + m[1] * m[1]).sqrt() < 1e-2);
        }
    }

    #[test]
    fn converges_with_the_task_oracle() {
        let task = make_toy_quadratic();
        let lambda = CmaEsConfig::default().population_for(2, 128);
        let mut es = CmaEs::new(vec![1.0, 0.0], 0.5, lambda, 0.25, 3).unwrap();
        let mut reached = false;
        for _ in 0..200 {
            let xs = es.ask();
            let f: Vec<f64> = xs
                .iter()
                .map(|x| task.evaluate(&crate::space::Design::Continuous(x.clone())).unwrap())
                .collect();
            es.tell(&xs, &f).unwrap();
            let m = es.mean();
            if (m[0] * m[0] + m[1] * m[1]).sqrt() <= 1e-2 {
                reached = true;
                break;
            }
        }
        assert!(reached);
    }

    #[test]
    fn default_population() {
        let c = CmaEsConfig::default();
        assert_eq!(c.population_for(2, 128), 256);
        assert_eq!(c.population_for(100, 1), 17);
    }

    #[test]
    fn scores_sorted_and_zero_iterations_sample_the_start() {
        let task = make_toy_quadratic();
        let data = build_dataset(&task, 0).unwrap();
        let spec = MethodSpec::new("cma-es", task.space())
            .unwrap()
            .with_options(&["iterations=0", "train.epochs=2"])
            .unwrap();
        let out = run(&spec, &data, task.space(), 10, 4).unwrap();
        assert_eq!(out.designs.len(), 10);
        assert!(out.surrogate_scores.windows(2).all(|w| w[0] >= w[1]));
    }
}
