use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::{parse, require, BestSeen, Proposal};
use crate::density::CATEGORY_FLOOR;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::space::Design;
use crate::surrogate::{EnsembleMode, SurrogateEnsemble};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReinforceConfig {
    pub iterations: usize,
    /// Policy samples per iteration.
    pub batch: usize,
    pub policy_lr: f64,
    /// Members with validation MSE above this are dropped.
    pub val_threshold: f64,
    pub ensemble: usize,
}

impl Default for ReinforceConfig {
    fn default() -> Self {
        ReinforceConfig {
            iterations: 100,
            batch: 256,
            policy_lr: 0.05,
            val_threshold: 0.5,
            ensemble: 5,
        }
    }
}

impl ReinforceConfig {
    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "iterations" => self.iterations = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "policy_lr" => self.policy_lr = parse(key, value)?,
            "val_threshold" => self.val_threshold = parse(key, value)?,
            "ensemble" => self.ensemble = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.batch >= 2, "batch must be at least 2")?;
        require(self.policy_lr > 0.0, "policy_lr must be positive")?;
        require(!self.val_threshold.is_nan(), "val_threshold must be a number")?;
        require(self.ensemble >= 1, "ensemble must be at least 1")
    }
}

/// Rewards minus their mean; exactly zero when all rewards are equal.
fn advantages(values: &[f64]) -> Vec<f64> {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return vec![0.0; values.len()];
    }
    let baseline = values.iter().sum::<f64>() / values.len() as f64;
    values.iter().map(|v| v - baseline).collect()
}

/// Adam on a flat parameter vector, ascending.
#[derive(Debug, Clone)]
struct Ascent {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
    lr: f64,
}

impl Ascent {
    fn new(n: usize, lr: f64) -> Self {
        Ascent {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - 0.9f64.powi(self.t);
        let c2 = 1.0 - 0.999f64.powi(self.t);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = 0.9 * *m + 0.1 * g;
            *v = 0.999 * *v + 0.001 * g * g;
            *p += self.lr * (*m / c1) / ((*v / c2).sqrt() + 1e-8);
        }
    }
}

/// Diagonal Gaussian policy over real vectors, parameterized by the mean and
/// log standard deviation.
#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
    opt: Ascent,
}

impl GaussianPolicy {
    pub fn new(mean: Vec<f64>, log_std: Vec<f64>, lr: f64) -> Result<Self> {
        if mean.len() != log_std.len() || mean.is_empty() {
            return Err(Error::shape(mean.len(), log_std.len()));
        }
        let opt = Ascent::new(2 * mean.len(), lr);
        Ok(GaussianPolicy { mean, log_std, opt })
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                self.mean
                    .iter()
                    .zip(&self.log_std)
                    .map(|(m, s)| { let z: f64 = StandardNormal.sample(rng); m + s.exp() * z })
                    .collect()
            })
            .collect()
    }

    /// One ascent step along the baseline-subtracted score-function estimate.
    pub fn update(&mut self, samples: &[Vec<f64>], rewards: &[f64]) {
        let d = self.mean.len();
        let adv = advantages(rewards);
        let n = samples.len() as f64;
        let mut grad = vec![0.0; 2 * d];
        for (x, a) in samples.iter().zip(&adv) {
            if *a == 0.0 {
                continue;
            }
            for j in 0..d {
                let var = (2.0 * self.log_std[j]).exp();
                let diff = x[j] - self.mean[j];
                grad[j] += a * diff / var / n;
                grad[d + j] += a * (diff * diff / var - 1.0) / n;
            }
        }
        let mut params: Vec<f64> = self.mean.iter().chain(&self.log_std).copied().collect();
        self.opt.step(&mut params, &grad);
        self.mean.copy_from_slice(&params[..d]);
        self.log_std.copy_from_slice(&params[d..]);
    }
}

/// Independent softmax distribution per sequence position.
#[derive(Debug, Clone)]
pub struct CategoricalPolicy {
    pub logits: Vec<Vec<f64>>,
    opt: Ascent,
}

impl CategoricalPolicy {
    pub fn new(logits: Vec<Vec<f64>>, lr: f64) -> Result<Self> {
        let c = logits.first().map_or(0, Vec::len);
        if c < 2 || logits.iter().any(|row| row.len() != c) {
            return Err(Error::Parameter("policy needs equal rows of >= 2 logits".into()));
        }
        let opt = Ascent::new(logits.len() * c, lr);
        Ok(CategoricalPolicy { logits, opt })
    }

    /// Starts from floored category frequencies of `seqs`.
    pub fn from_sequences(seqs: &[&[usize]], categories: usize, lr: f64) -> Result<Self> {
        let length = seqs.first().map_or(0, |s| s.len());
        let mut counts = vec![vec![0.0; categories]; length];
        for s in seqs {
            for (row, &c) in counts.iter_mut().zip(s.iter()) {
                row[c] += 1.0;
            }
        }
        let keep = 1.0 - CATEGORY_FLOOR * categories as f64;
        let logits = counts
            .into_iter()
            .map(|row| {
                row.iter()
                    .map(|n| (CATEGORY_FLOOR + keep * n / seqs.len() as f64).ln())
                    .collect()
            })
            .collect();
        Self::new(logits, lr)
    }

    pub fn probs(&self) -> Vec<Vec<f64>> {
        self.logits.iter().map(|row| softmax(row)).collect()
    }

    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        let probs = self.probs();
        (0..n)
            .map(|_| {
                probs
                    .iter()
                    .map(|p| {
                        let u: f64 = rng.random();
                        let mut acc = 0.0;
                        for (c, pc) in p.iter().enumerate() {
                            acc += pc;
                            if u < acc {
                                return c;
                            }
                        }
                        p.len() - 1
                    })
                    .collect()
            })
            .collect()
    }

    pub fn update(&mut self, samples: &[Vec<usize>], rewards: &[f64]) {
        let c = self.logits[0].len();
        let probs = self.probs();
        let adv = advantages(rewards);
        let n = samples.len() as f64;
        let mut grad = vec![0.0; self.logits.len() * c];
        for (s, a) in samples.iter().zip(&adv) {
            if *a == 0.0 {
                continue;
            }
            for (p, &chosen) in s.iter().enumerate() {
                for k in 0..c {
                    let indicator = if k == chosen { 1.0 } else { 0.0 };
                    grad[p * c + k] += a * (indicator - probs[p][k]) / n;
                }
            }
        }
        let mut params: Vec<f64> = self.logits.iter().flatten().copied().collect();
        self.opt.step(&mut params, &grad);
        for (row, chunk) in self.logits.iter_mut().zip(params.chunks(c)) {
            row.copy_from_slice(chunk);
        }
    }
}

fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Keeps members whose validation loss is at most `threshold`, or the best
/// one when none qualify.
pub(crate) fn filter_ensemble(e: &SurrogateEnsemble, threshold: f64) -> (SurrogateEnsemble, Option<String>) {
    let keep: Vec<usize> = (0..e.len()).filter(|&i| e.val_losses[i] <= threshold).collect();
    let (keep, note) = if keep.is_empty() {
        let best = (0..e.len())
            .min_by(|&a, &b| e.val_losses[a].total_cmp(&e.val_losses[b]))
            .expect("non-empty ensemble");
        (
            vec![best],
            Some(format!(
                "no member met validation threshold {threshold}; kept member {best} (loss {:.4})",
                e.val_losses[best]
            )),
        )
    } else {
        (keep, None)
    };
    let filtered = SurrogateEnsemble::new(
        keep.iter().map(|&i| e.models[i].clone()).collect(),
        keep.iter().map(|&i| e.val_losses[i]).collect(),
    )
    .expect("non-empty subset of a valid ensemble");
    (filtered, note)
}

pub(crate) fn propose(problem: &Problem, cfg: &ReinforceConfig, k: usize, seed: u64) -> Result<Proposal> {
    let full = problem.fit_ensemble(cfg.ensemble, seed)?;
    let (model, note) = filter_ensemble(&full, cfg.val_threshold);
    let mut notes: Vec<String> = note.into_iter().collect();
    let (idx, top) = problem.top_rows(k.min(problem.dataset.len()))?;
    let mut r = rng::stream(seed, rng::streams::POLICY);
    let mut seen = BestSeen::default();
    let score = |designs: &[Design]| -> Result<Vec<f64>> {
        let x = problem.feature_matrix(designs)?;
        Ok(model.predict_batch(x.view(), EnsembleMode::Mean)?.to_vec())
    };
    if problem.space.is_discrete() {
        let categories = problem.categories().expect("discrete space");
        let seqs: Vec<&[usize]> = idx
            .iter()
            .map(|&i| problem.dataset.designs()[i].as_discrete().expect("discrete"))
            .collect();
        let mut policy = CategoricalPolicy::from_sequences(&seqs, categories, cfg.policy_lr)?;
        for it in 0..=cfg.iterations {
            let samples = policy.sample(cfg.batch, &mut r);
            let designs: Vec<Design> = samples.iter().cloned().map(Design::Discrete).collect();
            let f = score(&designs)?;
            for (d, v) in designs.into_iter().zip(&f) {
                seen.push(problem.raw_score(*v), d);
            }
            if it < cfg.iterations {
                policy.update(&samples, &f);
            }
        }
    } else {
        let mean = top.mean_axis(ndarray::Axis(0)).expect("non-empty").to_vec();
        let d = mean.len();
        let mut policy = GaussianPolicy::new(mean, vec![0.0; d], cfg.policy_lr)?;
        for it in 0..=cfg.iterations {
            let samples = policy.sample(cfg.batch, &mut r);
            let designs = samples.iter().map(|z| problem.decode(z)).collect::<Result<Vec<_>>>()?;
            let f = score(&designs)?;
            if f.iter().any(|v| !v.is_finite()) {
                notes.push(format!("non-finite surrogate value at iteration {it}"));
                break;
            }
            for (d, v) in designs.into_iter().zip(&f) {
                seen.push(problem.raw_score(*v), d);
            }
            if it < cfg.iterations {
                policy.update(&samples, &f);
            }
        }
    }
    let (designs, scores) = seen.best(k);
    Ok(Proposal { designs, scores, notes })
}
