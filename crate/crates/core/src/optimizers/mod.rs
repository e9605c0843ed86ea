//! Offline optimizers. Each consumes a [`Dataset`] and its [`DesignSpace`],
//! never the task oracle, and returns `K` candidate designs.
//!
//! | name | method |
//! |------|--------|
//! | `dataset-best` | top-`K` training designs (reference) |
//! | `grad`, `grad-min`, `grad-mean` | gradient ascent on one model, the ensemble minimum or the ensemble mean |
//! | `cma-es` | covariance matrix adaptation on the surrogate |
//! | `reinforce` | score-function policy gradient on the surrogate |
//! | `cbas`, `autofocused-cbas` | conditioning by adaptive sampling, optionally with importance-weighted refits |
//! | `mins` | score-conditioned inverse sampling |
//! | `bo-qei` | Gaussian-process batch expected improvement on surrogate labels |
//! | `coms` | gradient ascent on a conservatively trained model |
//!
//! All methods work on whitened features: continuous designs as is, sequences
//! as smoothed logits. Relaxed points are decoded by clipping to the bounds or
//! by per-position argmax.

mod bo;
mod cbas;
mod cma;
mod coms;
mod grad;
mod mins;
mod problem;
mod reinforce;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use bo::{psd_cholesky, q_expected_improvement, BoQeiConfig, GaussianProcess};
pub use cbas::{cbas_weights, importance_weights, CbasConfig, CbasTrace, WEIGHT_CLAMP};
pub use cma::{CmaEs, CmaEsConfig};
pub use coms::ComsConfig;
pub use grad::GradConfig;
pub use mins::MinsConfig;
pub use reinforce::{CategoricalPolicy, GaussianPolicy, ReinforceConfig};

use crate::error::{Error, Result};
use crate::space::{Design, DesignSpace};
use crate::surrogate::{EnsembleMode, TrainConfig};
use crate::tasks::Dataset;
use problem::Problem;

/// Registered method names, in listing order.
pub const METHOD_NAMES: [&str; 11] = [
    "dataset-best",
    "grad",
    "grad-min",
    "grad-mean",
    "cma-es",
    "reinforce",
    "cbas",
    "autofocused-cbas",
    "mins",
    "bo-qei",
    "coms",
];

/// Per-method hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MethodConfig {
    DatasetBest,
    Grad(GradConfig),
    CmaEs(CmaEsConfig),
    Reinforce(ReinforceConfig),
    Cbas(CbasConfig),
    Mins(MinsConfig),
    BoQei(BoQeiConfig),
    Coms(ComsConfig),
}

/// A named method with its hyperparameters and surrogate training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSpec {
    pub name: String,
    pub config: MethodConfig,
    pub train: TrainConfig,
}

impl MethodSpec {
    /// Defaults for `name`. COMs defaults depend on whether `space` is discrete.
    pub fn new(name: &str, space: &DesignSpace) -> Result<Self> {
        let mut train = TrainConfig::default();
        let config = match name {
            "dataset-best" => MethodConfig::DatasetBest,
            "grad" => MethodConfig::Grad(GradConfig::new(EnsembleMode::Single)),
            "grad-min" => MethodConfig::Grad(GradConfig::new(EnsembleMode::Min)),
            "grad-mean" => MethodConfig::Grad(GradConfig::new(EnsembleMode::Mean)),
            "cma-es" => MethodConfig::CmaEs(CmaEsConfig::default()),
            "reinforce" => MethodConfig::Reinforce(ReinforceConfig::default()),
            "cbas" => MethodConfig::Cbas(CbasConfig::new(false)),
            "autofocused-cbas" => MethodConfig::Cbas(CbasConfig::new(true)),
            "mins" => MethodConfig::Mins(MinsConfig::default()),
            "bo-qei" => MethodConfig::BoQei(BoQeiConfig::for_space(space)),
            "coms" => {
                train.epochs = coms::DEFAULT_EPOCHS;
                MethodConfig::Coms(ComsConfig::for_space(space))
            }
            other => return Err(Error::UnknownMethod(other.to_string())),
        };
        Ok(MethodSpec {
            name: name.to_string(),
            config,
            train,
        })
    }

    /// Applies one `key=value` override. Keys prefixed `train.` set the
    /// surrogate training settings, the rest set method hyperparameters.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if let Some(k) = key.strip_prefix("train.") {
            let t = &mut self.train;
            match k {
                "hidden" => {
                    t.hidden = value
                        .split(',')
                        .map(|w| parse(key, w.trim()))
                        .collect::<Result<_>>()?
                }
                "epochs" => t.epochs = parse(key, value)?,
                "batch" => t.batch = parse(key, value)?,
                "step_size" => t.step_size = parse(key, value)?,
                "val_fraction" => t.val_fraction = parse(key, value)?,
                _ => return Err(unknown_key(&self.name, key)),
            }
            return Ok(());
        }
        let known = match &mut self.config {
            MethodConfig::DatasetBest => false,
            MethodConfig::Grad(c) => c.set(key, value)?,
            MethodConfig::CmaEs(c) => c.set(key, value)?,
            MethodConfig::Reinforce(c) => c.set(key, value)?,
            MethodConfig::Cbas(c) => c.set(key, value)?,
            MethodConfig::Mins(c) => c.set(key, value)?,
            MethodConfig::BoQei(c) => c.set(key, value)?,
            MethodConfig::Coms(c) => c.set(key, value)?,
        };
        if known {
            Ok(())
        } else {
            Err(unknown_key(&self.name, key))
        }
    }

    /// Applies `key=value` strings in order.
    pub fn with_options<S: AsRef<str>>(mut self, options: &[S]) -> Result<Self> {
        for opt in options {
            let opt = opt.as_ref();
            let (k, v) = opt
                .split_once('=')
                .ok_or_else(|| Error::Parameter(format!("option `{opt}` is not key=value")))?;
            self.set(k.trim(), v.trim())?;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        match &self.config {
            MethodConfig::DatasetBest => Ok(()),
            MethodConfig::Grad(c) => c.validate(),
            MethodConfig::CmaEs(c) => c.validate(),
            MethodConfig::Reinforce(c) => c.validate(),
            MethodConfig::Cbas(c) => c.validate(),
            MethodConfig::Mins(c) => c.validate(),
            MethodConfig::BoQei(c) => c.validate(),
            MethodConfig::Coms(c) => c.validate(),
        }
    }
}

pub(crate) fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Parameter(format!("cannot parse `{value}` for `{key}`")))
}

fn unknown_key(method: &str, key: &str) -> Error {
    Error::Parameter(format!("method `{method}` has no option `{key}`"))
}

pub(crate) fn require(ok: bool, what: &str) -> Result<()> {
    if ok {
        Ok(())
    } else {
        Err(Error::Parameter(what.to_string()))
    }
}

/// The `K` designs a method proposes, with the surrogate's raw-unit score for
/// each.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub designs: Vec<Design>,
    pub surrogate_scores: Vec<f64>,
    pub method: String,
    pub seed: u64,
    /// Fallbacks and early stops taken during the run.
    pub notes: Vec<String>,
}

/// Runs `spec` on `dataset` and returns exactly `k` designs valid for `space`.
pub fn propose(
    spec: &MethodSpec,
    dataset: &Dataset,
    space: &DesignSpace,
    k: usize,
    seed: u64,
) -> Result<CandidateSet> {
    spec.validate()?;
    if k == 0 {
        return Err(Error::Parameter("K must be positive".into()));
    }
    dataset.validate(space)?;
    let problem = Problem::new(dataset, space, &spec.train)?;
    let out = match &spec.config {
        MethodConfig::DatasetBest => dataset_best(&problem, k),
        MethodConfig::Grad(c) => grad::propose(&problem, c, k, seed),
        MethodConfig::CmaEs(c) => cma::propose(&problem, c, k, seed),
        MethodConfig::Reinforce(c) => reinforce::propose(&problem, c, k, seed),
        MethodConfig::Cbas(c) => cbas::propose(&problem, c, k, seed).map(|(out, _)| out),
        MethodConfig::Mins(c) => mins::propose(&problem, c, k, seed),
        MethodConfig::BoQei(c) => bo::propose(&problem, c, k, seed),
        MethodConfig::Coms(c) => coms::propose(&problem, c, k, seed),
    }?;
    debug_assert_eq!(out.designs.len(), k);
    Ok(CandidateSet {
        designs: out.designs,
        surrogate_scores: out.scores,
        method: spec.name.clone(),
        seed,
        notes: out.notes,
    })
}

/// Runs CbAS (or autofocused CbAS, per `spec`) and also returns its trace.
pub fn run_cbas(
    spec: &MethodSpec,
    dataset: &Dataset,
    space: &DesignSpace,
    k: usize,
    seed: u64,
) -> Result<(CandidateSet, CbasTrace)> {
    let MethodConfig::Cbas(cfg) = &spec.config else {
        return Err(Error::Parameter(format!("`{}` is not a CbAS method", spec.name)));
    };
    spec.validate()?;
    dataset.validate(space)?;
    let problem = Problem::new(dataset, space, &spec.train)?;
    let (out, trace) = cbas::propose(&problem, cfg, k, seed)?;
    Ok((
        CandidateSet {
            designs: out.designs,
            surrogate_scores: out.scores,
            method: spec.name.clone(),
            seed,
            notes: out.notes,
        },
        trace,
    ))
}

/// What a method returns before it is labelled.
#[derive(Debug, Default)]
pub(crate) struct Proposal {
    pub designs: Vec<Design>,
    /// Raw score units.
    pub scores: Vec<f64>,
    pub notes: Vec<String>,
}

fn dataset_best(problem: &Problem, k: usize) -> Result<Proposal> {
    problem.require_rows(k)?;
    let top = problem.dataset.top_k(k);
    Ok(Proposal {
        designs: top.iter().map(|&i| problem.dataset.designs()[i].clone()).collect(),
        scores: top.iter().map(|&i| problem.dataset.scores()[i]).collect(),
        notes: Vec::new(),
    })
}

/// Keeps every scored design seen during a search and returns the best `k`
/// distinct ones.
#[derive(Debug, Default)]
pub(crate) struct BestSeen {
    entries: Vec<(f64, Design)>,
}

impl BestSeen {
    pub fn push(&mut self, score: f64, design: Design) {
        self.entries.push((score, design));
    }

    /// Highest scores first, earlier entries first on ties. Repeats are used
    /// only when fewer than `k` distinct designs were seen.
    pub fn best(self, k: usize) -> (Vec<Design>, Vec<f64>) {
        let mut order: Vec<usize> = (0..self.entries.len()).collect();
        order.sort_by(|&a, &b| self.entries[b].0.total_cmp(&self.entries[a].0).then(a.cmp(&b)));
        let mut seen = HashSet::new();
        let mut picked = Vec::with_capacity(k);
        let mut repeats = Vec::new();
        for &i in &order {
            if seen.insert(design_key(&self.entries[i].1)) {
                picked.push(i);
                if picked.len() == k {
                    break;
                }
            } else if repeats.len() < k {
                repeats.push(i);
            }
        }
        let missing = k.saturating_sub(picked.len());
        picked.extend(repeats.into_iter().take(missing));
        // Too few entries overall: cycle through what there is.
        let have = picked.len();
        for i in 0..k.saturating_sub(have) {
            picked.push(picked[i % have]);
        }
        picked.sort_by(|&a, &b| self.entries[b].0.total_cmp(&self.entries[a].0).then(a.cmp(&b)));
        let mut designs = Vec::with_capacity(picked.len());
        let mut scores = Vec::with_capacity(picked.len());
        for i in picked {
            designs.push(self.entries[i].1.clone());
            scores.push(self.entries[i].0);
        }
        (designs, scores)
    }
}

fn design_key(d: &Design) -> Vec<u64> {
    match d {
        Design::Continuous(x) => x.iter().map(|v| v.to_bits()).collect(),
        Design::Discrete(s) => s.iter().map(|&c| c as u64).collect(),
    }
}
