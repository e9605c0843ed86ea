use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::mlp::{MlpModel, ParamGrads};
use crate::error::{Error, Result};
use crate::rng;

/// Supervised-regression settings shared by every surrogate fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch: usize,
    pub step_size: f64,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![64, 64],
            epochs: 200,
            batch: 128,
            step_size: 1e-3,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn with_seed(&self, seed: u64) -> Self {
        TrainConfig {
            seed,
            ..self.clone()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch == 0 || self.hidden.contains(&0) {
            return Err(Error::Parameter(
                "epochs, batch and hidden widths must be positive".into(),
            ));
        }
        if !(self.step_size > 0.0) || !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Parameter(
                "step_size must be positive and val_fraction in (0, 1)".into(),
            ));
        }
        Ok(())
    }
}

/// Outcome of a surrogate fit.
#[derive(Debug, Clone)]
pub struct Fit {
    pub model: MlpModel,
    /// Held-out mean squared error (weighted for reweighted fits).
    pub val_loss: f64,
    /// Mini-batch objective at every optimizer step.
    pub step_losses: Vec<f64>,
    pub val_rows: Vec<usize>,
}

/// Settings of the conservative penalty: adversarial designs come from
/// `ascent_steps` plain gradient-ascent steps of size `ascent_lr` on the
/// current model, started at the batch designs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conservatism {
    pub alpha: f64,
    pub ascent_steps: usize,
    pub ascent_lr: f64,
}

/// Plain mean-squared-error fit.
pub fn fit_surrogate(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &TrainConfig) -> Result<Fit> {
    train(x, y, None, None, cfg)
}

/// Importance-weighted fit: minimizes `Σ w_i (f̂(x_i) - y_i)²` with weights
/// rescaled to mean one.
pub fn fit_reweighted(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    weights: &[f64],
    cfg: &TrainConfig,
) -> Result<Fit> {
    if weights.len() != x.nrows() {
        return Err(Error::shape(x.nrows(), weights.len()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Data("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return Err(Error::Data("weights are all zero".into()));
    }
    let scale = weights.len() as f64 / total;
    let normalized: Vec<f64> = weights.iter().map(|w| w * scale).collect();
    train(x, y, Some(&normalized), None, cfg)
}

/// Conservative fit: per batch, minimizes
/// `MSE + alpha · (mean f̂(x_adv) - mean f̂(x_batch))`, where `x_adv` is found by
/// gradient ascent on the current model and held fixed for the update.
pub fn fit_conservative(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    cfg: &TrainConfig,
    penalty: Conservatism,
) -> Result<Fit> {
    if !(penalty.alpha >= 0.0) || !(penalty.ascent_lr > 0.0) {
        return Err(Error::Parameter(
            "conservative fit needs alpha >= 0 and ascent_lr > 0".into(),
        ));
    }
    train(x, y, None, Some(penalty), cfg)
}

/// Seeded shuffle, then the last `val_fraction` of rows are held out.
pub(crate) fn split(n: usize, cfg: &TrainConfig) -> Result<(Vec<usize>, Vec<usize>)> {
    let n_val = ((n as f64 * cfg.val_fraction).round() as usize).max(1);
    if n_val >= n {
        return Err(Error::InsufficientData(format!(
            "{n} rows leave no training data at val_fraction {}",
            cfg.val_fraction
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(cfg.seed, rng::streams::SHUFFLE));
    let val = idx.split_off(n - n_val);
    Ok((idx, val))
}

struct Adam {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    t: i32,
    lr: f64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &MlpModel, lr: f64) -> Self {
        Adam {
            m_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: model.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: model.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut MlpModel, grads: &ParamGrads) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        let lr = self.lr;
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
        };
        for l in 0..model.weights.len() {
            ndarray::Zip::from(&mut model.weights[l])
                .and(&grads.weights[l])
                .and(&mut self.m_w[l])
                .and(&mut self.v_w[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut model.biases[l])
                .and(&grads.biases[l])
                .and(&mut self.m_b[l])
                .and(&mut self.v_b[l])
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

fn add_grads(into: &mut ParamGrads, other: &ParamGrads) {
    for (a, b) in into.weights.iter_mut().zip(&other.weights) {
        *a += b;
    }
    for (a, b) in into.biases.iter_mut().zip(&other.biases) {
        *a += b;
    }
}

fn train(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    weights: Option<&[f64]>,
    penalty: Option<Conservatism>,
    cfg: &TrainConfig,
) -> Result<Fit> {
    cfg.validate()?;
    let n = x.nrows();
    if n == 0 || y.len() != n {
        return Err(Error::Data(format!(
            "need matching non-empty inputs and targets, got {n} and {}",
            y.len()
        )));
    }
    if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite training value".into()));
    }
    let (train_rows, val_rows) = split(n, cfg)?;
    let mut model = MlpModel::init(x.ncols(), &cfg.hidden, cfg.seed)?;
    let mut adam = Adam::new(&model, cfg.step_size);
    let mut order = train_rows.clone();
    let mut shuffler = rng::stream(cfg.seed, rng::streams::SHUFFLE + 100);
    let mut step_losses = Vec::with_capacity(cfg.epochs * train_rows.len().div_ceil(cfg.batch));
    let penalty = penalty.filter(|p| p.alpha > 0.0);

    for _ in 0..cfg.epochs {
        order.shuffle(&mut shuffler);
        for chunk in order.chunks(cfg.batch) {
            let xb = x.select(Axis(0), chunk);
            let yb = y.select(Axis(0), chunk);
            let b = chunk.len() as f64;
            let tape = model.forward(xb.view());
            let residual = &tape.output - &yb;
            let (loss, mut d_out) = match weights {
                None => (
                    residual.mapv(|r| r * r).sum() / b,
                    residual.mapv(|r| 2.0 * r / b),
                ),
                Some(w) => {
                    let wb: Array1<f64> = chunk.iter().map(|&i| w[i]).collect();
                    (
                        (&wb * &residual.mapv(|r| r * r)).sum() / b,
                        &wb * &residual.mapv(|r| 2.0 * r / b),
                    )
                }
            };
            let mut total_loss = loss;
            let mut grads;
            if let Some(p) = penalty {
                let adv = ascend(&model, xb.clone(), p.ascent_steps, p.ascent_lr);
                let adv_tape = model.forward(adv.view());
                total_loss += p.alpha * (adv_tape.output.mean().unwrap() - tape.output.mean().unwrap());
                d_out -= p.alpha / b;
                grads = model.backward_params(&tape, &d_out);
                let d_adv = Array1::from_elem(chunk.len(), p.alpha / b);
                add_grads(&mut grads, &model.backward_params(&adv_tape, &d_adv));
            } else {
                grads = model.backward_params(&tape, &d_out);
            }
            adam.step(&mut model, &grads);
            step_losses.push(total_loss);
        }
    }

    let xv = x.select(Axis(0), &val_rows);
    let yv = y.select(Axis(0), &val_rows);
    let pred = model.predict_batch(xv.view())?;
    let sq = (&pred - &yv).mapv(|r| r * r);
    let val_loss = match weights {
        None => sq.mean().unwrap(),
        Some(w) => {
            let wv: Array1<f64> = val_rows.iter().map(|&i| w[i]).collect();
            let wsum = wv.sum();
            if wsum > 0.0 {
                (&wv * &sq).sum() / wsum
            } else {
                sq.mean().unwrap()
            }
        }
    };
    Ok(Fit {
        model,
        val_loss,
        step_losses,
        val_rows,
    })
}

/// Plain gradient ascent on `model` from every row of `start`.
pub fn ascend(model: &MlpModel, mut start: Array2<f64>, steps: usize, lr: f64) -> Array2<f64> {
    for _ in 0..steps {
        let (_, g) = model
            .value_and_input_gradient_batch(start.view())
            .expect("rows match the model input");
        start.scaled_add(lr, &g);
    }
    start
}
