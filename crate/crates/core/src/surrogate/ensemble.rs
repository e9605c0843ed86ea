use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use super::mlp::MlpModel;
use super::train::{fit_reweighted, fit_surrogate, Fit, TrainConfig};
use crate::error::{Error, Result};
use crate::rng;

/// How an ensemble's members are combined into one objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Member 0 only.
    Single,
    /// Pessimistic: the lowest member prediction.
    Min,
    /// The arithmetic mean of all members.
    Mean,
}

impl std::str::FromStr for EnsembleMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(EnsembleMode::Single),
            "min" => Ok(EnsembleMode::Min),
            "mean" => Ok(EnsembleMode::Mean),
            other => Err(Error::Parameter(format!("unknown ensemble mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SurrogateEnsemble {
    pub models: Vec<MlpModel>,
    pub val_losses: Vec<f64>,
}

impl SurrogateEnsemble {
    pub fn new(models: Vec<MlpModel>, val_losses: Vec<f64>) -> Result<Self> {
        if models.is_empty() {
            return Err(Error::InsufficientData("empty ensemble".into()));
        }
        if val_losses.len() != models.len() {
            return Err(Error::shape(models.len(), val_losses.len()));
        }
        let d = models[0].input_dim();
        if let Some(m) = models.iter().find(|m| m.input_dim() != d) {
            return Err(Error::shape(d, m.input_dim()));
        }
        Ok(SurrogateEnsemble { models, val_losses })
    }

    /// Fits `members` models whose seeds are derived from `cfg.seed`.
    pub fn fit(x: ArrayView2<f64>, y: ArrayView1<f64>, cfg: &TrainConfig, members: usize) -> Result<Self> {
        if members == 0 {
            return Err(Error::Parameter("ensemble needs at least one member".into()));
        }
        let fits = (0..members)
            .map(|i| fit_surrogate(x, y, &cfg.with_seed(rng::derive(cfg.seed, i as u64))))
            .collect::<Result<Vec<Fit>>>()?;
        Self::new(
            fits.iter().map(|f| f.model.clone()).collect(),
            fits.iter().map(|f| f.val_loss).collect(),
        )
    }

    /// Like [`fit`](Self::fit) with every member trained by
    /// [`fit_reweighted`] under the same member seeds.
    pub fn fit_reweighted(
        x: ArrayView2<f64>,
        y: ArrayView1<f64>,
        weights: &[f64],
        cfg: &TrainConfig,
        members: usize,
    ) -> Result<Self> {
        if members == 0 {
            return Err(Error::Parameter("ensemble needs at least one member".into()));
        }
        let fits = (0..members)
            .map(|i| fit_reweighted(x, y, weights, &cfg.with_seed(rng::derive(cfg.seed, i as u64))))
            .collect::<Result<Vec<Fit>>>()?;
        Self::new(
            fits.iter().map(|f| f.model.clone()).collect(),
            fits.iter().map(|f| f.val_loss).collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.models[0].input_dim()
    }

    /// Reduced prediction and its gradient at a single point.
    pub fn reduce(&self, x: &[f64], mode: EnsembleMode) -> Result<(f64, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.len()));
        }
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        let (v, g) = self.reduce_batch(row, mode)?;
        Ok((v[0], g.row(0).to_vec()))
    }

    /// Row-wise [`reduce`](Self::reduce). For `Min` the gradient is taken
    /// through the minimizing member, ties going to the lowest index.
    pub fn reduce_batch(&self, x: ArrayView2<f64>, mode: EnsembleMode) -> Result<(Array1<f64>, Array2<f64>)> {
        match mode {
            EnsembleMode::Single => self.models[0].value_and_input_gradient_batch(x),
            EnsembleMode::Mean => {
                let (mut v, mut g) = self.models[0].value_and_input_gradient_batch(x)?;
                for m in &self.models[1..] {
                    let (vi, gi) = m.value_and_input_gradient_batch(x)?;
                    v += &vi;
                    g += &gi;
                }
                let n = self.models.len() as f64;
                Ok((v / n, g / n))
            }
            EnsembleMode::Min => {
                let (mut v, mut g) = self.models[0].value_and_input_gradient_batch(x)?;
                for m in &self.models[1..] {
                    let (vi, gi) = m.value_and_input_gradient_batch(x)?;
                    for r in 0..v.len() {
                        if vi[r] < v[r] {
                            v[r] = vi[r];
                            g.row_mut(r).assign(&gi.row(r));
                        }
                    }
                }
                Ok((v, g))
            }
        }
    }

    /// Reduced predictions without gradients.
    pub fn predict_batch(&self, x: ArrayView2<f64>, mode: EnsembleMode) -> Result<Array1<f64>> {
        match mode {
            EnsembleMode::Single => self.models[0].predict_batch(x),
            EnsembleMode::Mean => Ok(self.mean_std_batch(x)?.0),
            EnsembleMode::Min => {
                let mut v = self.models[0].predict_batch(x)?;
                for m in &self.models[1..] {
                    v.zip_mut_with(&m.predict_batch(x)?, |a, &b| *a = a.min(b));
                }
                Ok(v)
            }
        }
    }

    /// Member mean and population standard deviation per row.
    pub fn mean_std_batch(&self, x: ArrayView2<f64>) -> Result<(Array1<f64>, Array1<f64>)> {
        let preds = self
            .models
            .iter()
            .map(|m| m.predict_batch(x))
            .collect::<Result<Vec<_>>>()?;
        let n = preds.len() as f64;
        let mut mean = Array1::zeros(x.nrows());
        for p in &preds {
            mean += p;
        }
        mean /= n;
        let mut var = Array1::zeros(x.nrows());
        for p in &preds {
            var += &(p - &mean).mapv(|d| d * d);
        }
        Ok((mean, (var / n).mapv(f64::sqrt)))
    }
}
