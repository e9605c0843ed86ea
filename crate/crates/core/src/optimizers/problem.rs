use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::{Design, DesignSpace, Normalizer};
use crate::surrogate::{SurrogateEnsemble, TrainConfig};
use crate::tasks::Dataset;

/// A dataset in whitened feature space, shared by every method.
pub(crate) struct Problem<'a> {
    pub dataset: &'a Dataset,
    pub space: &'a DesignSpace,
    pub train: TrainConfig,
    /// Encoded designs before whitening.
    pub raw: Vec<Vec<f64>>,
    pub xn: Normalizer,
    pub yn: Normalizer,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl<'a> Problem<'a> {
    pub fn new(dataset: &'a Dataset, space: &'a DesignSpace, train: &TrainConfig) -> Result<Self> {
        let raw = dataset
            .designs()
            .iter()
            .map(|d| space.encode(d))
            .collect::<Result<Vec<_>>>()?;
        let xn = Normalizer::fit(&raw)?;
        let yn = Normalizer::fit_scalar(dataset.scores())?;
        let d = space.feature_dim();
        let mut x = Array2::zeros((raw.len(), d));
        for (mut row, r) in x.rows_mut().into_iter().zip(&raw) {
            row.assign(&Array1::from(xn.normalize(r)?));
        }
        let y = dataset.scores().iter().map(|&s| yn.normalize_scalar(s)).collect();
        Ok(Problem {
            dataset,
            space,
            train: train.clone(),
            raw,
            xn,
            yn,
            x,
            y,
        })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn categories(&self) -> Option<usize> {
        match self.space {
            DesignSpace::Discrete { categories, .. } => Some(*categories),
            DesignSpace::Continuous { .. } => None,
        }
    }

    pub fn require_rows(&self, k: usize) -> Result<()> {
        if self.dataset.len() < k {
            return Err(Error::InsufficientData(format!(
                "dataset has {} rows, fewer than K = {k}",
                self.dataset.len()
            )));
        }
        Ok(())
    }

    /// Whitened features of a design.
    pub fn features(&self, design: &Design) -> Result<Vec<f64>> {
        self.xn.normalize(&self.space.encode(design)?)
    }

    pub fn feature_matrix(&self, designs: &[Design]) -> Result<Array2<f64>> {
        let mut m = Array2::zeros((designs.len(), self.dim()));
        for (mut row, d) in m.rows_mut().into_iter().zip(designs) {
            row.assign(&Array1::from(self.features(d)?));
        }
        Ok(m)
    }

    /// Maps a whitened point back to a valid design.
    pub fn decode(&self, z: &[f64]) -> Result<Design> {
        self.space.decode(&self.xn.denormalize(z)?)
    }

    /// Decodes training row `row` moved by `delta` in whitened units. A zero
    /// displacement reproduces the stored design exactly.
    pub fn decode_displaced(&self, row: usize, delta: &[f64]) -> Result<Design> {
        let moved: Vec<f64> = self.raw[row]
            .iter()
            .zip(delta)
            .zip(&self.xn.std)
            .map(|((r, d), s)| r + d * s)
            .collect();
        self.space.decode(&moved)
    }

    pub fn raw_score(&self, normalized: f64) -> f64 {
        self.yn.denormalize_scalar(normalized)
    }

    pub fn top_rows(&self, k: usize) -> Result<(Vec<usize>, Array2<f64>)> {
        self.require_rows(k)?;
        let idx = self.dataset.top_k(k);
        let rows = self.x.select(ndarray::Axis(0), &idx);
        Ok((idx, rows))
    }

    pub fn train_config(&self, seed: u64) -> TrainConfig {
        self.train.with_seed(rng::derive(seed, 0))
    }

    /// Settings of ensemble member `i`, as used by [`fit_ensemble`](Self::fit_ensemble).
    pub fn member_config(&self, seed: u64, i: usize) -> TrainConfig {
        let base = self.train_config(seed);
        base.with_seed(rng::derive(base.seed, i as u64))
    }

    pub fn fit_ensemble(&self, members: usize, seed: u64) -> Result<SurrogateEnsemble> {
        SurrogateEnsemble::fit(self.x.view(), self.y.view(), &self.train_config(seed), members)
    }
}
