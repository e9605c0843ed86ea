//! Design spaces, designs, and the normalization and relaxation machinery the
//! optimizers share.
//!
//! Optimizers never work on raw designs. A design is first *encoded* as a real
//! feature vector (continuous designs as-is, discrete sequences as smoothed
//! per-position log-probabilities), then whitened with a [`Normalizer`] fit on
//! the offline dataset. Candidates travel the same path backwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are clamped so constant columns stay inert.
pub const STD_EPSILON: f64 = 1e-6;

/// Default mass moved off the observed category when relaxing a sequence.
pub const DEFAULT_SMOOTHING: f64 = 0.3;

/// The set of admissible designs for a task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DesignSpace {
    Continuous { bounds: Vec<(f64, f64)> },
    Discrete { length: usize, categories: usize },
}

/// A single point of a [`DesignSpace`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Design {
    Continuous(Vec<f64>),
    Discrete(Vec<usize>),
}

impl DesignSpace {
    pub fn continuous(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Parameter("continuous space needs dim >= 1".into()));
        }
        if let Some((i, _)) = bounds
            .iter()
            .enumerate()
            .find(|(_, (lo, hi))| !(lo < hi) || !lo.is_finite() || !hi.is_finite())
        {
            return Err(Error::Parameter(format!(
                "dimension {i} needs finite lo < hi"
            )));
        }
        Ok(DesignSpace::Continuous { bounds })
    }

    /// A box with identical bounds in every dimension.
    pub fn cube(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Self::continuous(vec![(lo, hi); dim])
    }

    pub fn discrete(length: usize, categories: usize) -> Result<Self> {
        if length == 0 || categories < 2 {
            return Err(Error::Parameter(
                "discrete space needs length >= 1 and categories >= 2".into(),
            ));
        }
        Ok(DesignSpace::Discrete { length, categories })
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DesignSpace::Discrete { .. })
    }

    /// Number of coordinates in a raw design.
    pub fn dim(&self) -> usize {
        match self {
            DesignSpace::Continuous { bounds } => bounds.len(),
            DesignSpace::Discrete { length, .. } => *length,
        }
    }

    /// Dimensionality `d` of the real representation optimizers search over
    /// (`length * categories` for sequences).
    pub fn feature_dim(&self) -> usize {
        match self {
            DesignSpace::Continuous { bounds } => bounds.len(),
            DesignSpace::Discrete { length, categories } => length * categories,
        }
    }

    /// Total number of designs, `None` for continuous spaces or on overflow.
    pub fn cardinality(&self) -> Option<u128> {
        match self {
            DesignSpace::Continuous { .. } => None,
            DesignSpace::Discrete { length, categories } => {
                let mut n: u128 = 1;
                for _ in 0..*length {
                    n = n.checked_mul(*categories as u128)?;
                }
                Some(n)
            }
        }
    }

    pub fn validate(&self, design: &Design) -> Result<()> {
        match (self, design) {
            (DesignSpace::Continuous { bounds }, Design::Continuous(x)) => {
                if x.len() != bounds.len() {
                    return Err(Error::InvalidDesign(format!(
                        "expected {} coordinates, got {}",
                        bounds.len(),
                        x.len()
                    )));
                }
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidDesign("non-finite coordinate".into()));
                }
                Ok(())
            }
            (DesignSpace::Discrete { length, categories }, Design::Discrete(s)) => {
                if s.len() != *length {
                    return Err(Error::InvalidDesign(format!(
                        "expected length {length}, got {}",
                        s.len()
                    )));
                }
                if let Some(c) = s.iter().find(|&&c| c >= *categories) {
                    return Err(Error::InvalidDesign(format!(
                        "category {c} out of range 0..{categories}"
                    )));
                }
                Ok(())
            }
            _ => Err(Error::InvalidDesign(
                "design kind does not match space kind".into(),
            )),
        }
    }

    /// Real feature vector of a design: identity for continuous designs,
    /// [`to_logits`] with the default smoothing for sequences.
    pub fn encode(&self, design: &Design) -> Result<Vec<f64>> {
        self.validate(design)?;
        match design {
            Design::Continuous(x) => Ok(x.clone()),
            Design::Discrete(_) => to_logits(self, design, DEFAULT_SMOOTHING),
        }
    }

    /// Maps a feature vector back to a valid design: continuous coordinates are
    /// clipped to the bounds, logits are decoded by [`from_logits`].
    pub fn decode(&self, features: &[f64]) -> Result<Design> {
        match self {
            DesignSpace::Continuous { bounds } => {
                if features.len() != bounds.len() {
                    return Err(Error::shape(bounds.len(), features.len()));
                }
                Ok(Design::Continuous(
                    features
                        .iter()
                        .zip(bounds)
                        .map(|(&v, &(lo, hi))| if v.is_nan() { lo } else { v.clamp(lo, hi) })
                        .collect(),
                ))
            }
            DesignSpace::Discrete { .. } => from_logits(self, features),
        }
    }

    /// One uniform draw from the space.
    pub fn sample_uniform<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Design {
        match self {
            DesignSpace::Continuous { bounds } => Design::Continuous(
                bounds
                    .iter()
                    .map(|&(lo, hi)| lo + (hi - lo) * rng.random::<f64>())
                    .collect(),
            ),
            DesignSpace::Discrete { length, categories } => {
                Design::Discrete((0..*length).map(|_| rng.random_range(0..*categories)).collect())
            }
        }
    }

    /// Every sequence of a discrete space in lexicographic order.
    pub fn enumerate(&self, cap: u128) -> Result<impl Iterator<Item = Vec<usize>>> {
        let (length, categories) = match self {
            DesignSpace::Discrete { length, categories } => (*length, *categories),
            DesignSpace::Continuous { .. } => {
                return Err(Error::Unsupported("cannot enumerate a continuous space".into()))
            }
        };
        let total = self.cardinality().unwrap_or(u128::MAX);
        if total > cap {
            return Err(Error::Enumeration(total));
        }
        Ok((0..total as u64).map(move |mut index| {
            let mut seq = vec![0; length];
            for slot in seq.iter_mut().rev() {
                *slot = (index % categories as u64) as usize;
                index /= categories as u64;
            }
            seq
        }))
    }
}

impl Design {
    pub fn as_continuous(&self) -> Option<&[f64]> {
        match self {
            Design::Continuous(x) => Some(x),
            Design::Discrete(_) => None,
        }
    }

    pub fn as_discrete(&self) -> Option<&[usize]> {
        match self {
            Design::Discrete(s) => Some(s),
            Design::Continuous(_) => None,
        }
    }
}

/// Per-column affine whitening transform.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub epsilon: f64,
}

impl Normalizer {
    /// Column means and population standard deviations of `rows`, with the
    /// deviation clamped below at [`STD_EPSILON`].
    pub fn fit<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        if rows.len() < 2 {
            return Err(Error::InsufficientData(format!(
                "normalizer needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let d = rows[0].as_ref().len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows {
            let row = row.as_ref();
            if row.len() != d {
                return Err(Error::shape(d, row.len()));
            }
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for row in rows {
            for ((s, v), m) in var.iter_mut().zip(row.as_ref()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| (s / n).sqrt().max(STD_EPSILON))
            .collect();
        Ok(Normalizer {
            mean,
            std,
            epsilon: STD_EPSILON,
        })
    }

    /// Fit on a single column of scalars.
    pub fn fit_scalar(values: &[f64]) -> Result<Self> {
        let rows: Vec<[f64; 1]> = values.iter().map(|&v| [v]).collect();
        Self::fit(&rows)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| (v - m) / s)
            .collect())
    }

    pub fn denormalize(&self, row: &[f64]) -> Result<Vec<f64>> {
        self.check(row)?;
        Ok(row
            .iter()
            .zip(&self.mean)
            .zip(&self.std)
            .map(|((v, m), s)| v * s + m)
            .collect())
    }

    /// Scalar shortcuts for a one-column normalizer (scores).
    pub fn normalize_scalar(&self, v: f64) -> f64 {
        (v - self.mean[0]) / self.std[0]
    }

    pub fn denormalize_scalar(&self, v: f64) -> f64 {
        v * self.std[0] + self.mean[0]
    }

    fn check(&self, row: &[f64]) -> Result<()> {
        if row.len() != self.mean.len() {
            return Err(Error::shape(self.mean.len(), row.len()));
        }
        Ok(())
    }
}

/// Relaxes a sequence into per-position log-probabilities: mass `1 - smoothing`
/// on the observed category, `smoothing / (categories - 1)` on each other one.
/// Output is position-major.
pub fn to_logits(space: &DesignSpace, design: &Design, smoothing: f64) -> Result<Vec<f64>> {
    if !(smoothing > 0.0 && smoothing < 1.0) {
        return Err(Error::Parameter(format!(
            "smoothing must lie in (0, 1), got {smoothing}"
        )));
    }
    let categories = match space {
        DesignSpace::Discrete { categories, .. } => *categories,
        DesignSpace::Continuous { .. } => {
            return Err(Error::Unsupported("logits require a discrete space".into()))
        }
    };
    space.validate(design)?;
    let seq = design.as_discrete().expect("validated as discrete");
    let on = (1.0 - smoothing).ln();
    let off = (smoothing / (categories - 1) as f64).ln();
    let mut out = Vec::with_capacity(seq.len() * categories);
    for &c in seq {
        out.extend((0..categories).map(|k| if k == c { on } else { off }));
    }
    Ok(out)
}

/// Per-position argmax decoding; ties go to the lowest category index.
pub fn from_logits(space: &DesignSpace, logits: &[f64]) -> Result<Design> {
    let (length, categories) = match space {
        DesignSpace::Discrete { length, categories } => (*length, *categories),
        DesignSpace::Continuous { .. } => {
            return Err(Error::Unsupported("logits require a discrete space".into()))
        }
    };
    if logits.len() != length * categories {
        return Err(Error::shape(length * categories, logits.len()));
    }
    let seq = logits
        .chunks(categories)
        .map(|block| {
            let mut best = 0;
            for (k, &v) in block.iter().enumerate().skip(1) {
                // NaN never wins.
                if v > block[best] || (block[best].is_nan() && !v.is_nan()) {
                    best = k;
                }
            }
            best
        })
        .collect();
    Ok(Design::Discrete(seq))
}
