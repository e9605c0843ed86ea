//! Closed-form design densities fit by weighted maximum likelihood.
//!
//! Continuous designs get a full-covariance Gaussian, sequences a product of
//! per-position categoricals. Both give exact log-densities, which is what the
//! importance ratios `p_0(x) / p_t(x)` of adaptive-sampling methods need.
//! [`ConditionalSampler`] builds a score-conditioned density by kernel
//! weighting the dataset around a target score.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;
use crate::space::Design;

/// Added to the diagonal of every fitted covariance.
pub const COVARIANCE_RIDGE: f64 = 1e-4;
/// Smallest probability any category keeps after a fit.
pub const CATEGORY_FLOOR: f64 = 1e-3;
/// Default kernel width of [`ConditionalSampler`], in normalized score units.
pub const DEFAULT_BANDWIDTH: f64 = 0.2;
/// Rows used when every kernel weight underflows.
pub const FALLBACK_ROWS: usize = 32;

#[derive(Debug, Clone)]
pub struct GaussianDensity {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    ridge: f64,
    factor: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl GaussianDensity {
    /// Builds a density from a mean and covariance; `ridge · I` is added
    /// before factorizing.
    pub fn new(mean: Vec<f64>, covariance: DMatrix<f64>, ridge: f64) -> Result<Self> {
        let d = mean.len();
        if d == 0 || covariance.shape() != (d, d) {
            return Err(Error::shape(d, covariance.nrows()));
        }
        if (&covariance - covariance.transpose()).amax() > 1e-12 * covariance.amax().max(1.0) {
            return Err(Error::Parameter("covariance is not symmetric".into()));
        }
        let regularized = &covariance + DMatrix::identity(d, d) * ridge;
        let factor = Cholesky::new(regularized)
            .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?;
        let log_det = 2.0 * factor.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(GaussianDensity {
            mean: DVector::from_vec(mean),
            covariance,
            ridge,
            factor,
            log_det,
        })
    }

    /// Weighted mean and weighted (divisor `Σw`) covariance.
    pub fn fit_weighted(samples: &[Vec<f64>], weights: &[f64]) -> Result<Self> {
        let total = check_weights(samples.len(), weights)?;
        let d = samples[0].len();
        let mut mean = vec![0.0; d];
        for (x, &w) in samples.iter().zip(weights) {
            if x.len() != d {
                return Err(Error::shape(d, x.len()));
            }
            for (m, v) in mean.iter_mut().zip(x) {
                *m += w / total * v;
            }
        }
        let mut cov = DMatrix::zeros(d, d);
        for (x, &w) in samples.iter().zip(weights) {
            if w == 0.0 {
                continue;
            }
            let c = w / total;
            for i in 0..d {
                let di = x[i] - mean[i];
                for j in 0..=i {
                    cov[(i, j)] += c * di * (x[j] - mean[j]);
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(j, i)] = cov[(i, j)];
            }
        }
        Self::new(mean, cov, COVARIANCE_RIDGE)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    /// The fitted covariance, before the ridge.
    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn ridge(&self) -> f64 {
        self.ridge
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut r = rng::stream(seed, rng::streams::SAMPLER);
        let l = self.factor.l();
        (0..n)
            .map(|_| {
                let z = DVector::from_fn(self.dim(), |_, _| StandardNormal.sample(&mut r));
                (&self.mean + &l * z).as_slice().to_vec()
            })
            .collect()
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::shape(self.dim(), x.len()));
        }
        let diff = DVector::from_column_slice(x) - &self.mean;
        let solved = self
            .factor
            .l_dirty()
            .solve_lower_triangular(&diff)
            .ok_or_else(|| Error::Numerical("singular factor".into()))?;
        let d = self.dim() as f64;
        Ok(-0.5 * (d * (2.0 * std::f64::consts::PI).ln() + self.log_det + solved.norm_squared()))
    }
}

/// Independent categorical distribution at every sequence position.
#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSeqDensity {
    probs: Vec<Vec<f64>>,
    floor: f64,
}

impl CategoricalSeqDensity {
    /// Takes per-position distributions as given (no floor).
    pub fn from_probs(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() || probs[0].len() < 2 {
            return Err(Error::Parameter("need >= 1 position and >= 2 categories".into()));
        }
        let c = probs[0].len();
        for row in &probs {
            if row.len() != c {
                return Err(Error::shape(c, row.len()));
            }
            if row.iter().any(|p| !(*p >= 0.0)) || (row.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
                return Err(Error::Parameter("each position must be a distribution".into()));
            }
        }
        Ok(CategoricalSeqDensity { probs, floor: 0.0 })
    }

    /// Weighted category frequencies per position, then mixed with the uniform
    /// distribution so every entry is at least [`CATEGORY_FLOOR`]:
    /// `p = floor + (1 - categories · floor) · q`.
    pub fn fit_weighted(seqs: &[Vec<usize>], categories: usize, weights: &[f64]) -> Result<Self> {
        let total = check_weights(seqs.len(), weights)?;
        if categories < 2 || CATEGORY_FLOOR * categories as f64 >= 1.0 {
            return Err(Error::Parameter(format!("unsupported category count {categories}")));
        }
        let length = seqs[0].len();
        let mut probs = vec![vec![0.0; categories]; length];
        for (s, &w) in seqs.iter().zip(weights) {
            if s.len() != length {
                return Err(Error::shape(length, s.len()));
            }
            for (row, &c) in probs.iter_mut().zip(s) {
                if c >= categories {
                    return Err(Error::InvalidDesign(format!("category {c} out of range")));
                }
                row[c] += w;
            }
        }
        let keep = 1.0 - CATEGORY_FLOOR * categories as f64;
        for row in &mut probs {
            for p in row.iter_mut() {
                *p = CATEGORY_FLOOR + keep * (*p / total);
            }
        }
        Ok(CategoricalSeqDensity {
            probs,
            floor: CATEGORY_FLOOR,
        })
    }

    pub fn length(&self) -> usize {
        self.probs.len()
    }

    pub fn categories(&self) -> usize {
        self.probs[0].len()
    }

    pub fn probs(&self) -> &[Vec<f64>] {
        &self.probs
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    /// Per-position inverse-CDF draws.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<usize>> {
        let mut r = rng::stream(seed, rng::streams::SAMPLER);
        (0..n)
            .map(|_| self.probs.iter().map(|row| inverse_cdf(row, r.random())).collect())
            .collect()
    }

    pub fn log_density(&self, seq: &[usize]) -> Result<f64> {
        if seq.len() != self.length() {
            return Err(Error::shape(self.length(), seq.len()));
        }
        seq.iter()
            .zip(&self.probs)
            .map(|(&c, row)| {
                row.get(c)
                    .map(|p| p.ln())
                    .ok_or_else(|| Error::InvalidDesign(format!("category {c} out of range")))
            })
            .sum()
    }
}

fn inverse_cdf(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (c, p) in row.iter().enumerate() {
        acc += p;
        if u < acc {
            return c;
        }
    }
    // u fell into the rounding gap above the last partial sum.
    row.iter().rposition(|&p| p > 0.0).unwrap_or(row.len() - 1)
}

fn check_weights(n: usize, weights: &[f64]) -> Result<f64> {
    if n == 0 {
        return Err(Error::InsufficientData("no samples to fit".into()));
    }
    if weights.len() != n {
        return Err(Error::shape(n, weights.len()));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Data("weights must be finite and nonnegative".into()));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0) {
        return Err(Error::Data("weights are all zero".into()));
    }
    Ok(total)
}

/// A density over designs: Gaussian over real feature vectors or categorical
/// over sequences.
#[derive(Debug, Clone)]
pub enum Density {
    Gaussian(GaussianDensity),
    Categorical(CategoricalSeqDensity),
}

impl Density {
    /// Weighted maximum-likelihood fit. Continuous designs must all be
    /// `Design::Continuous`, sequences `Design::Discrete` with `categories` set.
    pub fn fit_weighted(points: &[Design], weights: &[f64], categories: Option<usize>) -> Result<Self> {
        let first = points
            .first()
            .ok_or_else(|| Error::InsufficientData("no samples to fit".into()))?;
        match first {
            Design::Continuous(_) => {
                let rows = points
                    .iter()
                    .map(|p| p.as_continuous().map(<[f64]>::to_vec))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::InvalidDesign("mixed design kinds".into()))?;
                Ok(Density::Gaussian(GaussianDensity::fit_weighted(&rows, weights)?))
            }
            Design::Discrete(_) => {
                let seqs = points
                    .iter()
                    .map(|p| p.as_discrete().map(<[usize]>::to_vec))
                    .collect::<Option<Vec<_>>>()
                    .ok_or_else(|| Error::InvalidDesign("mixed design kinds".into()))?;
                let categories = categories
                    .ok_or_else(|| Error::Parameter("sequence fit needs a category count".into()))?;
                Ok(Density::Categorical(CategoricalSeqDensity::fit_weighted(
                    &seqs, categories, weights,
                )?))
            }
        }
    }

    pub fn sample(&self, n: usize, seed: u64) -> Vec<Design> {
        match self {
            Density::Gaussian(g) => g.sample(n, seed).into_iter().map(Design::Continuous).collect(),
            Density::Categorical(c) => c.sample(n, seed).into_iter().map(Design::Discrete).collect(),
        }
    }

    pub fn log_density(&self, design: &Design) -> Result<f64> {
        match (self, design) {
            (Density::Gaussian(g), Design::Continuous(x)) => g.log_density(x),
            (Density::Categorical(c), Design::Discrete(s)) => c.log_density(s),
            _ => Err(Error::InvalidDesign("design kind does not match density".into())),
        }
    }
}

/// Score-conditioned sampler: a density refit around each query score with
/// Gaussian kernel weights over the dataset's normalized scores.
#[derive(Debug, Clone)]
pub struct ConditionalSampler {
    designs: Vec<Design>,
    scores: Vec<f64>,
    categories: Option<usize>,
    bandwidth: f64,
}

/// Result of one conditional query.
#[derive(Debug, Clone)]
pub struct ConditionalDraw {
    pub designs: Vec<Design>,
    pub density: Density,
    /// All kernel weights underflowed; the nearest rows were used instead.
    pub used_fallback: bool,
}

impl ConditionalSampler {
    /// `designs` are continuous feature vectors (already normalized) or
    /// sequences; `scores` are normalized.
    pub fn fit(designs: Vec<Design>, scores: Vec<f64>, categories: Option<usize>) -> Result<Self> {
        if designs.len() != scores.len() {
            return Err(Error::shape(designs.len(), scores.len()));
        }
        if designs.len() < 2 {
            return Err(Error::InsufficientData("conditional sampler needs 2 rows".into()));
        }
        Ok(ConditionalSampler {
            designs,
            scores,
            categories,
            bandwidth: DEFAULT_BANDWIDTH,
        })
    }

    pub fn with_bandwidth(mut self, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) {
            return Err(Error::Parameter("bandwidth must be positive".into()));
        }
        self.bandwidth = bandwidth;
        Ok(self)
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    /// Kernel weights `exp(-(y_i - y*)² / (2 h²))`.
    pub fn weights(&self, y_star: f64) -> Vec<f64> {
        let two_h2 = 2.0 * self.bandwidth * self.bandwidth;
        self.scores
            .iter()
            .map(|y| (-(y - y_star).powi(2) / two_h2).exp())
            .collect()
    }

    /// The weighted density at `y_star` and whether the fallback was used.
    pub fn density_at(&self, y_star: f64) -> Result<(Density, bool)> {
        let mut weights = self.weights(y_star);
        let mut fallback = false;
        if weights.iter().sum::<f64>() <= 0.0 || weights.iter().any(|w| !w.is_finite()) {
            fallback = true;
            let mut idx: Vec<usize> = (0..self.scores.len()).collect();
            idx.sort_by(|&a, &b| {
                (self.scores[a] - y_star)
                    .abs()
                    .total_cmp(&(self.scores[b] - y_star).abs())
                    .then(a.cmp(&b))
            });
            weights = vec![0.0; self.scores.len()];
            for &i in idx.iter().take(FALLBACK_ROWS) {
                weights[i] = 1.0;
            }
        }
        Ok((Density::fit_weighted(&self.designs, &weights, self.categories)?, fallback))
    }

    pub fn sample_conditional(&self, y_star: f64, n: usize, seed: u64) -> Result<ConditionalDraw> {
        let (density, used_fallback) = self.density_at(y_star)?;
        Ok(ConditionalDraw {
            designs: density.sample(n, seed),
            density,
            used_fallback,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gauss_fit(rows: &[Vec<f64>], w: &[f64]) -> GaussianDensity {
        GaussianDensity::fit_weighted(rows, w).unwrap()
    }

    #[test]
    fn weighted_means() {
        let rows = vec![vec![0.0, 0.0], vec![2.0, 2.0]];
        assert_eq!(gauss_fit(&rows, &[1.0, 1.0]).mean(), &[1.0, 1.0]);
        let g = gauss_fit(&rows, &[1.0, 0.0]);
        assert_eq!(g.mean(), &[0.0, 0.0]);
        assert_eq!(g.covariance().amax(), 0.0);
        assert_eq!(g.ridge(), COVARIANCE_RIDGE);
    }

    #[test]
    fn bad_weights() {
        let rows = vec![vec![0.0], vec![1.0]];
        assert!(GaussianDensity::fit_weighted(&rows, &[0.0, 0.0]).is_err());
        assert!(GaussianDensity::fit_weighted(&rows, &[1.0]).is_err());
        assert!(GaussianDensity::fit_weighted(&rows, &[-1.0, 2.0]).is_err());
    }

    #[test]
    fn categorical_counts_match_independent_tally() {
        let mut r = rng::stream(12, 0);
        let seqs: Vec<Vec<usize>> = (0..40).map(|_| (0..5).map(|_| r.random_range(0..3)).collect()).collect();
        let w: Vec<f64> = (0..40).map(|_| r.random::<f64>()).collect();
        let fit = CategoricalSeqDensity::fit_weighted(&seqs, 3, &w).unwrap();
        let total: f64 = w.iter().sum();
        for p in 0..5 {
            for c in 0..3 {
                let mut q = 0.0;
                for (s, wi) in seqs.iter().zip(&w) {
                    if s[p] == c {
                        q += wi;
                    }
                }
                let expected = CATEGORY_FLOOR + (1.0 - 3.0 * CATEGORY_FLOOR) * q / total;
                assert!((fit.probs()[p][c] - expected).abs() < 1e-12);
            }
            let row = &fit.probs()[p];
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v >= CATEGORY_FLOOR));
        }
    }

    #[test]
    fn degenerate_gaussian_samples_stay_at_the_mean() {
        let rows = vec![vec![0.5, -1.5]; 3];
        let g = gauss_fit(&rows, &[1.0, 1.0, 1.0]);
        for x in g.sample(100, 3) {
            assert!((x[0] - 0.5).abs() < 0.1 && (x[1] + 1.5).abs() < 0.1);
        }
    }

    #[test]
    fn one_hot_rows_sample_deterministically() {
        let d = CategoricalSeqDensity::from_probs(vec![
            vec![0.0, 1.0, 0.0],
            vec![1.0, 0.0, 0.0],
            vec![0.0, 0.0, 1.0],
        ])
        .unwrap();
        assert!(d.sample(50, 1).iter().all(|s| s == &vec![1, 0, 2]));
    }

    #[test]
    fn sample_mean_law_of_large_numbers() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let g = GaussianDensity::new(vec![1.0, -2.0], cov, 0.0).unwrap();
        let n = 10_000;
        let xs = g.sample(n, 5);
        for (j, (mu, var)) in [(1.0, 2.0), (-2.0, 0.5)].iter().enumerate() {
            let m = xs.iter().map(|x| x[j]).sum::<f64>() / n as f64;
            assert!((m - mu).abs() < 4.0 * (var / n as f64).sqrt());
        }
    }

    #[test]
    fn closed_form_log_densities() {
        let g = GaussianDensity::new(vec![0.0], DMatrix::from_element(1, 1, 1.0), 0.0).unwrap();
        assert!((g.log_density(&[0.0]).unwrap() + 0.5 * (2.0 * std::f64::consts::PI).ln()).abs() < 1e-15);
        let u = CategoricalSeqDensity::from_probs(vec![vec![0.25; 4]; 8]).unwrap();
        assert!((u.log_density(&[0, 1, 2, 3, 0, 1, 2, 3]).unwrap() - 8.0 * 0.25f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_log_density_matches_direct_formula() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.5, 0.2, -0.1, 0.2, 0.8, 0.3, -0.1, 0.3, 1.1]);
        let mean = vec![0.3, -0.4, 1.0];
        let g = GaussianDensity::new(mean.clone(), cov.clone(), 0.0).unwrap();
        let inv = cov.clone().try_inverse().unwrap();
        let det = cov.determinant();
        let x = [1.0, 0.5, -0.2];
        let diff = DVector::from_iterator(3, x.iter().zip(&mean).map(|(a, b)| a - b));
        let quad = (diff.transpose() * &inv * &diff)[(0, 0)];
        let direct = -0.5 * quad - 0.5 * (det * (2.0 * std::f64::consts::PI).powi(3)).ln();
        assert!((g.log_density(&x).unwrap() - direct).abs() < 1e-10);
    }

    #[test]
    fn categorical_density_sums_to_one() {
        let mut r = rng::stream(2, 0);
        let seqs: Vec<Vec<usize>> = (0..30).map(|_| (0..6).map(|_| r.random_range(0..4)).collect()).collect();
        let d = CategoricalSeqDensity::fit_weighted(&seqs, 4, &vec![1.0; 30]).unwrap();
        let space = crate::space::DesignSpace::discrete(6, 4).unwrap();
        let total: f64 = space
            .enumerate(1 << 20)
            .unwrap()
            .map(|s| d.log_density(&s).unwrap().exp())
            .sum();
        assert!((total - 1.0).abs() < 1e-8);
    }

    #[test]
    fn weight_scale_invariance() {
        let mut r = rng::stream(8, 0);
        let rows: Vec<Vec<f64>> = (0..20).map(|_| vec![r.random::<f64>(), r.random::<f64>()]).collect();
        let w: Vec<f64> = (0..20).map(|_| r.random::<f64>()).collect();
        let w4: Vec<f64> = w.iter().map(|v| v * 4.0).collect();
        let a = gauss_fit(&rows, &w);
        let b = gauss_fit(&rows, &w4);
        assert_eq!(a.mean(), b.mean());
        assert_eq!(a.covariance(), b.covariance());
        let w3: Vec<f64> = w.iter().map(|v| v * 3.0).collect();
        let c = gauss_fit(&rows, &w3);
        assert!((a.covariance() - c.covariance()).amax() < 1e-12);
    }

    #[test]
    fn refit_recovers_parameters() {
        let cov = DMatrix::from_row_slice(3, 3, &[1.0, 0.3, 0.0, 0.3, 0.7, -0.2, 0.0, -0.2, 0.4]);
        let g = GaussianDensity::new(vec![0.5, 0.0, -1.0], cov.clone(), 0.0).unwrap();
        let xs = g.sample(100_000, 9);
        let refit = GaussianDensity::fit_weighted(&xs, &vec![1.0; xs.len()]).unwrap();
        for (a, b) in refit.mean().iter().zip(g.mean()) {
            assert!((a - b).abs() < 0.05);
        }
        assert!((refit.covariance() - cov).amax() < 0.1);
    }

    #[test]
    fn identical_densities_have_unit_ratio() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, (i * i) as f64 / 10.0]).collect();
        let p = Density::Gaussian(gauss_fit(&rows, &[1.0; 10]));
        for x in p.sample(20, 4) {
            assert!((p.log_density(&x).unwrap() - p.log_density(&x).unwrap()).abs() < 1e-12);
        }
    }

    fn two_clusters() -> ConditionalSampler {
        let mut designs = Vec::new();
        let mut scores = Vec::new();
        let mut r = rng::stream(3, 0);
        for i in 0..60 {
            let (center, y) = if i % 2 == 0 { (-2.0, -1.0) } else { (2.0, 1.0) };
            designs.push(Design::Continuous(vec![center + 0.2 * r.random::<f64>(), center]));
            scores.push(y + 0.05 * r.random::<f64>());
        }
        ConditionalSampler::fit(designs, scores, None).unwrap()
    }

    #[test]
    fn conditional_prefers_the_matching_cluster() {
        let cs = two_clusters();
        let draw = cs.sample_conditional(-1.0, 200, 7).unwrap();
        assert!(!draw.used_fallback);
        let near_a = draw
            .designs
            .iter()
            .filter(|d| {
                let x = d.as_continuous().unwrap();
                let da = (x[0] + 1.9).powi(2) + (x[1] + 2.0).powi(2);
                let db = (x[0] - 2.1).powi(2) + (x[1] - 2.0).powi(2);
                da < db
            })
            .count();
        assert!(near_a as f64 >= 0.9 * 200.0);
    }

    #[test]
    fn infinite_bandwidth_is_unconditional() {
        let cs = two_clusters().with_bandwidth(f64::INFINITY).unwrap();
        let (d, _) = cs.density_at(0.3).unwrap();
        let plain = Density::fit_weighted(&cs.designs, &vec![1.0; 60], None).unwrap();
        let (Density::Gaussian(a), Density::Gaussian(b)) = (d, plain) else { unreachable!() };
        assert_eq!(a.mean(), b.mean());
    }

    #[test]
    fn outlier_concentration_and_fallback() {
        let mut designs: Vec<Design> = (0..20).map(|i| Design::Continuous(vec![i as f64 * 0.01])).collect();
        let mut scores: Vec<f64> = vec![0.0; 20];
        designs.push(Design::Continuous(vec![5.0]));
        scores.push(10.0);
        let cs = ConditionalSampler::fit(designs, scores, None).unwrap();
        let (d, fb) = cs.density_at(10.0).unwrap();
        let Density::Gaussian(g) = d else { unreachable!() };
        assert!(!fb);
        assert!((g.mean()[0] - 5.0).abs() < 0.1);
        let draw = cs.sample_conditional(1e6, 5, 0).unwrap();
        assert!(draw.used_fallback);
        let a = cs.sample_conditional(10.0, 5, 4).unwrap().designs;
        assert_eq!(a, cs.sample_conditional(10.0, 5, 4).unwrap().designs);
    }
}
