use nalgebra::{Cholesky, DMatrix, DVector};
use ndarray::Array2;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::problem::Problem;
use super::{parse, require, BestSeen, Proposal};
use crate::error::{Error, Result};
use crate::rng;
use crate::space::DesignSpace;
use crate::surrogate::MlpModel;

/// Observation noise variance of the process, in whitened label units.
pub const GP_NOISE: f64 = 1e-4;
const MAX_JITTER: f64 = 1e-2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoQeiConfig {
    /// Highest-scoring training rows, labelled by the surrogate, that seed the process.
    pub gp_samples: usize,
    pub rounds: usize,
    /// Designs chosen per round.
    pub batch: usize,
    /// Joint posterior draws per expected-improvement estimate.
    pub mc_samples: usize,
    /// Perturbed incumbents considered per round.
    pub pool: usize,
    /// Perturbation scale in whitened units.
    pub perturb_std: f64,
}

impl BoQeiConfig {
    /// Relaxed sequences need larger moves than continuous designs before the
    /// decoded argmax changes.
    pub fn for_space(space: &DesignSpace) -> Self {
        BoQeiConfig {
            gp_samples: 256,
            rounds: 8,
            batch: 16,
            mc_samples: 64,
            pool: 1024,
            perturb_std: if space.is_discrete() { 1.0 } else { 0.1 },
        }
    }

    pub(crate) fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "gp_samples" => self.gp_samples = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "batch" => self.batch = parse(key, value)?,
            "mc_samples" => self.mc_samples = parse(key, value)?,
            "pool" => self.pool = parse(key, value)?,
            "perturb_std" => self.perturb_std = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        require(self.gp_samples >= 2, "gp_samples must be at least 2")?;
        require(self.batch >= 1 && self.mc_samples >= 1, "batch and mc_samples must be positive")?;
        require(self.pool >= self.batch, "pool must hold at least one batch")?;
        require(self.perturb_std >= 0.0, "perturb_std must be nonnegative")
    }
}

/// Gaussian-process regressor with a squared-exponential kernel and a
/// constant prior mean.
#[derive(Debug, Clone)]
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    y: Vec<f64>,
    mean: f64,
    signal_var: f64,
    length_scale: f64,
    noise: f64,
    jitter: f64,
    chol: Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
}

impl GaussianProcess {
    /// Prior mean and signal variance are the label mean and variance.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, length_scale: f64, noise: f64) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::shape(x.len(), y.len()));
        }
        if !(length_scale > 0.0) || !(noise >= 0.0) {
            return Err(Error::Parameter("length scale must be positive, noise nonnegative".into()));
        }
        let n = y.len() as f64;
        let mean = y.iter().sum::<f64>() / n;
        let signal_var = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(1e-12);
        let mut gp = GaussianProcess {
            x,
            y,
            mean,
            signal_var,
            length_scale,
            noise,
            jitter: 0.0,
            chol: Cholesky::new(DMatrix::identity(1, 1)).expect("identity"),
            alpha: DVector::zeros(0),
        };
        gp.factorize()?;
        Ok(gp)
    }

    fn factorize(&mut self) -> Result<()> {
        let n = self.x.len();
        let k = DMatrix::from_fn(n, n, |i, j| self.kernel(&self.x[i], &self.x[j]));
        let mut jitter = 0.0;
        loop {
            let mut m = k.clone();
            for i in 0..n {
                m[(i, i)] += self.noise + jitter;
            }
            if let Some(c) = Cholesky::new(m) {
                let resid = DVector::from_iterator(n, self.y.iter().map(|v| v - self.mean));
                self.alpha = c.solve(&resid);
                self.chol = c;
                self.jitter = jitter;
                return Ok(());
            }
            jitter = if jitter == 0.0 { 1e-8 * self.signal_var } else { jitter * 10.0 };
            if jitter > MAX_JITTER * self.signal_var.max(1.0) {
                return Err(Error::Numerical("GP kernel matrix is not positive definite".into()));
            }
        }
    }

    pub fn kernel(&self, a: &[f64], b: &[f64]) -> f64 {
        let d2: f64 = a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum();
        self.signal_var * (-d2 / (2.0 * self.length_scale * self.length_scale)).exp()
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Adds observations and refactorizes.
    pub fn condition(&mut self, x: Vec<Vec<f64>>, y: Vec<f64>) -> Result<()> {
        self.x.extend(x);
        self.y.extend(y);
        self.factorize()
    }

    /// `L⁻¹ k(X, q)` for each query as columns.
    fn whitened_cross(&self, queries: &[Vec<f64>]) -> DMatrix<f64> {
        let cross = DMatrix::from_fn(self.x.len(), queries.len(), |i, j| self.kernel(&self.x[i], &queries[j]));
        self.chol
            .l_dirty()
            .solve_lower_triangular(&cross)
            .expect("Cholesky factor has a positive diagonal")
    }

    pub fn posterior_mean(&self, queries: &[Vec<f64>]) -> Vec<f64> {
        queries
            .iter()
            .map(|q| {
                self.mean
                    + self
                        .x
                        .iter()
                        .zip(self.alpha.iter())
                        .map(|(xi, a)| a * self.kernel(xi, q))
                        .sum::<f64>()
            })
            .collect()
    }

    /// Joint posterior mean and covariance of the latent function.
    pub fn posterior(&self, queries: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
        let v = self.whitened_cross(queries);
        let q = queries.len();
        let cov = DMatrix::from_fn(q, q, |i, j| self.kernel(&queries[i], &queries[j])) - v.transpose() * &v;
        (self.posterior_mean(queries), (&cov + cov.transpose()) * 0.5)
    }
}

/// Lower Cholesky factor of a positive semidefinite matrix. Pivots at or below
/// a relative tolerance zero their column, so singular directions contribute
/// nothing.
pub fn psd_cholesky(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let scale = (0..n).map(|i| a[(i, i)].abs()).fold(0.0, f64::max);
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    let mut l = DMatrix::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            continue;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    l
}

/// Monte-Carlo q-expected improvement `E[max(max_j f_j - best, 0)]` with
/// `f = mean + L z` for each row `z` of `base`.
pub fn q_expected_improvement(mean: &[f64], cov: &DMatrix<f64>, best: f64, base: &DMatrix<f64>) -> f64 {
    let l = psd_cholesky(cov);
    let q = mean.len();
    let mut total = 0.0;
    for z in base.row_iter() {
        let mut top = f64::NEG_INFINITY;
        for i in 0..q {
            let mut f = mean[i];
            for k in 0..=i {
                f += l[(i, k)] * z[k];
            }
            top = top.max(f);
        }
        total += (top - best).max(0.0);
    }
    total / base.nrows() as f64
}

fn median_pairwise_distance(x: &[Vec<f64>]) -> f64 {
    let mut d = Vec::with_capacity(x.len() * (x.len() - 1) / 2);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            d.push(x[i].iter().zip(&x[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d[(d.len() - 1) / 2];
    if m > 0.0 {
        m
    } else {
        1.0
    }
}

fn label(model: &MlpModel, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let x = Array2::from_shape_vec((rows.len(), model.input_dim()), flat).expect("rows of input width");
    Ok(model.predict_batch(x.view())?.to_vec())
}

/// Greedy batch maximization of qEI over `pool`, with one set of base samples.
fn select_batch(gp: &GaussianProcess, pool: &[Vec<f64>], q: usize, best: f64, base: &DMatrix<f64>) -> Vec<usize> {
    let mean = gp.posterior_mean(pool);
    let v = gp.whitened_cross(pool);
    let var: Vec<f64> = (0..pool.len())
        .map(|c| gp.signal_var - v.column(c).norm_squared())
        .collect();
    let mc = base.nrows();
    let mut chosen: Vec<usize> = Vec::with_capacity(q);
    // Rows of the batch factor and the posterior covariance of each chosen
    // point with the whole pool.
    let mut l_rows: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut cross: Vec<Vec<f64>> = Vec::with_capacity(q);
    let mut top = vec![f64::NEG_INFINITY; mc];
    let mut taken = vec![false; pool.len()];
    for j in 0..q.min(pool.len()) {
        let mut best_c = None;
        let mut best_val = f64::NEG_INFINITY;
        let mut best_row = Vec::new();
        for c in 0..pool.len() {
            if taken[c] {
                continue;
            }
            let mut l = vec![0.0; j + 1];
            let mut sq = 0.0;
            for s in 0..j {
                let mut acc = cross[s][c];
                for t in 0..s {
                    acc -= l_rows[s][t] * l[t];
                }
                let piv = l_rows[s][s];
                l[s] = if piv > 0.0 { acc / piv } else { 0.0 };
                sq += l[s] * l[s];
            }
            l[j] = (var[c] - sq).max(0.0).sqrt();
            let mut total = 0.0;
            for (m, z) in base.row_iter().enumerate() {
                let mut f = mean[c];
                for t in 0..=j {
                    f += l[t] * z[t];
                }
                total += (top[m].max(f) - best).max(0.0);
            }
            let val = total / mc as f64;
            if val > best_val {
                best_val = val;
                best_c = Some(c);
                best_row = l;
            }
        }
        let Some(c) = best_c else { break };
        taken[c] = true;
        for (m, z) in base.row_iter().enumerate() {
            let f = mean[c] + best_row.iter().zip(z.iter()).map(|(a, b)| a * b).sum::<f64>();
            top[m] = top[m].max(f);
        }
        let vc = v.column(c);
        cross.push(
            (0..pool.len())
                .map(|o| gp.kernel(&pool[c], &pool[o]) - vc.dot(&v.column(o)))
                .collect(),
        );
        l_rows.push(best_row);
        chosen.push(c);
    }
    chosen
}

pub(crate) fn propose(problem: &Problem, cfg: &BoQeiConfig, k: usize, seed: u64) -> Result<Proposal> {
    let model = problem.fit_ensemble(1, seed)?.models.swap_remove(0);
    let rows = problem.dataset.top_k(cfg.gp_samples.min(problem.dataset.len()));
    let xs: Vec<Vec<f64>> = rows.iter().map(|&i| problem.x.row(i).to_vec()).collect();
    let ys = label(&model, &xs)?;
    let length_scale = median_pairwise_distance(&xs);
    let mut seen = BestSeen::default();
    for (&i, y) in rows.iter().zip(&ys) {
        seen.push(problem.raw_score(*y), problem.dataset.designs()[i].clone());
    }
    let mut labelled: Vec<(Vec<f64>, f64)> = xs.iter().cloned().zip(ys.iter().copied()).collect();
    let mut gp = GaussianProcess::fit(xs, ys, length_scale, GP_NOISE)?;
    let mut r = rng::stream(seed, rng::streams::PROPOSAL);
    let mut mc = rng::stream(seed, rng::streams::MC);
    for _ in 0..cfg.rounds {
        let mut order: Vec<usize> = (0..labelled.len()).collect();
        order.sort_by(|&a, &b| labelled[b].1.total_cmp(&labelled[a].1).then(a.cmp(&b)));
        let incumbents: Vec<&Vec<f64>> = order.iter().take(cfg.batch).map(|&i| &labelled[i].0).collect();
        let best = labelled[order[0]].1;
        let pool: Vec<Vec<f64>> = (0..cfg.pool)
            .map(|i| {
                incumbents[i % incumbents.len()]
                    .iter()
                    .map(|v| v + cfg.perturb_std * { let z: f64 = StandardNormal.sample(&mut r); z })
                    .collect()
            })
            .collect();
        let base = DMatrix::from_fn(cfg.mc_samples, cfg.batch, |_, _| StandardNormal.sample(&mut mc));
        let picked: Vec<Vec<f64>> = select_batch(&gp, &pool, cfg.batch, best, &base)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();
        let labels = label(&model, &picked)?;
        for (x, y) in picked.iter().zip(&labels) {
            seen.push(problem.raw_score(*y), problem.decode(x)?);
            labelled.push((x.clone(), *y));
        }
        gp.condition(picked, labels)?;
    }
    let (designs, scores) = seen.best(k);
    Ok(Proposal {
        designs,
        scores,
        notes: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_gp() -> GaussianProcess {
        let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.3, (i as f64).sin()]).collect();
        let y: Vec<f64> = x.iter().map(|p| p[0].cos() + 0.5 * p[1]).collect();
        GaussianProcess::fit(x, y, 0.8, GP_NOISE).unwrap()
    }

    #[test]
    fn interpolates_training_labels() {
        let gp = toy_gp();
        let m = gp.posterior_mean(&gp.x.clone());
        for (a, b) in m.iter().zip(&gp.y) {
            assert!((a - b).abs() <= 10.0 * GP_NOISE);
        }
        let (_, cov) = gp.posterior(&gp.x[..3]);
        assert!(cov.diagonal().iter().all(|v| *v < 10.0 * GP_NOISE));
    }

    #[test]
    fn duplicate_incumbent_has_no_improvement() {
        let cov = DMatrix::zeros(3, 3);
        let mut r = rng::stream(0, 0);
        let base = DMatrix::from_fn(64, 3, |_, _| StandardNormal.sample(&mut r));
        assert_eq!(q_expected_improvement(&[1.5, 1.5, 1.5], &cov, 1.5, &base), 0.0);
    }

    #[test]
    fn qei_matches_the_closed_form_for_one_point() {
        let mut r = rng::stream(4, 0);
        let base = DMatrix::from_fn(200_000, 1, |_, _| StandardNormal.sample(&mut r));
        let (mu, s, best) = (0.3, 0.8f64, 0.5);
        let est = q_expected_improvement(&[mu], &DMatrix::from_element(1, 1, s * s), best, &base);
        let z = (mu - best) / s;
        let pdf = (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let cdf = 0.5 * statrs::function::erf::erfc(-z / std::f64::consts::SQRT_2);
        let exact = (mu - best) * cdf + s * pdf;
        assert!((est - exact).abs() < 5e-3);
    }

    #[test]
    fn psd_factor_reconstructs_rank_deficient_matrices() {
        let u = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 1.0, 0.0, 0.5, 2.0]);
        let a = &u * u.transpose();
        let l = psd_cholesky(&a);
        assert!((&l * l.transpose() - a).amax() < 1e-12);
    }

    #[test]
    fn greedy_selection_avoids_duplicates() {
        let gp = toy_gp();
        let pool: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.1, 0.2]).collect();
        let mut r = rng::stream(1, 0);
        let base = DMatrix::from_fn(32, 4, |_, _| StandardNormal.sample(&mut r));
        let best = gp.y.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let picked = select_batch(&gp, &pool, 4, best, &base);
        assert_eq!(picked.len(), 4);
        let mut sorted = picked.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 4);
    }

    #[test]
    fn median_distance() {
        let x = vec![vec![0.0], vec![1.0], vec![3.0]];
        assert_eq!(median_pairwise_distance(&x), 2.0);
        assert_eq!(median_pairwise_distance(&[vec![1.0], vec![1.0]]), 1.0);
    }
}
