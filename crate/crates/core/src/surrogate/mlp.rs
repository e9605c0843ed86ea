use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Hidden-layer nonlinearity. Only smooth activations are offered since
/// optimizers follow input gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Feedforward regressor `R^d -> R` with a linear output layer.
///
/// Weight matrix `l` is stored `inputs × outputs`, so a batch forward pass is
/// `X · W + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub(crate) layer_sizes: Vec<usize>,
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
    pub(crate) activation: Activation,
}

/// Activations kept from a forward pass for backpropagation.
pub(crate) struct Tape {
    /// `inputs[l]` is the input to layer `l`; `inputs[0]` is the batch itself.
    pub(crate) inputs: Vec<Array2<f64>>,
    pub(crate) output: Array1<f64>,
}

pub(crate) struct ParamGrads {
    pub(crate) weights: Vec<Array2<f64>>,
    pub(crate) biases: Vec<Array1<f64>>,
}

impl MlpModel {
    /// Builds a model from explicit parameters. `layer_sizes` runs from the
    /// input dimension to the final `1`.
    pub fn from_parameters(
        layer_sizes: Vec<usize>,
        weights: Vec<Array2<f64>>,
        biases: Vec<Array1<f64>>,
        activation: Activation,
    ) -> Result<Self> {
        if layer_sizes.len() < 2 || *layer_sizes.last().unwrap() != 1 {
            return Err(Error::Parameter(
                "layer sizes must run from the input dimension to 1".into(),
            ));
        }
        if layer_sizes.contains(&0) {
            return Err(Error::Parameter("layer sizes must be positive".into()));
        }
        let layers = layer_sizes.len() - 1;
        if weights.len() != layers || biases.len() != layers {
            return Err(Error::shape(layers, weights.len().min(biases.len())));
        }
        for l in 0..layers {
            if weights[l].dim() != (layer_sizes[l], layer_sizes[l + 1]) {
                return Err(Error::Parameter(format!("weight {l} has the wrong shape")));
            }
            if biases[l].len() != layer_sizes[l + 1] {
                return Err(Error::Parameter(format!("bias {l} has the wrong length")));
            }
        }
        Ok(MlpModel {
            layer_sizes,
            weights,
            biases,
            activation,
        })
    }

    /// Glorot-uniform weights and zero biases from the seed's init stream.
    pub fn init(input_dim: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input_dim);
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let mut r = rng::stream(seed, rng::streams::INIT);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for pair in sizes.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            weights.push(Array2::from_shape_fn((fan_in, fan_out), |_| {
                r.random_range(-limit..limit)
            }));
            biases.push(Array1::zeros(fan_out));
        }
        Self::from_parameters(sizes, weights, biases, Activation::Tanh)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn weights(&self) -> &[Array2<f64>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Array1<f64>] {
        &self.biases
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.len()));
        }
        Ok(())
    }

    fn check_batch(&self, x: ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::shape(self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.forward(row).output[0])
    }

    /// Exact gradient of [`predict`](Self::predict) with respect to `x`.
    pub fn input_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let row = ArrayView2::from_shape((1, x.len()), x).expect("row view");
        Ok(self.value_and_input_gradient_batch(row)?.1.row(0).to_vec())
    }

    pub fn predict_batch(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        self.check_batch(x)?;
        Ok(self.forward(x).output)
    }

    /// Predictions and input gradients for every row of `x`.
    pub fn value_and_input_gradient_batch(
        &self,
        x: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        self.check_batch(x)?;
        let tape = self.forward(x);
        let seed = Array1::ones(x.nrows());
        let grad = self.backward_input(&tape, &seed);
        Ok((tape.output, grad))
    }

    pub(crate) fn forward(&self, x: ArrayView2<f64>) -> Tape {
        let layers = self.weights.len();
        let mut inputs = Vec::with_capacity(layers);
        let mut current = x.to_owned();
        for l in 0..layers {
            let mut z = current.dot(&self.weights[l]);
            z += &self.biases[l];
            inputs.push(current);
            if l + 1 < layers {
                match self.activation {
                    Activation::Tanh => match z.as_slice_mut() {
                        Some(v) => tanh_in_place(v),
                        None => z.mapv_inplace(tanh),
                    },
                }
            }
            current = z;
        }
        Tape {
            inputs,
            output: current.column(0).to_owned(),
        }
    }

    /// Backpropagates `d_out` (one entry per row) to pre-activation deltas of
    /// every layer, deepest first.
    fn deltas(&self, tape: &Tape, d_out: &Array1<f64>) -> Vec<Array2<f64>> {
        let layers = self.weights.len();
        let mut deltas = Vec::with_capacity(layers);
        let mut delta = d_out.clone().insert_axis(Axis(1));
        for l in (0..layers).rev() {
            let next = if l > 0 {
                let mut d = delta.dot(&self.weights[l].t());
                // tape.inputs[l] holds tanh(z_{l-1}).
                match self.activation {
                    Activation::Tanh => {
                        d.zip_mut_with(&tape.inputs[l], |g, &a| *g *= 1.0 - a * a)
                    }
                }
                Some(d)
            } else {
                None
            };
            deltas.push(delta);
            match next {
                Some(d) => delta = d,
                None => break,
            }
        }
        deltas
    }

    pub(crate) fn backward_input(&self, tape: &Tape, d_out: &Array1<f64>) -> Array2<f64> {
        let deltas = self.deltas(tape, d_out);
        let first = deltas.last().expect("at least one layer");
        first.dot(&self.weights[0].t())
    }

    pub(crate) fn backward_params(&self, tape: &Tape, d_out: &Array1<f64>) -> ParamGrads {
        let deltas = self.deltas(tape, d_out);
        let layers = self.weights.len();
        let mut weights = Vec::with_capacity(layers);
        let mut biases = Vec::with_capacity(layers);
        for l in 0..layers {
            let delta = &deltas[layers - 1 - l];
            weights.push(tape.inputs[l].t().dot(delta));
            biases.push(delta.sum_axis(Axis(0)));
        }
        ParamGrads { weights, biases }
    }
}

const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// `1/k!` for `k = 12..=2`, Horner order.
const EXP_COEFFS: [f64; 11] = [
    1.0 / 479_001_600.0,
    1.0 / 39_916_800.0,
    1.0 / 3_628_800.0,
    1.0 / 362_880.0,
    1.0 / 40_320.0,
    1.0 / 5_040.0,
    1.0 / 720.0,
    1.0 / 120.0,
    1.0 / 24.0,
    1.0 / 6.0,
    0.5,
];

/// Branch-free hyperbolic tangent, within a few ulps of `f64::tanh`.
///
/// Evaluates `expm1(-2|x|)` by range reduction and a Taylor polynomial so the
/// loop in [`tanh_in_place`] vectorizes.
#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    let y = -2.0 * x.abs().min(20.0);
    let k = y * std::f64::consts::LOG2_E + ROUND_MAGIC;
    let n = k - ROUND_MAGIC;
    let r = (y - n * LN2_HI) - n * LN2_LO;
    let mut p = EXP_COEFFS[0];
    for c in &EXP_COEFFS[1..] {
        p = p * r + c;
    }
    let q = r * (p * r + 1.0);
    // 2^n from the integer sitting in the low mantissa bits of `k`.
    let scale = f64::from_bits(k.to_bits().wrapping_add(1023) << 52);
    let em1 = scale * q + (scale - 1.0);
    (-em1 / (2.0 + em1)).copysign(x)
}

fn tanh_slice(v: &mut [f64]) {
    for a in v {
        *a = tanh(*a);
    }
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_slice_avx2(v: &mut [f64]) {
    tanh_slice(v)
}

pub(crate) fn tanh_in_place(v: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        return unsafe { tanh_slice_avx2(v) };
    }
    tanh_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    /// Straight-line re-evaluation, one neuron at a time.
    fn reference_predict(m: &MlpModel, x: &[f64]) -> f64 {
        let mut a = x.to_vec();
        let layers = m.weights.len();
        for l in 0..layers {
            let w = &m.weights[l];
            let mut z = vec![0.0; w.ncols()];
            for (j, zj) in z.iter_mut().enumerate() {
                let mut s = m.biases[l][j];
                for (i, ai) in a.iter().enumerate() {
                    s += ai * w[[i, j]];
                }
                *zj = if l + 1 < layers { s.tanh() } else { s };
            }
            a = z;
        }
        a[0]
    }

    #[test]
    fn tanh_matches_std() {
        let mut worst: f64 = 0.0;
        for i in 0..400_000 {
            let x = i as f64 * 1e-4 - 20.0 + 3e-9;
            let (a, b) = (tanh(x), x.tanh());
            worst = worst.max(((a - b) / b).abs());
        }
        assert!(worst < 1e-14, "{worst}");
        assert_eq!(tanh(0.0), 0.0);
        assert_eq!(tanh(1e300), 1.0);
        assert_eq!(tanh(-40.0), -1.0);
        assert!(((tanh(1e-9) - 1e-9) / 1e-9).abs() < 1e-15);
        let mut v: Vec<f64> = (0..37).map(|i| i as f64 * 0.3 - 5.0).collect();
        let expected: Vec<f64> = v.iter().map(|&x| tanh(x)).collect();
        tanh_in_place(&mut v);
        assert_eq!(v, expected);
    }

    #[test]
    fn bias_only_model() {
        let m = MlpModel::from_parameters(
            vec![3, 1],
            vec![Array2::zeros((3, 1))],
            vec![array![2.5]],
            Activation::Tanh,
        )
        .unwrap();
        assert_eq!(m.predict(&[1.0, -4.0, 9.0]).unwrap(), 2.5);
        assert_eq!(m.input_gradient(&[1.0, -4.0, 9.0]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn linear_model() {
        let m = MlpModel::from_parameters(
            vec![1, 1],
            vec![array![[2.0]]],
            vec![array![1.0]],
            Activation::Tanh,
        )
        .unwrap();
        assert_eq!(m.predict(&[3.0]).unwrap(), 7.0);
        assert_eq!(m.input_gradient(&[-11.0]).unwrap(), vec![2.0]);
        assert!(matches!(m.predict(&[1.0, 2.0]), Err(Error::Shape { .. })));
        assert!(matches!(m.input_gradient(&[]), Err(Error::Shape { .. })));
    }

    #[test]
    fn matches_reference_evaluation() {
        let mut r = rng::stream(1, 0);
        for seed in 0..20 {
            let m = MlpModel::init(5, &[7, 4], seed).unwrap();
            let x: Vec<f64> = (0..5).map(|_| r.random_range(-2.0..2.0)).collect();
            assert!((m.predict(&x).unwrap() - reference_predict(&m, &x)).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_agrees_with_single() {
        let m = MlpModel::init(3, &[8], 4).unwrap();
        let x = array![[0.1, 0.2, 0.3], [-1.0, 0.5, 2.0]];
        let (v, g) = m.value_and_input_gradient_batch(x.view()).unwrap();
        for i in 0..2 {
            let row = x.row(i).to_vec();
            assert_eq!(v[i], m.predict(&row).unwrap());
            assert_eq!(g.row(i).to_vec(), m.input_gradient(&row).unwrap());
        }
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(MlpModel::from_parameters(vec![2, 2], vec![Array2::zeros((2, 2))], vec![Array1::zeros(2)], Activation::Tanh).is_err());
        assert!(MlpModel::from_parameters(vec![2, 1], vec![Array2::zeros((3, 1))], vec![Array1::zeros(1)], Activation::Tanh).is_err());
    }
}
