use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::par::Execution;

/// Whether a forward pass is allowed to use batch statistics and dropout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    /// Training with dropout, but batch-norm normalizes with its running
    /// statistics and leaves them untouched. For fine-tuning on batches whose
    /// statistics differ from the ones the running estimates came from.
    FrozenStats,
    Inference,
}

/// Fully connected layer computing `x · Wᵀ + b`. Layers that feed a
/// batch-norm are built without a bias, since the mean subtraction cancels it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weights: Matrix,
    pub bias: Option<Vec<f64>>,
    pub grad_weights: Matrix,
    pub grad_bias: Option<Vec<f64>>,
}

impl Dense {
    pub fn zeros(input: usize, output: usize) -> Self {
        Dense {
            weights: Matrix::zeros(output, input),
            bias: Some(vec![0.0; output]),
            grad_weights: Matrix::zeros(output, input),
            grad_bias: Some(vec![0.0; output]),
        }
    }

    pub fn from_parts(weights: Matrix, bias: Option<Vec<f64>>) -> Result<Self> {
        if let Some(b) = &bias {
            if weights.rows() != b.len() {
                return Err(Error::shape(format!(
                    "dense: {} weight rows but {} biases",
                    weights.rows(),
                    b.len()
                )));
            }
        }
        let (o, i) = weights.shape();
        let grad_bias = bias.as_ref().map(|_| vec![0.0; o]);
        Ok(Dense { weights, bias, grad_weights: Matrix::zeros(o, i), grad_bias })
    }

    /// Uniform init in `±sqrt(gain / fan_in)`; gain 6 is He-uniform. Bias
    /// starts at zero.
    pub fn init_uniform(
        input: usize,
        output: usize,
        gain: f64,
        with_bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let limit = (gain / input.max(1) as f64).sqrt();
        let mut d = Dense::zeros(input, output);
        for w in d.weights.as_mut_slice() {
            *w = rng.gen_range(-limit..limit);
        }
        if !with_bias {
            d.bias = None;
            d.grad_bias = None;
        }
        d
    }

    pub fn input_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.rows()
    }

    pub fn num_params(&self) -> usize {
        self.weights.as_slice().len() + self.bias.as_ref().map_or(0, Vec::len)
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.input_dim() {
            return Err(Error::shape(format!(
                "dense forward: input has {} columns, layer expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        let mut out = x.matmul_nt(&self.weights, Execution::default())?;
        if let Some(bias) = &self.bias {
            for r in 0..out.rows() {
                for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                    *o += b;
                }
            }
        }
        Ok(out)
    }

    pub fn input_gradient(&self, upstream: &Matrix) -> Result<Matrix> {
        if upstream.cols() != self.output_dim() {
            return Err(Error::shape(format!(
                "dense backward: upstream has {} columns, layer outputs {}",
                upstream.cols(),
                self.output_dim()
            )));
        }
        upstream.matmul_nn(&self.weights, Execution::default())
    }

    pub fn accumulate_gradients(&mut self, input: &Matrix, upstream: &Matrix) -> Result<()> {
        if upstream.rows() != input.rows() || upstream.cols() != self.output_dim() {
            return Err(Error::shape("dense backward: upstream does not match cached input"));
        }
        let gw = upstream.matmul_tn(input, Execution::default())?;
        self.grad_weights.add_scaled(&gw, 1.0)?;
        if let Some(gb) = &mut self.grad_bias {
            for (g, s) in gb.iter_mut().zip(upstream.column_sums()) {
                *g += s;
            }
        }
        Ok(())
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, input: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        self.accumulate_gradients(input, upstream)?;
        self.input_gradient(upstream)
    }
}

/// Per-feature batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub epsilon: f64,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

/// Values saved by a batch-norm forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct BatchNormCache {
    pub normalized: Matrix,
    pub inv_std: Vec<f64>,
    pub batch_stats: bool,
}

pub const BN_MOMENTUM: f64 = 0.99;
pub const BN_EPSILON: f64 = 1e-5;

impl BatchNorm {
    pub fn new(dim: usize) -> Self {
        BatchNorm {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            grad_gamma: vec![0.0; dim],
            grad_beta: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }

    fn check(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.dim() {
            return Err(Error::shape(format!(
                "batch-norm: input has {} columns, layer has {}",
                x.cols(),
                self.dim()
            )));
        }
        Ok(())
    }

    fn normalize(&self, x: &Matrix, mean: &[f64], inv_std: &[f64]) -> (Matrix, Matrix) {
        let mut xhat = Matrix::zeros(x.rows(), x.cols());
        let mut y = Matrix::zeros(x.rows(), x.cols());
        for r in 0..x.rows() {
            let src = x.row(r);
            let h = xhat.row_mut(r);
            for j in 0..src.len() {
                h[j] = (src[j] - mean[j]) * inv_std[j];
            }
            let yr = y.row_mut(r);
            for j in 0..src.len() {
                yr[j] = self.gamma[j] * h[j] + self.beta[j];
            }
        }
        (y, xhat)
    }

    /// Normalizes with batch statistics and folds them into the running
    /// estimates.
    pub fn forward_train(&mut self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check(x)?;
        let n = x.rows();
        if n < 2 {
            return Err(Error::DegenerateBatch(n));
        }
        let nf = n as f64;
        let mean: Vec<f64> = x.column_sums().into_iter().map(|s| s / nf).collect();
        let mut var = vec![0.0; self.dim()];
        for row in x.iter_rows() {
            for ((v, &xv), &m) in var.iter_mut().zip(row).zip(&mean) {
                let d = xv - m;
                *v += d * d;
            }
        }
        var.iter_mut().for_each(|v| *v /= nf);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.epsilon).sqrt()).collect();
        let (y, normalized) = self.normalize(x, &mean, &inv_std);
        let keep = self.momentum;
        let unbias = nf / (nf - 1.0);
        for j in 0..self.dim() {
            self.running_mean[j] = keep * self.running_mean[j] + (1.0 - keep) * mean[j];
            self.running_var[j] = keep * self.running_var[j] + (1.0 - keep) * var[j] * unbias;
        }
        Ok((y, BatchNormCache { normalized, inv_std, batch_stats: true }))
    }

    /// Normalizes with the running statistics only.
    pub fn forward_inference(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check(x)?;
        let inv_std: Vec<f64> =
            self.running_var.iter().map(|v| 1.0 / (v.max(0.0) + self.epsilon).sqrt()).collect();
        let (y, normalized) = self.normalize(x, &self.running_mean, &inv_std);
        Ok((y, BatchNormCache { normalized, inv_std, batch_stats: false }))
    }

    pub fn input_gradient(&self, cache: &BatchNormCache, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != cache.normalized.shape() {
            return Err(Error::shape("batch-norm backward: upstream does not match cache"));
        }
        let (n, d) = upstream.shape();
        let mut dx = Matrix::zeros(n, d);
        if !cache.batch_stats {
            for r in 0..n {
                let up = upstream.row(r);
                let out = dx.row_mut(r);
                for j in 0..d {
                    out[j] = up[j] * self.gamma[j] * cache.inv_std[j];
                }
            }
            return Ok(dx);
        }
        // dxhat = up * gamma; dx = inv_std / n * (n dxhat - sum(dxhat) - xhat sum(dxhat xhat))
        let mut sum_dxhat = vec![0.0; d];
        let mut sum_dxhat_xhat = vec![0.0; d];
        for r in 0..n {
            let up = upstream.row(r);
            let xh = cache.normalized.row(r);
            for j in 0..d {
                let g = up[j] * self.gamma[j];
                sum_dxhat[j] += g;
                sum_dxhat_xhat[j] += g * xh[j];
            }
        }
        let nf = n as f64;
        for r in 0..n {
            let up = upstream.row(r);
            let xh = cache.normalized.row(r);
            let out = dx.row_mut(r);
            for j in 0..d {
                let g = up[j] * self.gamma[j];
                out[j] = cache.inv_std[j] / nf * (nf * g - sum_dxhat[j] - xh[j] * sum_dxhat_xhat[j]);
            }
        }
        Ok(dx)
    }

    pub fn accumulate_gradients(&mut self, cache: &BatchNormCache, upstream: &Matrix) -> Result<()> {
        if upstream.shape() != cache.normalized.shape() {
            return Err(Error::shape("batch-norm backward: upstream does not match cache"));
        }
        for r in 0..upstream.rows() {
            let up = upstream.row(r);
            let xh = cache.normalized.row(r);
            for j in 0..up.len() {
                self.grad_gamma[j] += up[j] * xh[j];
                self.grad_beta[j] += up[j];
            }
        }
        Ok(())
    }
}

/// Parameter-free elementwise or row-wise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu { slope: f64 },
    Softmax,
}

pub const LEAKY_SLOPE: f64 = 0.01;

pub fn relu(x: f64) -> f64 {
    x.max(0.0)
}

pub fn leaky_relu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    out
}

/// Vector-Jacobian product of row-wise softmax given its output.
pub fn softmax_backward(output: &Matrix, upstream: &Matrix) -> Matrix {
    let mut dx = Matrix::zeros(output.rows(), output.cols());
    for r in 0..output.rows() {
        let y = output.row(r);
        let g = upstream.row(r);
        let dot: f64 = y.iter().zip(g).map(|(a, b)| a * b).sum();
        for (d, (yv, gv)) in dx.row_mut(r).iter_mut().zip(y.iter().zip(g)) {
            *d = yv * (gv - dot);
        }
    }
    dx
}

impl Activation {
    pub fn forward(&self, x: &Matrix) -> Matrix {
        match *self {
            Activation::Relu => x.map(relu),
            Activation::LeakyRelu { slope } => x.map(|v| leaky_relu(v, slope)),
            Activation::Softmax => softmax_rows(x),
        }
    }

    pub fn backward(&self, input: &Matrix, output: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != input.shape() {
            return Err(Error::shape("activation backward: upstream does not match input"));
        }
        let mut dx = upstream.clone();
        match *self {
            Activation::Relu => {
                for (d, &x) in dx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if x <= 0.0 {
                        *d = 0.0;
                    }
                }
            }
            Activation::LeakyRelu { slope } => {
                for (d, &x) in dx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    if x <= 0.0 {
                        *d *= slope;
                    }
                }
            }
            Activation::Softmax => dx = softmax_backward(output, upstream),
        }
        Ok(dx)
    }
}

/// Inverted dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    rng: ChaCha8Rng,
}

impl Dropout {
    pub fn new(rate: f64, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Dropout { rate, rng: ChaCha8Rng::seed_from_u64(seed) })
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    /// Draws a fresh mask; `None` means identity.
    pub fn forward_train(&mut self, x: &Matrix) -> (Matrix, Option<Vec<f64>>) {
        if self.rate == 0.0 {
            return (x.clone(), None);
        }
        let scale = 1.0 / (1.0 - self.rate);
        let mask: Vec<f64> = (0..x.as_slice().len())
            .map(|_| if self.rng.gen::<f64>() < self.rate { 0.0 } else { scale })
            .collect();
        let mut y = x.clone();
        for (v, m) in y.as_mut_slice().iter_mut().zip(&mask) {
            *v *= m;
        }
        (y, Some(mask))
    }

    pub fn backward(mask: Option<&[f64]>, upstream: &Matrix) -> Matrix {
        let mut dx = upstream.clone();
        if let Some(mask) = mask {
            for (d, m) in dx.as_mut_slice().iter_mut().zip(mask) {
                *d *= m;
            }
        }
        dx
    }
}
