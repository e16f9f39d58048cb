//! Central finite-difference verification of analytic gradients.
//!
//! Relative error between an analytic value `a` and a numeric estimate `n` is
//! `|a - n| / max(|a|, |n|, 1e-12)`, so two exact zeros agree with error 0.

use super::layers::Mode;
use super::loss::LossValue;
use super::matrix::Matrix;
use super::network::Network;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;
pub const DENOMINATOR_FLOOR: f64 = 1e-12;
pub const TOLERANCE: f64 = 1e-4;

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(DENOMINATOR_FLOOR);
    (analytic - numeric).abs() / denom
}

/// Largest relative error over paired entries.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| relative_error(a, n))
        .fold(0.0, f64::max)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / 2h` for every `i`.
pub fn central_difference<F>(mut f: F, x: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe)?;
        probe[i] = orig - h;
        let down = f(&probe)?;
        probe[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Analytic gradients of a scalar loss with respect to every parameter and
/// the input.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_param_error: f64,
    pub max_input_error: f64,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

fn loss_at(
    net: &Network,
    input: &Matrix,
    mode: Mode,
    loss: &dyn Fn(&Matrix) -> Result<LossValue>,
) -> Result<f64> {
    // a fresh clone per evaluation replays identical dropout masks
    let mut probe = net.clone();
    let (out, _) = probe.forward(input, mode)?;
    Ok(loss(&out)?.value)
}

pub fn analytic_gradients(
    net: &Network,
    input: &Matrix,
    mode: Mode,
    loss: &dyn Fn(&Matrix) -> Result<LossValue>,
) -> Result<Gradients> {
    let mut work = net.clone();
    work.zero_grad();
    let (out, tape) = work.forward(input, mode)?;
    let l = loss(&out)?;
    let input_grad = work.backward(&tape, &l.grad)?;
    Ok(Gradients { params: work.flat_grads(), input: input_grad })
}

/// Compares the supplied analytic gradients against central differences.
pub fn check_against(
    net: &Network,
    input: &Matrix,
    mode: Mode,
    loss: &dyn Fn(&Matrix) -> Result<LossValue>,
    analytic: &Gradients,
) -> Result<GradCheckReport> {
    let n_params = net.num_params();
    let mut numeric_params = Vec::with_capacity(n_params);
    for i in 0..n_params {
        let mut plus = net.clone();
        plus.nudge_param(i, FD_STEP)?;
        let mut minus = net.clone();
        minus.nudge_param(i, -FD_STEP)?;
        let up = loss_at(&plus, input, mode, loss)?;
        let down = loss_at(&minus, input, mode, loss)?;
        numeric_params.push((up - down) / (2.0 * FD_STEP));
    }
    let (rows, cols) = input.shape();
    let numeric_input = central_difference(
        |x| loss_at(net, &Matrix::from_vec(rows, cols, x.to_vec())?, mode, loss),
        input.as_slice(),
        FD_STEP,
    )?;
    let max_param_error = max_relative_error(&analytic.params, &numeric_params);
    let max_input_error = max_relative_error(analytic.input.as_slice(), &numeric_input);
    Ok(GradCheckReport {
        max_rel_error: max_param_error.max(max_input_error),
        max_param_error,
        max_input_error,
        checked: n_params + numeric_input.len(),
    })
}

/// Full check of a network's backward pass under `loss`.
pub fn gradient_check(
    net: &Network,
    input: &Matrix,
    mode: Mode,
    loss: &dyn Fn(&Matrix) -> Result<LossValue>,
) -> Result<GradCheckReport> {
    let analytic = analytic_gradients(net, input, mode, loss)?;
    check_against(net, input, mode, loss, &analytic)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::{Activation, Dense};
    use crate::nn::loss::mse_loss;
    use crate::nn::network::Layer;

    #[test]
    fn zero_network_has_zero_error() {
        let net = Network::new(vec![
            Layer::Dense(Dense::zeros(3, 4)),
            Layer::Activation(Activation::Relu),
            Layer::Dense(Dense::zeros(4, 2)),
        ]);
        let target = Matrix::zeros(2, 2);
        let loss = move |p: &Matrix| mse_loss(p, &target);
        let r = gradient_check(&net, &Matrix::zeros(2, 3), Mode::Train, &loss).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn central_difference_of_cubic() {
        let g = central_difference(|x| Ok(x[0].powi(3) + 2.0 * x[1]), &[2.0, 5.0], FD_STEP).unwrap();
        assert!(relative_error(g[0], 12.0) < 1e-8);
        assert!(relative_error(g[1], 2.0) < 1e-8);
    }

    #[test]
    fn relative_error_convention() {
        assert_eq!(relative_error(0.0, 0.0), 0.0);
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(1.0, 2.0) - 0.5).abs() < 1e-15);
    }
}
