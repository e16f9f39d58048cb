use serde::{Deserialize, Serialize};

use super::network::Network;
use crate::error::{Error, LossBreakdown, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl OptimizerConfig {
    pub fn lr(&self) -> f64 {
        match *self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => lr,
        }
    }

    pub fn with_lr(mut self, new_lr: f64) -> Self {
        match &mut self {
            OptimizerConfig::Sgd { lr, .. } | OptimizerConfig::Adam { lr, .. } => *lr = new_lr,
        }
        self
    }
}

/// First-order optimizer with per-tensor state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: usize,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig) -> Self {
        Optimizer { config, first: Vec::new(), second: Vec::new(), steps: 0 }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    /// A non-finite gradient aborts without touching any parameter.
    pub fn step(&mut self, net: &mut Network) -> Result<()> {
        {
            let slots = net.params_mut();
            if slots.iter().any(|s| s.grad.iter().any(|g| !g.is_finite())) {
                return Err(Error::Diverged(LossBreakdown {
                    step: self.steps,
                    fidelity: f64::NAN,
                    mimic: f64::NAN,
                    joint: f64::NAN,
                    alpha: f64::NAN,
                    tap: None,
                }));
            }
            if self.first.is_empty() {
                self.first = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
                self.second = slots.iter().map(|s| vec![0.0; s.value.len()]).collect();
            } else if self.first.len() != slots.len() {
                return Err(Error::shape("optimizer state does not match network"));
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        for (i, slot) in net.params_mut().into_iter().enumerate() {
            let m = &mut self.first[i];
            match self.config {
                OptimizerConfig::Sgd { lr, momentum } => {
                    for ((p, &g), v) in slot.value.iter_mut().zip(slot.grad).zip(m.iter_mut()) {
                        *v = momentum * *v + g;
                        *p -= lr * *v;
                    }
                }
                OptimizerConfig::Adam { lr, beta1, beta2, eps } => {
                    let v = &mut self.second[i];
                    let c1 = 1.0 - beta1.powi(t);
                    let c2 = 1.0 - beta2.powi(t);
                    for (((p, &g), mj), vj) in
                        slot.value.iter_mut().zip(slot.grad).zip(m.iter_mut()).zip(v.iter_mut())
                    {
                        *mj = beta1 * *mj + (1.0 - beta1) * g;
                        *vj = beta2 * *vj + (1.0 - beta2) * g * g;
                        let mhat = *mj / c1;
                        let vhat = *vj / c2;
                        *p -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
        net.zero_grad();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::Dense;
    use crate::nn::matrix::Matrix;
    use crate::nn::network::Layer;

    fn scalar_net(w: f64, g: f64) -> Network {
        let mut d = Dense::from_parts(Matrix::from_rows(&[vec![w]]).unwrap(), Some(vec![0.0])).unwrap();
        d.grad_weights.set(0, 0, g);
        Network::new(vec![Layer::Dense(d)])
    }

    #[test]
    fn sgd_scalar_step() {
        let mut net = scalar_net(1.0, 2.0);
        let mut opt = Optimizer::new(OptimizerConfig::Sgd { lr: 0.1, momentum: 0.0 });
        opt.step(&mut net).unwrap();
        assert!((net.flat_params()[0] - 0.8).abs() < 1e-15);
        assert_eq!(net.flat_grads(), vec![0.0, 0.0]);
    }

    #[test]
    fn zero_gradients_leave_parameters() {
        for cfg in [OptimizerConfig::Sgd { lr: 0.1, momentum: 0.9 }, OptimizerConfig::default()] {
            let mut net = scalar_net(1.5, 0.0);
            let before = net.flat_params();
            Optimizer::new(cfg).step(&mut net).unwrap();
            assert_eq!(net.flat_params(), before);
        }
    }

    #[test]
    fn non_finite_gradient_reports_divergence() {
        let mut net = scalar_net(1.0, f64::NAN);
        let before = net.flat_params();
        let err = Optimizer::new(OptimizerConfig::default()).step(&mut net).unwrap_err();
        assert!(err.is_divergence());
        assert_eq!(net.flat_params(), before);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut net = scalar_net(1.0, 0.5);
        Optimizer::new(OptimizerConfig::Adam { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 })
            .step(&mut net)
            .unwrap();
        assert!((net.flat_params()[0] - 0.99).abs() < 1e-7);
    }
}
