use super::layers::{Activation, BatchNorm, BatchNormCache, Dense, Dropout, Mode};
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum Layer {
    Dense(Dense),
    BatchNorm(BatchNorm),
    Activation(Activation),
    Dropout(Dropout),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Dense(_) => "dense",
            Layer::BatchNorm(_) => "batch_norm",
            Layer::Activation(Activation::Relu) => "relu",
            Layer::Activation(Activation::LeakyRelu { .. }) => "leaky_relu",
            Layer::Activation(Activation::Softmax) => "softmax",
            Layer::Dropout(_) => "dropout",
        }
    }
}

#[derive(Debug, Clone)]
enum Cache {
    Dense { input: Matrix },
    BatchNorm(BatchNormCache),
    Activation { input: Matrix, output: Matrix },
    Dropout { mask: Option<Vec<f64>> },
}

/// Per-layer values recorded by a forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    caches: Vec<Cache>,
}

/// One learnable tensor and its accumulated gradient.
pub struct ParamSlot<'a> {
    pub name: String,
    pub value: &'a mut [f64],
    pub grad: &'a [f64],
}

/// Ordered stack of layers.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Network {
    layers: Vec<Layer>,
}

impl Network {
    pub fn new(layers: Vec<Layer>) -> Self {
        Network { layers }
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn push(&mut self, layer: Layer) {
        self.layers.push(layer);
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.layers.iter().find_map(|l| match l {
            Layer::Dense(d) => Some(d.input_dim()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    pub fn output_dim(&self) -> Option<usize> {
        self.layers.iter().rev().find_map(|l| match l {
            Layer::Dense(d) => Some(d.output_dim()),
            Layer::BatchNorm(b) => Some(b.dim()),
            _ => None,
        })
    }

    /// Shapes of the dense layers as `(in, out)`.
    pub fn dense_shapes(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .filter_map(|l| match l {
                Layer::Dense(d) => Some((d.input_dim(), d.output_dim())),
                _ => None,
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Dense(d) => d.num_params(),
                Layer::BatchNorm(b) => 2 * b.dim(),
                _ => 0,
            })
            .sum()
    }

    /// Restarts every dropout generator from a seed derived from `seed` and
    /// the layer position.
    pub fn reseed_dropout(&mut self, seed: u64) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            if let Layer::Dropout(d) = l {
                d.reseed(seed ^ (0x9e37_79b9_7f4a_7c15u64.wrapping_mul(i as u64 + 1)));
            }
        }
    }

    /// Forward pass recording a tape. Train mode updates batch-norm running
    /// statistics; train and frozen-stats modes advance dropout generators.
    pub fn forward(&mut self, input: &Matrix, mode: Mode) -> Result<(Matrix, Tape)> {
        if mode == Mode::Inference {
            return self.forward_inference(input);
        }
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &mut self.layers {
            let (y, cache) = match layer {
                Layer::Dense(d) => (d.forward(&x)?, Cache::Dense { input: x }),
                Layer::BatchNorm(b) => {
                    let (y, c) = if mode == Mode::FrozenStats { b.forward_inference(&x)? } else { b.forward_train(&x)? };
                    (y, Cache::BatchNorm(c))
                }
                Layer::Activation(a) => {
                    let y = a.forward(&x);
                    (y.clone(), Cache::Activation { input: x, output: y })
                }
                Layer::Dropout(d) => {
                    let (y, mask) = d.forward_train(&x);
                    (y, Cache::Dropout { mask })
                }
            };
            caches.push(cache);
            x = y;
        }
        Ok((x, Tape { caches }))
    }

    /// Inference-mode forward pass that still records a tape, so gradients can
    /// flow back to the input. Never mutates the network.
    pub fn forward_inference(&self, input: &Matrix) -> Result<(Matrix, Tape)> {
        let mut x = input.clone();
        let mut caches = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, cache) = match layer {
                Layer::Dense(d) => (d.forward(&x)?, Cache::Dense { input: x }),
                Layer::BatchNorm(b) => {
                    let (y, c) = b.forward_inference(&x)?;
                    (y, Cache::BatchNorm(c))
                }
                Layer::Activation(a) => {
                    let y = a.forward(&x);
                    (y.clone(), Cache::Activation { input: x, output: y })
                }
                Layer::Dropout(_) => (x, Cache::Dropout { mask: None }),
            };
            caches.push(cache);
            x = y;
        }
        Ok((x, Tape { caches }))
    }

    /// Inference without recording anything.
    pub fn predict(&self, input: &Matrix) -> Result<Matrix> {
        let mut x = input.clone();
        for layer in &self.layers {
            x = match layer {
                Layer::Dense(d) => d.forward(&x)?,
                Layer::BatchNorm(b) => b.forward_inference(&x)?.0,
                Layer::Activation(a) => a.forward(&x),
                Layer::Dropout(_) => x,
            };
        }
        Ok(x)
    }

    fn check_tape(&self, tape: &Tape) -> Result<()> {
        if tape.caches.len() != self.layers.len() {
            return Err(Error::shape("tape was recorded by a different network"));
        }
        Ok(())
    }

    fn layer_input_gradient(layer: &Layer, cache: &Cache, up: &Matrix) -> Result<Matrix> {
        match (layer, cache) {
            (Layer::Dense(d), Cache::Dense { .. }) => d.input_gradient(up),
            (Layer::BatchNorm(b), Cache::BatchNorm(c)) => b.input_gradient(c, up),
            (Layer::Activation(a), Cache::Activation { input, output }) => {
                a.backward(input, output, up)
            }
            (Layer::Dropout(_), Cache::Dropout { mask }) => {
                Ok(Dropout::backward(mask.as_deref(), up))
            }
            _ => Err(Error::shape("tape does not match layer kinds")),
        }
    }

    /// Backpropagates `upstream`, accumulating parameter gradients, and
    /// returns the gradient with respect to the network input.
    pub fn backward(&mut self, tape: &Tape, upstream: &Matrix) -> Result<Matrix> {
        self.check_tape(tape)?;
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter_mut().zip(&tape.caches).rev() {
            match (&mut *layer, cache) {
                (Layer::Dense(d), Cache::Dense { input }) => d.accumulate_gradients(input, &g)?,
                (Layer::BatchNorm(b), Cache::BatchNorm(c)) => b.accumulate_gradients(c, &g)?,
                _ => {}
            }
            g = Self::layer_input_gradient(layer, cache, &g)?;
        }
        Ok(g)
    }

    /// Gradient with respect to the input only; parameter gradients are left
    /// untouched.
    pub fn input_gradient(&self, tape: &Tape, upstream: &Matrix) -> Result<Matrix> {
        self.check_tape(tape)?;
        let mut g = upstream.clone();
        for (layer, cache) in self.layers.iter().zip(&tape.caches).rev() {
            g = Self::layer_input_gradient(layer, cache, &g)?;
        }
        Ok(g)
    }

    pub fn zero_grad(&mut self) {
        for l in &mut self.layers {
            match l {
                Layer::Dense(d) => {
                    d.grad_weights.fill(0.0);
                    if let Some(gb) = &mut d.grad_bias {
                        gb.iter_mut().for_each(|g| *g = 0.0);
                    }
                }
                Layer::BatchNorm(b) => {
                    b.grad_gamma.iter_mut().for_each(|g| *g = 0.0);
                    b.grad_beta.iter_mut().for_each(|g| *g = 0.0);
                }
                _ => {}
            }
        }
    }

    /// Learnable tensors in a fixed order: per dense layer weights then bias,
    /// per batch-norm layer gamma then beta.
    pub fn params_mut(&mut self) -> Vec<ParamSlot<'_>> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter_mut().enumerate() {
            match l {
                Layer::Dense(d) => {
                    out.push(ParamSlot {
                        name: format!("{i}.weights"),
                        value: d.weights.as_mut_slice(),
                        grad: d.grad_weights.as_slice(),
                    });
                    if let (Some(b), Some(gb)) = (&mut d.bias, &d.grad_bias) {
                        out.push(ParamSlot { name: format!("{i}.bias"), value: b, grad: gb });
                    }
                }
                Layer::BatchNorm(b) => {
                    out.push(ParamSlot {
                        name: format!("{i}.gamma"),
                        value: &mut b.gamma,
                        grad: &b.grad_gamma,
                    });
                    out.push(ParamSlot {
                        name: format!("{i}.beta"),
                        value: &mut b.beta,
                        grad: &b.grad_beta,
                    });
                }
                _ => {}
            }
        }
        out
    }

    /// Flattened copy of all parameters, in `params_mut` order.
    pub fn flat_params(&mut self) -> Vec<f64> {
        self.params_mut().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    /// Flattened copy of all parameter gradients, in `params_mut` order.
    pub fn flat_grads(&mut self) -> Vec<f64> {
        self.params_mut().iter().flat_map(|p| p.grad.iter().copied()).collect()
    }

    /// Adds `delta` to the parameter at flat index `index`.
    pub fn nudge_param(&mut self, index: usize, delta: f64) -> Result<()> {
        let mut offset = index;
        for slot in self.params_mut() {
            if offset < slot.value.len() {
                slot.value[offset] += delta;
                return Ok(());
            }
            offset -= slot.value.len();
        }
        Err(Error::invalid(format!("parameter index {index} out of range")))
    }
}
