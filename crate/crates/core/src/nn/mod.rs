//! Feed-forward network engine with exact backpropagation.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod matrix;
pub mod network;
pub mod optim;

pub use layers::{Activation, BatchNorm, Dense, Dropout, Mode};
pub use loss::{cross_entropy_loss, mse_loss, LossValue};
pub use matrix::Matrix;
pub use network::{Layer, Network, Tape};
pub use optim::{Optimizer, OptimizerConfig};
