//! Minimal dense-tensor neural-network core.
//!
//! Layers expose explicit forward/backward passes, losses return per-sample
//! values, and the optimizer is plain SGD with momentum and weight decay.
//! Everything runs in `f64` with fixed summation order so training is
//! bitwise reproducible for a given seed.

pub mod gradcheck;
pub mod init;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod tensor;

pub use init::he_init;
pub use layers::{gap, gap_backward, relu, relu_backward, Linear};
pub use loss::{mse, softmax_rows, softmax_xent};
pub use optim::{sgd_step, OptimConfig, ParamBlock};
pub use tensor::Tensor;
