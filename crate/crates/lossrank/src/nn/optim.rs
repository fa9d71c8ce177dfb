//! Parameter storage and the SGD-momentum update.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// One learnable tensor with its gradient accumulator and momentum buffer.
#[derive(Debug, Clone)]
pub struct ParamBlock {
    pub value: Tensor,
    pub gradient: Tensor,
    pub velocity: Tensor,
}

impl ParamBlock {
    pub fn new(value: Tensor) -> Self {
        let shape = value.shape().to_vec();
        Self {
            value,
            gradient: Tensor::zeros(shape.clone()),
            velocity: Tensor::zeros(shape),
        }
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_gradient(&mut self) {
        self.gradient.fill(0.0);
    }

    pub fn zero_velocity(&mut self) {
        self.velocity.fill(0.0);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidArgument(format!(
                "momentum must lie in [0,1), got {}",
                self.momentum
            )));
        }
        if self.weight_decay < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "weight_decay must be nonnegative, got {}",
                self.weight_decay
            )));
        }
        Ok(())
    }
}

/// One SGD step over every block:
/// g <- grad + weight_decay * value; v <- momentum * v + g; value <- value - lr * v.
/// Gradients are zeroed afterwards so the next accumulation starts clean.
pub fn sgd_step(params: &mut [&mut ParamBlock], cfg: &OptimConfig) {
    for block in params.iter_mut() {
        let n = block.value.len();
        for i in 0..n {
            let g = block.gradient.data()[i] + cfg.weight_decay * block.value.data()[i];
            let v = cfg.momentum * block.velocity.data()[i] + g;
            block.velocity.data_mut()[i] = v;
            block.value.data_mut()[i] -= cfg.learning_rate * v;
        }
        block.zero_gradient();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single(value: f64) -> ParamBlock {
        ParamBlock::new(Tensor::vector(vec![value]))
    }

    #[test]
    fn zero_gradient_is_fixed_point() {
        let mut p = single(3.5);
        let cfg = OptimConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut [&mut p], &cfg);
        assert_eq!(p.value.data(), &[3.5]);
        assert_eq!(p.velocity.data(), &[0.0]);
    }

    #[test]
    fn one_step_hand_trace() {
        let mut p = single(0.0);
        p.gradient.data_mut()[0] = 1.0;
        let cfg = OptimConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        sgd_step(&mut [&mut p], &cfg);
        assert_eq!(p.value.data(), &[-0.1]);
        assert_eq!(p.velocity.data(), &[1.0]);
        // gradient zeroed after the step
        assert_eq!(p.gradient.data(), &[0.0]);
    }

    #[test]
    fn two_step_hand_trace() {
        let mut p = single(0.0);
        let cfg = OptimConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        p.gradient.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], &cfg);
        p.gradient.data_mut()[0] = 1.0;
        sgd_step(&mut [&mut p], &cfg);
        assert!((p.velocity.data()[0] - 1.9).abs() < 1e-15);
        assert!((p.value.data()[0] - (-0.29)).abs() < 1e-15);
    }

    #[test]
    fn weight_decay_enters_the_gradient() {
        let mut p = single(2.0);
        let cfg = OptimConfig {
            learning_rate: 0.5,
            momentum: 0.0,
            weight_decay: 0.1,
        };
        sgd_step(&mut [&mut p], &cfg);
        // g = 0 + 0.1*2 = 0.2; value = 2 - 0.5*0.2 = 1.9
        assert!((p.value.data()[0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let bad = OptimConfig {
            learning_rate: 0.0,
            momentum: 0.9,
            weight_decay: 0.0,
        };
        assert!(bad.validate().is_err());
        let bad = OptimConfig {
            learning_rate: 0.1,
            momentum: 1.0,
            weight_decay: 0.0,
        };
        assert!(bad.validate().is_err());
        let ok = OptimConfig {
            learning_rate: 0.1,
            momentum: 0.0,
            weight_decay: 0.0005,
        };
        assert!(ok.validate().is_ok());
    }

    proptest! {
        // lr = 0 is rejected by validate(), but the raw update must still be
        // a no-op on values for arbitrary gradients.
        #[test]
        fn zero_learning_rate_leaves_values(grads in prop::collection::vec(-10.0f64..10.0, 1..8)) {
            let mut p = ParamBlock::new(Tensor::vector(vec![1.25; grads.len()]));
            p.gradient.data_mut().copy_from_slice(&grads);
            let cfg = OptimConfig { learning_rate: 0.0, momentum: 0.9, weight_decay: 0.1 };
            sgd_step(&mut [&mut p], &cfg);
            prop_assert!(p.value.data().iter().all(|&v| v == 1.25));
        }
    }
}
