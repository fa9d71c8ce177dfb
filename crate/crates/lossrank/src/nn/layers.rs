//! Layers with explicit forward/backward passes.
//!
//! No autodiff graph: each forward caller keeps whatever activations the
//! matching backward call needs.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::init::he_init;
use crate::nn::optim::ParamBlock;
use crate::nn::tensor::Tensor;

/// Fully-connected layer `y = x·W + b` with `W: [in, out]`, `b: [out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weights: ParamBlock,
    pub bias: ParamBlock,
}

impl Linear {
    pub fn new<R: Rng>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            weights: ParamBlock::new(he_init(vec![in_dim, out_dim], rng)),
            bias: ParamBlock::new(Tensor::zeros(vec![out_dim])),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.value.shape()[0]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.value.shape()[1]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut out = input.matmul(&self.weights.value)?;
        let bias = self.bias.value.data();
        for r in 0..out.rows() {
            for (o, &b) in out.row_mut(r).iter_mut().zip(bias.iter()) {
                *o += b;
            }
        }
        Ok(out)
    }

    /// Accumulates weight/bias gradients for the cached forward `input` and
    /// returns the gradient with respect to that input.
    pub fn backward(&mut self, input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
        if grad_out.shape() != [input.rows(), self.out_dim()] {
            return Err(Error::ShapeMismatch {
                context: "Linear::backward",
                expected: format!("[{}, {}]", input.rows(), self.out_dim()),
                got: format!("{:?}", grad_out.shape()),
            });
        }
        let w_grad = input.matmul_tn(grad_out)?;
        self.weights.gradient.axpy(1.0, &w_grad)?;
        let b_grad = grad_out.col_sum()?;
        self.bias.gradient.axpy(1.0, &b_grad)?;
        grad_out.matmul_nt(&self.weights.value)
    }

    pub fn params_mut(&mut self) -> [&mut ParamBlock; 2] {
        [&mut self.weights, &mut self.bias]
    }
}

/// Elementwise max(0, x).
pub fn relu(input: &Tensor) -> Tensor {
    let data = input.data().iter().map(|&v| v.max(0.0)).collect();
    Tensor::new(input.shape().to_vec(), data).expect("shape preserved")
}

/// Subgradient convention: zero at exactly 0.
pub fn relu_backward(grad_out: &Tensor, input: &Tensor) -> Result<Tensor> {
    grad_out.require_shape("relu_backward", input.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(input.data().iter())
        .map(|(&g, &x)| if x > 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor::new(input.shape().to_vec(), data).expect("shape preserved"))
}

/// Global average pooling: `[batch, c, h, w] -> [batch, c]` channelwise
/// spatial mean. Rank-2 inputs (vector features) pass through unchanged.
pub fn gap(feature: &Tensor) -> Result<Tensor> {
    match feature.rank() {
        2 => Ok(feature.clone()),
        4 => {
            let (b, c, h, w) = (
                feature.shape()[0],
                feature.shape()[1],
                feature.shape()[2],
                feature.shape()[3],
            );
            let plane = h * w;
            let mut out = Tensor::zeros(vec![b, c]);
            for i in 0..b {
                for j in 0..c {
                    let base = (i * c + j) * plane;
                    let mut acc = 0.0;
                    for p in 0..plane {
                        acc += feature.data()[base + p];
                    }
                    out.data_mut()[i * c + j] = acc / plane as f64;
                }
            }
            Ok(out)
        }
        r => Err(Error::ShapeMismatch {
            context: "gap",
            expected: "rank 2 or 4".to_string(),
            got: format!("rank {r}"),
        }),
    }
}

/// Gradient of [`gap`]: spreads each pooled gradient uniformly over its
/// spatial plane; identity for rank-2 features.
pub fn gap_backward(grad_out: &Tensor, input_shape: &[usize]) -> Result<Tensor> {
    match input_shape.len() {
        2 => {
            grad_out.require_shape("gap_backward", input_shape)?;
            Ok(grad_out.clone())
        }
        4 => {
            let (b, c, h, w) = (
                input_shape[0],
                input_shape[1],
                input_shape[2],
                input_shape[3],
            );
            grad_out.require_shape("gap_backward", &[b, c])?;
            let plane = h * w;
            let mut out = Tensor::zeros(input_shape.to_vec());
            for i in 0..b {
                for j in 0..c {
                    let g = grad_out.data()[i * c + j] / plane as f64;
                    let base = (i * c + j) * plane;
                    for p in 0..plane {
                        out.data_mut()[base + p] = g;
                    }
                }
            }
            Ok(out)
        }
        r => Err(Error::ShapeMismatch {
            context: "gap_backward",
            expected: "rank 2 or 4".to_string(),
            got: format!("rank {r}"),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rel_close;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn identity_linear(dim: usize) -> Linear {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut layer = Linear::new(dim, dim, &mut rng);
        layer.weights.value.fill(0.0);
        for i in 0..dim {
            layer.weights.value.data_mut()[i * dim + i] = 1.0;
        }
        layer.bias.value.fill(0.0);
        layer
    }

    #[test]
    fn linear_identity_passes_input_through() {
        let layer = identity_linear(3);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn linear_zero_weights_give_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut layer = Linear::new(4, 2, &mut rng);
        layer.weights.value.fill(0.0);
        layer.bias.value.fill(0.0);
        let x = Tensor::from_rows(&[vec![3.0, -1.0, 2.5, 8.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn linear_hand_case() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut layer = Linear::new(2, 1, &mut rng);
        layer.weights.value.data_mut().copy_from_slice(&[2.0, 3.0]);
        layer.bias.value.data_mut()[0] = 0.5;
        let x = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        assert_eq!(layer.forward(&x).unwrap().data(), &[5.5]);
    }

    #[test]
    fn linear_backward_zero_grad_accumulates_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut layer = Linear::new(3, 2, &mut rng);
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0]]).unwrap();
        let g = Tensor::zeros(vec![1, 2]);
        let gi = layer.backward(&x, &g).unwrap();
        assert_eq!(gi.data(), &[0.0, 0.0, 0.0]);
        assert!(layer.weights.gradient.data().iter().all(|&v| v == 0.0));
        assert!(layer.bias.gradient.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_backward_identity_passes_gradient_through() {
        let mut layer = identity_linear(3);
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let g = Tensor::from_rows(&[vec![0.3, 0.7, -1.1]]).unwrap();
        let gi = layer.backward(&x, &g).unwrap();
        assert_eq!(gi.data(), g.data());
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut layer = Linear::new(3, 2, &mut rng);
        let x = Tensor::from_rows(&[vec![0.4, -0.9, 1.3], vec![-0.2, 0.8, 0.1]]).unwrap();
        // scalar objective: sum of outputs, so grad_out is all ones
        let grad_out = Tensor::filled(vec![2, 2], 1.0);
        let grad_in = layer.backward(&x, &grad_out).unwrap();

        let h = 1e-5;
        // input gradient
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fp: f64 = layer.forward(&xp).unwrap().data().iter().sum();
            let fm: f64 = layer.forward(&xm).unwrap().data().iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                rel_close(grad_in.data()[i], fd, 1e-6),
                "input grad {} vs fd {}",
                grad_in.data()[i],
                fd
            );
        }
        // weight gradient
        for i in 0..layer.weights.value.len() {
            let orig = layer.weights.value.data()[i];
            layer.weights.value.data_mut()[i] = orig + h;
            let fp: f64 = layer.forward(&x).unwrap().data().iter().sum();
            layer.weights.value.data_mut()[i] = orig - h;
            let fm: f64 = layer.forward(&x).unwrap().data().iter().sum();
            layer.weights.value.data_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                rel_close(layer.weights.gradient.data()[i], fd, 1e-6),
                "weight grad {} vs fd {}",
                layer.weights.gradient.data()[i],
                fd
            );
        }
    }

    #[test]
    fn relu_sign_cases() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn relu_backward_zero_convention() {
        let x = Tensor::vector(vec![-1.0, 0.0, 2.0]);
        let g = Tensor::vector(vec![5.0, 5.0, 5.0]);
        assert_eq!(relu_backward(&g, &x).unwrap().data(), &[0.0, 0.0, 5.0]);
    }

    #[test]
    fn relu_finite_difference_away_from_zero() {
        let x = Tensor::vector(vec![-0.7, 0.9, 1.8, -2.4]);
        let g = Tensor::filled(vec![4], 1.0);
        let grad = relu_backward(&g, &x).unwrap();
        let h = 1e-5;
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp.data_mut()[i] += h;
            let mut xm = x.clone();
            xm.data_mut()[i] -= h;
            let fd = (relu(&xp).data().iter().sum::<f64>() - relu(&xm).data().iter().sum::<f64>())
                / (2.0 * h);
            assert!(
                (grad.data()[i] - fd).abs() < 1e-6,
                "relu grad {} vs fd {}",
                grad.data()[i],
                fd
            );
        }
    }

    #[test]
    fn gap_single_channel_mean() {
        let t = Tensor::new(vec![1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(gap(&t).unwrap().data(), &[2.5]);
    }

    #[test]
    fn gap_of_constant_map_is_the_constant() {
        let t = Tensor::filled(vec![2, 3, 4, 4], -1.25);
        let g = gap(&t).unwrap();
        assert!(g.data().iter().all(|&v| v == -1.25));
    }

    #[test]
    fn gap_rank2_is_identity() {
        let t = Tensor::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        assert_eq!(gap(&t).unwrap(), t);
    }

    #[test]
    fn gap_rejects_other_ranks() {
        let t = Tensor::zeros(vec![2, 2, 2]);
        assert!(gap(&t).is_err());
    }

    #[test]
    fn gap_backward_spreads_uniformly() {
        let g = Tensor::from_rows(&[vec![4.0]]).unwrap();
        let back = gap_backward(&g, &[1, 1, 2, 2]).unwrap();
        assert_eq!(back.data(), &[1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn gap_backward_matches_finite_differences() {
        let t = Tensor::new(vec![1, 2, 2, 2], (0..8).map(|v| v as f64 * 0.3 - 1.0).collect())
            .unwrap();
        let grad_out = Tensor::from_rows(&[vec![0.5, -1.5]]).unwrap();
        let grad = gap_backward(&grad_out, t.shape()).unwrap();
        let h = 1e-5;
        for i in 0..t.len() {
            let mut tp = t.clone();
            tp.data_mut()[i] += h;
            let mut tm = t.clone();
            tm.data_mut()[i] -= h;
            let obj = |x: &Tensor| -> f64 {
                gap(x)
                    .unwrap()
                    .data()
                    .iter()
                    .zip(grad_out.data())
                    .map(|(a, b)| a * b)
                    .sum()
            };
            let fd = (obj(&tp) - obj(&tm)) / (2.0 * h);
            assert!((grad.data()[i] - fd).abs() < 1e-9);
        }
    }

    proptest! {
        // gap is linear: gap(a*x + b*y) == a*gap(x) + b*gap(y)
        #[test]
        fn gap_is_linear(
            xs in prop::collection::vec(-5.0f64..5.0, 8),
            ys in prop::collection::vec(-5.0f64..5.0, 8),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
        ) {
            let shape = vec![1, 2, 2, 2];
            let x = Tensor::new(shape.clone(), xs.clone()).unwrap();
            let y = Tensor::new(shape.clone(), ys.clone()).unwrap();
            let mixed = Tensor::new(
                shape.clone(),
                xs.iter().zip(&ys).map(|(&p, &q)| a * p + b * q).collect(),
            ).unwrap();
            let lhs = gap(&mixed).unwrap();
            let gx = gap(&x).unwrap();
            let gy = gap(&y).unwrap();
            for i in 0..lhs.len() {
                let rhs = a * gx.data()[i] + b * gy.data()[i];
                prop_assert!((lhs.data()[i] - rhs).abs() < 1e-9);
            }
        }
    }
}
