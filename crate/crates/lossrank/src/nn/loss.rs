//! Scalar losses with per-sample values.
//!
//! Per-sample losses are first-class outputs here: the ranking objective
//! downstream consumes individual values, not batch means. Gradients are
//! returned unscaled (per sample); callers apply their own batch scaling.

use crate::error::{Error, Result};
use crate::nn::tensor::Tensor;

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Tensor) -> Result<Tensor> {
    if logits.rank() != 2 {
        return Err(Error::ShapeMismatch {
            context: "softmax_rows",
            expected: "rank-2 logits".to_string(),
            got: format!("rank {}", logits.rank()),
        });
    }
    let mut out = logits.clone();
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
    Ok(out)
}

/// Softmax cross-entropy. Returns per-sample negative log-likelihoods and
/// the per-sample gradient with respect to the logits (`p - onehot`).
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(Vec<f64>, Tensor)> {
    let classes = logits.cols();
    if labels.len() != logits.rows() {
        return Err(Error::ShapeMismatch {
            context: "softmax_xent",
            expected: format!("{} labels", logits.rows()),
            got: format!("{}", labels.len()),
        });
    }
    for &label in labels {
        if label >= classes {
            return Err(Error::LabelOutOfRange { label, classes });
        }
    }
    let mut grad = logits.clone();
    let mut losses = Vec::with_capacity(labels.len());
    for r in 0..logits.rows() {
        let row = grad.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        let label = labels[r];
        // loss = ln(sum) - (z_true - max)
        let loss = sum.ln() - (logits.row(r)[label] - max);
        losses.push(loss);
        for v in row.iter_mut() {
            *v /= sum;
        }
        row[label] -= 1.0;
    }
    Ok((losses, grad))
}

/// Per-sample mean squared error over the output dimension, with gradient
/// `2 (pred - target) / d` per element.
pub fn mse(pred: &Tensor, target: &Tensor) -> Result<(Vec<f64>, Tensor)> {
    target.require_shape("mse", pred.shape())?;
    let d = pred.cols();
    let mut grad = Tensor::zeros(pred.shape().to_vec());
    let mut losses = Vec::with_capacity(pred.rows());
    for r in 0..pred.rows() {
        let mut acc = 0.0;
        for c in 0..d {
            let diff = pred.row(r)[c] - target.row(r)[c];
            acc += diff * diff;
            grad.row_mut(r)[c] = 2.0 * diff / d as f64;
        }
        losses.push(acc / d as f64);
    }
    Ok((losses, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::rel_close;

    #[test]
    fn uniform_logits_cost_ln_c() {
        let logits = Tensor::zeros(vec![3, 10]);
        let (losses, _) = softmax_xent(&logits, &[0, 4, 9]).unwrap();
        for l in losses {
            assert_eq!(l, 10.0f64.ln());
        }
    }

    #[test]
    fn saturated_true_class_costs_nothing() {
        let mut logits = Tensor::zeros(vec![1, 5]);
        logits.data_mut()[2] = 1000.0;
        let (losses, _) = softmax_xent(&logits, &[2]).unwrap();
        assert!(losses[0] <= 1e-9);
    }

    #[test]
    fn label_out_of_range_is_an_error() {
        let logits = Tensor::zeros(vec![1, 3]);
        assert!(matches!(
            softmax_xent(&logits, &[3]),
            Err(Error::LabelOutOfRange { .. })
        ));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_xent_nonnegative() {
        let logits = Tensor::from_rows(&[
            vec![1.5, -2.0, 0.3, 4.0],
            vec![-8.0, -8.0, -8.0, -8.0],
            vec![100.0, 0.0, -100.0, 5.0],
        ])
        .unwrap();
        let probs = softmax_rows(&logits).unwrap();
        for r in 0..probs.rows() {
            let sum: f64 = probs.row(r).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "row sum {sum}");
        }
        let (losses, _) = softmax_xent(&logits, &[1, 0, 2]).unwrap();
        assert!(losses.iter().all(|&l| l >= 0.0));
    }

    #[test]
    fn xent_gradient_matches_finite_differences() {
        let logits =
            Tensor::from_rows(&[vec![0.2, -1.1, 0.7], vec![2.0, 0.1, -0.4]]).unwrap();
        let labels = [2usize, 0];
        let (_, grad) = softmax_xent(&logits, &labels).unwrap();
        let h = 1e-5;
        for i in 0..logits.len() {
            let mut lp = logits.clone();
            lp.data_mut()[i] += h;
            let mut lm = logits.clone();
            lm.data_mut()[i] -= h;
            let fp: f64 = softmax_xent(&lp, &labels).unwrap().0.iter().sum();
            let fm: f64 = softmax_xent(&lm, &labels).unwrap().0.iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                rel_close(grad.data()[i], fd, 1e-6),
                "grad {} vs fd {}",
                grad.data()[i],
                fd
            );
        }
    }

    #[test]
    fn mse_zero_when_equal() {
        let pred = Tensor::from_rows(&[vec![0.5, -0.5]]).unwrap();
        let (losses, grad) = mse(&pred, &pred.clone()).unwrap();
        assert_eq!(losses, vec![0.0]);
        assert!(grad.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mse_hand_case() {
        let pred = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let target = Tensor::zeros(vec![1, 2]);
        let (losses, grad) = mse(&pred, &target).unwrap();
        assert_eq!(losses, vec![1.0]);
        assert_eq!(grad.data(), &[1.0, 1.0]); // 2*(1-0)/2
    }

    #[test]
    fn mse_shape_mismatch_is_an_error() {
        let pred = Tensor::zeros(vec![1, 2]);
        let target = Tensor::zeros(vec![1, 3]);
        assert!(mse(&pred, &target).is_err());
    }

    #[test]
    fn mse_gradient_matches_finite_differences() {
        let pred = Tensor::from_rows(&[vec![0.3, -1.2, 2.2], vec![0.0, 0.9, -0.1]]).unwrap();
        let target =
            Tensor::from_rows(&[vec![1.0, 0.0, 2.0], vec![-0.5, 0.5, 0.5]]).unwrap();
        let (_, grad) = mse(&pred, &target).unwrap();
        let h = 1e-5;
        for i in 0..pred.len() {
            let mut pp = pred.clone();
            pp.data_mut()[i] += h;
            let mut pm = pred.clone();
            pm.data_mut()[i] -= h;
            let fp: f64 = mse(&pp, &target).unwrap().0.iter().sum();
            let fm: f64 = mse(&pm, &target).unwrap().0.iter().sum();
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                rel_close(grad.data()[i], fd, 1e-6),
                "grad {} vs fd {}",
                grad.data()[i],
                fd
            );
        }
    }
}
