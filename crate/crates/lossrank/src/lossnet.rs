//! The loss-prediction module and the joint training procedure.
//!
//! A small per-tap branch (gap -> linear -> relu) feeds a fusion layer that
//! emits one scalar predicted loss per sample. Training couples the target
//! task loss with a pairwise margin ranking loss over the predicted values;
//! a gradient barrier can cut the ranking term's path into the target model
//! late in the schedule.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::error::{Error, Result};
use crate::models::{
    assemble_batch, load_checkpoint, restore_params, save_checkpoint, target_loss_with_grad,
    Sample, TargetModel,
};
use crate::nn::{
    gap, gap_backward, relu, relu_backward, sgd_step, Linear, OptimConfig, ParamBlock, Tensor,
};

// ---------------------------------------------------------------------------
// Loss predictor
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LossPredictor {
    branches: Vec<Linear>,
    fusion: Linear,
    branch_dim: usize,
}

#[derive(Debug, Clone)]
pub struct PredictorCache {
    tap_shapes: Vec<Vec<usize>>,
    gap_out: Vec<Tensor>,
    branch_post: Vec<Tensor>,
    concat: Tensor,
}

impl LossPredictor {
    /// `tap_dims` are the post-gap widths of the target model's tapped
    /// features, shallow to deep; `branch_dim` is the shared branch width.
    pub fn new<R: Rng>(tap_dims: &[usize], branch_dim: usize, rng: &mut R) -> Result<Self> {
        if tap_dims.is_empty() {
            return Err(Error::InvalidArgument(
                "loss predictor needs at least one tap".to_string(),
            ));
        }
        if branch_dim == 0 {
            return Err(Error::InvalidArgument(
                "branch_dim must be positive".to_string(),
            ));
        }
        let branches = tap_dims
            .iter()
            .map(|&dim| Linear::new(dim, branch_dim, rng))
            .collect::<Vec<_>>();
        let fusion = Linear::new(tap_dims.len() * branch_dim, 1, rng);
        Ok(Self {
            branches,
            fusion,
            branch_dim,
        })
    }

    pub fn branch_count(&self) -> usize {
        self.branches.len()
    }

    pub fn branch_dim(&self) -> usize {
        self.branch_dim
    }

    pub fn param_count(&self) -> usize {
        self.branches
            .iter()
            .map(Linear::param_count)
            .sum::<usize>()
            + self.fusion.param_count()
    }

    /// Predicted loss per sample plus the cache needed for backward.
    pub fn forward(&self, features: &[Tensor]) -> Result<(Vec<f64>, PredictorCache)> {
        if features.len() != self.branches.len() {
            return Err(Error::ShapeMismatch {
                context: "LossPredictor::forward",
                expected: format!("{} taps", self.branches.len()),
                got: format!("{}", features.len()),
            });
        }
        let batch = features[0].shape()[0];
        let mut tap_shapes = Vec::with_capacity(features.len());
        let mut gap_out = Vec::with_capacity(features.len());
        let mut branch_post = Vec::with_capacity(features.len());
        let mut concat = Tensor::zeros(vec![batch, self.branches.len() * self.branch_dim]);
        for (t, (feature, branch)) in features.iter().zip(self.branches.iter()).enumerate() {
            let pooled = gap(feature)?;
            if pooled.cols() != branch.in_dim() {
                return Err(Error::ShapeMismatch {
                    context: "LossPredictor::forward",
                    expected: format!("tap width {}", branch.in_dim()),
                    got: format!("{}", pooled.cols()),
                });
            }
            let post = relu(&branch.forward(&pooled)?);
            for r in 0..batch {
                let dst = &mut concat.row_mut(r)
                    [t * self.branch_dim..(t + 1) * self.branch_dim];
                dst.copy_from_slice(post.row(r));
            }
            tap_shapes.push(feature.shape().to_vec());
            gap_out.push(pooled);
            branch_post.push(post);
        }
        let fused = self.fusion.forward(&concat)?;
        let scores = (0..batch).map(|r| fused.row(r)[0]).collect();
        Ok((
            scores,
            PredictorCache {
                tap_shapes,
                gap_out,
                branch_post,
                concat,
            },
        ))
    }

    /// Backpropagates per-sample score gradients, accumulating parameter
    /// gradients. Returns gradients with respect to the tapped features when
    /// `want_tap_grads` is set (the gradient barrier skips that work).
    pub fn backward(
        &mut self,
        cache: &PredictorCache,
        score_grads: &[f64],
        want_tap_grads: bool,
    ) -> Result<Option<Vec<Tensor>>> {
        let batch = cache.concat.rows();
        if score_grads.len() != batch {
            return Err(Error::ShapeMismatch {
                context: "LossPredictor::backward",
                expected: format!("{batch} score gradients"),
                got: format!("{}", score_grads.len()),
            });
        }
        let grad_fused = Tensor::new(vec![batch, 1], score_grads.to_vec())?;
        let grad_concat = self.fusion.backward(&cache.concat, &grad_fused)?;
        let mut tap_grads = if want_tap_grads {
            Some(Vec::with_capacity(self.branches.len()))
        } else {
            None
        };
        for (t, branch) in self.branches.iter_mut().enumerate() {
            let mut grad_post = Tensor::zeros(vec![batch, self.branch_dim]);
            for r in 0..batch {
                let src =
                    &grad_concat.row(r)[t * self.branch_dim..(t + 1) * self.branch_dim];
                grad_post.row_mut(r).copy_from_slice(src);
            }
            let grad_pre = relu_backward(&grad_post, &cache.branch_post[t])?;
            let grad_gap = branch.backward(&cache.gap_out[t], &grad_pre)?;
            if let Some(grads) = tap_grads.as_mut() {
                grads.push(gap_backward(&grad_gap, &cache.tap_shapes[t])?);
            }
        }
        Ok(tap_grads)
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out = Vec::new();
        for branch in &mut self.branches {
            out.extend(branch.params_mut());
        }
        out.extend(self.fusion.params_mut());
        out
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for branch in &self.branches {
            out.push(&branch.weights.value);
            out.push(&branch.bias.value);
        }
        out.push(&self.fusion.weights.value);
        out.push(&self.fusion.bias.value);
        out
    }
}

// ---------------------------------------------------------------------------
// Model set
// ---------------------------------------------------------------------------

/// Target model plus its loss predictor, trained jointly.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub target: TargetModel,
    pub predictor: LossPredictor,
}

impl ModelSet {
    pub fn new(target: TargetModel, predictor: LossPredictor) -> Result<Self> {
        if predictor.branch_count() != target.tap_count() {
            return Err(Error::ShapeMismatch {
                context: "ModelSet::new",
                expected: format!("{} predictor branches", target.tap_count()),
                got: format!("{}", predictor.branch_count()),
            });
        }
        if predictor.param_count() >= target.param_count() {
            return Err(Error::InvalidArgument(format!(
                "loss predictor has {} parameters but the target model only {}; \
                 the predictor must stay strictly smaller (reduce branch_dim or \
                 widen the target)",
                predictor.param_count(),
                target.param_count()
            )));
        }
        Ok(Self { target, predictor })
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out = self.target.params_mut();
        out.extend(self.predictor.params_mut());
        out
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = self.target.param_tensors();
        out.extend(self.predictor.param_tensors());
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_checkpoint(path, &self.param_tensors())
    }

    pub fn restore(&mut self, path: &Path) -> Result<()> {
        let tensors = load_checkpoint(path)?;
        let mut params = self.params_mut();
        restore_params(&mut params, &tensors)
    }
}

// ---------------------------------------------------------------------------
// Pairing and the ranking loss
// ---------------------------------------------------------------------------

/// Splits a shuffled batch into consecutive disjoint pairs.
pub fn pair_batch(indices: &[usize]) -> Result<Vec<(usize, usize)>> {
    if indices.len() % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "batch size must be even to form pairs, got {}",
            indices.len()
        )));
    }
    Ok(indices.chunks_exact(2).map(|c| (c[0], c[1])).collect())
}

/// Pairwise margin ranking loss.
///
/// The indicator is +1 when `l_i > l_j` and -1 otherwise (ties take the
/// `otherwise` branch). Real losses enter only through the indicator, so the
/// value is invariant to any strictly increasing transform of them. Returns
/// `(value, d/dl̂_i, d/dl̂_j)`; an inactive hinge (value exactly 0) yields
/// zero gradients.
pub fn ranking_loss(
    lhat_i: f64,
    lhat_j: f64,
    l_i: f64,
    l_j: f64,
    margin: f64,
) -> Result<(f64, f64, f64)> {
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "margin must be positive, got {margin}"
        )));
    }
    let sign = if l_i > l_j { 1.0 } else { -1.0 };
    let value = (-sign * (lhat_i - lhat_j) + margin).max(0.0);
    if value > 0.0 {
        Ok((value, -sign, sign))
    } else {
        Ok((value, 0.0, 0.0))
    }
}

/// Squared-error ablation of the predictor objective: `(l̂ - l)^2` with
/// gradient `2 (l̂ - l)`; the real loss is a constant.
pub fn mse_ablation_loss(lhat: f64, l: f64) -> (f64, f64) {
    let diff = lhat - l;
    (diff * diff, 2.0 * diff)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PredictorLossKind {
    /// Pairwise margin ranking over B/2 pairs.
    Ranking,
    /// Per-sample squared error against the real loss.
    SquaredError,
}

/// Predictor-objective value and the lambda-scaled per-sample score
/// gradients for one mini-batch. Real losses are treated as constants.
fn predictor_loss_terms(
    kind: PredictorLossKind,
    lhat: &[f64],
    losses: &[f64],
    lambda: f64,
    margin: f64,
) -> Result<(f64, Vec<f64>)> {
    let batch = lhat.len();
    let mut score_grads = vec![0.0; batch];
    match kind {
        PredictorLossKind::Ranking => {
            let order: Vec<usize> = (0..batch).collect();
            let pairs = pair_batch(&order)?;
            let coeff = lambda * 2.0 / batch as f64;
            let mut sum = 0.0;
            for (i, j) in &pairs {
                let (value, gi, gj) =
                    ranking_loss(lhat[*i], lhat[*j], losses[*i], losses[*j], margin)?;
                sum += value;
                score_grads[*i] += coeff * gi;
                score_grads[*j] += coeff * gj;
            }
            // mean over pairs == (2/B) * sum
            Ok((sum / pairs.len() as f64, score_grads))
        }
        PredictorLossKind::SquaredError => {
            let coeff = lambda / batch as f64;
            let mut sum = 0.0;
            for k in 0..batch {
                let (value, grad) = mse_ablation_loss(lhat[k], losses[k]);
                sum += value;
                score_grads[k] = coeff * grad;
            }
            Ok((sum / batch as f64, score_grads))
        }
    }
}

// ---------------------------------------------------------------------------
// Joint objective
// ---------------------------------------------------------------------------

/// Training schedule for one cycle of joint optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Mini-batch size B; must be even so B/2 pairs exist.
    pub batch_size: usize,
    /// Epoch index at which the learning rate is multiplied by
    /// `lr_drop_factor` (an index >= epochs never drops).
    pub lr_drop_epoch: usize,
    pub lr_drop_factor: f64,
    /// The gradient barrier activates at epoch floor(fraction * epochs).
    pub grad_stop_fraction: f64,
    pub lambda: f64,
    pub margin: f64,
    pub predictor_loss: PredictorLossKind,
    pub optim: OptimConfig,
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(Error::InvalidArgument(format!(
                "batch_size must be even and positive, got {}",
                self.batch_size
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "margin must be positive, got {}",
                self.margin
            )));
        }
        if self.lambda < 0.0 {
            return Err(Error::InvalidArgument(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.grad_stop_fraction) {
            return Err(Error::InvalidArgument(format!(
                "grad_stop_fraction must lie in [0,1], got {}",
                self.grad_stop_fraction
            )));
        }
        if !(self.lr_drop_factor > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lr_drop_factor must be positive, got {}",
                self.lr_drop_factor
            )));
        }
        self.optim.validate()
    }

    pub fn grad_stop_epoch(&self) -> usize {
        (self.grad_stop_fraction * self.epochs as f64).floor() as usize
    }
}

/// Value/means breakdown of one joint forward-backward pass.
#[derive(Debug, Clone, Copy)]
pub struct JointLoss {
    /// mean target loss + lambda * mean predictor loss.
    pub total: f64,
    pub mean_target_loss: f64,
    /// Mean of the predictor objective (over pairs for ranking, over samples
    /// for squared error), unscaled by lambda.
    pub mean_ranking_loss: f64,
}

/// One joint forward-backward pass over an even-sized batch. Parameter
/// gradients accumulate into the model set; when `barrier` is set no
/// gradient from the predictor objective reaches target-model parameters.
pub fn joint_batch_loss(
    model_set: &mut ModelSet,
    x: &Tensor,
    labels: &crate::models::BatchLabels,
    schedule: &TrainSchedule,
    barrier: bool,
) -> Result<JointLoss> {
    let batch = x.rows();
    if batch % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "joint batch size must be even, got {batch}"
        )));
    }
    let out = model_set.target.forward(x)?;
    let (losses, grad_pred) =
        target_loss_with_grad(&out.prediction, labels, model_set.target.task)?;
    let (lhat, cache) = model_set.predictor.forward(out.features())?;
    let (mean_pred_loss, score_grads) = predictor_loss_terms(
        schedule.predictor_loss,
        &lhat,
        &losses,
        schedule.lambda,
        schedule.margin,
    )?;

    // Skipping the tap injection entirely (rather than adding zeros) keeps
    // the target-gradient float-op sequence identical between a barrier run
    // and a lambda = 0 run.
    let inject_taps = !barrier && schedule.lambda != 0.0;
    let tap_grads = model_set
        .predictor
        .backward(&cache, &score_grads, inject_taps)?;

    let mut grad_pred_scaled = grad_pred;
    grad_pred_scaled.scale(1.0 / batch as f64);
    model_set
        .target
        .backward(out.cache(), &grad_pred_scaled, tap_grads.as_deref())?;

    let mean_target = losses.iter().sum::<f64>() / batch as f64;
    let total = mean_target + schedule.lambda * mean_pred_loss;
    if !total.is_finite() {
        return Err(Error::NonFinite("joint_batch_loss".to_string()));
    }
    Ok(JointLoss {
        total,
        mean_target_loss: mean_target,
        mean_ranking_loss: mean_pred_loss,
    })
}

/// Forward-only evaluation of the joint objective (used by gradient checks).
pub fn joint_batch_value(
    model_set: &ModelSet,
    x: &Tensor,
    labels: &crate::models::BatchLabels,
    schedule: &TrainSchedule,
) -> Result<f64> {
    let batch = x.rows();
    if batch % 2 != 0 {
        return Err(Error::InvalidArgument(format!(
            "joint batch size must be even, got {batch}"
        )));
    }
    let out = model_set.target.forward(x)?;
    let (losses, _) = target_loss_with_grad(&out.prediction, labels, model_set.target.task)?;
    let (lhat, _) = model_set.predictor.forward(out.features())?;
    let (mean_pred_loss, _) = predictor_loss_terms(
        schedule.predictor_loss,
        &lhat,
        &losses,
        schedule.lambda,
        schedule.margin,
    )?;
    let mean_target = losses.iter().sum::<f64>() / batch as f64;
    Ok(mean_target + schedule.lambda * mean_pred_loss)
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-epoch log row emitted by [`train_model_set`].
#[derive(Debug, Clone, Copy)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_target_loss: f64,
    pub mean_ranking_loss: f64,
    pub learning_rate: f64,
    pub barrier_active: bool,
}

/// Trains the model set on the labeled samples for the whole schedule.
///
/// Mini-batches are shuffled each epoch; when the labeled set is smaller
/// than B, the batch shrinks to the largest even size that fits. A final
/// odd-sized leftover batch contributes only the target term.
pub fn train_model_set<R: Rng>(
    model_set: &mut ModelSet,
    samples: &[Sample],
    labeled_ids: &[usize],
    schedule: &TrainSchedule,
    rng: &mut R,
) -> Result<Vec<EpochLog>> {
    if labeled_ids.is_empty() {
        return Err(Error::InvalidArgument(
            "cannot train on an empty labeled set".to_string(),
        ));
    }
    schedule.validate()?;

    // Momentum does not carry across cycles.
    for p in model_set.params_mut() {
        p.zero_velocity();
        p.zero_gradient();
    }

    let n = labeled_ids.len();
    let batch = schedule.batch_size.min(n) & !1usize; // largest even <= min(B, n)
    let grad_stop_epoch = schedule.grad_stop_epoch();
    let task = model_set.target.task;

    let mut order: Vec<usize> = labeled_ids.to_vec();
    let mut logs = Vec::with_capacity(schedule.epochs);
    for epoch in 0..schedule.epochs {
        let lr = if epoch >= schedule.lr_drop_epoch {
            schedule.optim.learning_rate * schedule.lr_drop_factor
        } else {
            schedule.optim.learning_rate
        };
        let barrier = epoch >= grad_stop_epoch;
        let cfg = OptimConfig {
            learning_rate: lr,
            ..schedule.optim
        };
        order.shuffle(rng);

        let mut target_sum = 0.0;
        let mut pair_sum = 0.0;
        let mut pair_count = 0usize;
        let mut start = 0usize;
        while start < n {
            let end = if batch >= 2 { (start + batch).min(n) } else { n };
            let chunk = &order[start..end];
            let (x, labels) = assemble_batch(samples, chunk, task)?;
            if chunk.len() % 2 == 0 {
                let joint = joint_batch_loss(model_set, &x, &labels, schedule, barrier)?;
                target_sum += joint.mean_target_loss * chunk.len() as f64;
                let pairs = match schedule.predictor_loss {
                    PredictorLossKind::Ranking => chunk.len() / 2,
                    PredictorLossKind::SquaredError => chunk.len(),
                };
                pair_sum += joint.mean_ranking_loss * pairs as f64;
                pair_count += pairs;
            } else {
                // Odd leftover: target term only.
                let out = model_set.target.forward(&x)?;
                let (losses, grad_pred) =
                    target_loss_with_grad(&out.prediction, &labels, task)?;
                let mut grad_scaled = grad_pred;
                grad_scaled.scale(1.0 / chunk.len() as f64);
                model_set.target.backward(out.cache(), &grad_scaled, None)?;
                target_sum += losses.iter().sum::<f64>();
            }
            let mut params = model_set.params_mut();
            sgd_step(&mut params, &cfg);
            start = end;
        }

        logs.push(EpochLog {
            epoch,
            mean_target_loss: target_sum / n as f64,
            mean_ranking_loss: if pair_count > 0 {
                pair_sum / pair_count as f64
            } else {
                0.0
            },
            learning_rate: lr,
            barrier_active: barrier,
        });
    }

    for p in model_set.params_mut() {
        p.value.validate_finite("train_model_set parameters")?;
    }
    Ok(logs)
}
