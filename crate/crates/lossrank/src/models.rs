//! Target models: perceptron stacks that expose both a task prediction and
//! the mid-level activations the loss predictor taps.
//!
//! Every hidden block is `linear -> relu` with a feature tap after the relu
//! (post-activation). The head maps the last block to class logits or to a
//! regression output.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{mse, relu, relu_backward, softmax_xent, Linear, ParamBlock, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TaskKind {
    Classification { classes: usize },
    Regression { output_dim: usize },
}

impl TaskKind {
    pub fn name(&self) -> &'static str {
        match self {
            TaskKind::Classification { .. } => "classification",
            TaskKind::Regression { .. } => "regression",
        }
    }
}

/// Ground-truth annotation of one sample.
#[derive(Debug, Clone, PartialEq)]
pub enum Label {
    Class(usize),
    Vector(Vec<f64>),
}

/// One data point: input vector, label, and a stable id into its dataset.
#[derive(Debug, Clone)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Label,
    pub id: usize,
}

/// Labels of an assembled mini-batch.
#[derive(Debug, Clone)]
pub enum BatchLabels {
    Classes(Vec<usize>),
    Values(Tensor),
}

/// Ordered mid-level activations, one per tapped block (shallow to deep).
pub type FeatureSet = Vec<Tensor>;

#[derive(Debug, Clone)]
pub struct TargetCache {
    input: Tensor,
    /// Post-activation output of each hidden block.
    posts: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct TargetOutput {
    pub prediction: Tensor,
    cache: TargetCache,
}

impl TargetOutput {
    /// The tapped features, shallow to deep.
    pub fn features(&self) -> &[Tensor] {
        &self.cache.posts
    }

    pub fn cache(&self) -> &TargetCache {
        &self.cache
    }
}

#[derive(Debug, Clone)]
pub struct TargetModel {
    pub task: TaskKind,
    blocks: Vec<Linear>,
    head: Linear,
}

pub fn build_mlp_classifier<R: Rng>(
    input_dim: usize,
    hidden_dims: &[usize],
    num_classes: usize,
    rng: &mut R,
) -> Result<TargetModel> {
    build_mlp(
        input_dim,
        hidden_dims,
        TaskKind::Classification {
            classes: num_classes,
        },
        rng,
    )
}

pub fn build_mlp_regressor<R: Rng>(
    input_dim: usize,
    hidden_dims: &[usize],
    output_dim: usize,
    rng: &mut R,
) -> Result<TargetModel> {
    build_mlp(
        input_dim,
        hidden_dims,
        TaskKind::Regression { output_dim },
        rng,
    )
}

fn build_mlp<R: Rng>(
    input_dim: usize,
    hidden_dims: &[usize],
    task: TaskKind,
    rng: &mut R,
) -> Result<TargetModel> {
    if hidden_dims.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 hidden blocks for feature taps, got {}",
            hidden_dims.len()
        )));
    }
    if input_dim == 0 || hidden_dims.iter().any(|&d| d == 0) {
        return Err(Error::InvalidArgument(
            "layer widths must be positive".to_string(),
        ));
    }
    let out_dim = match task {
        TaskKind::Classification { classes } => {
            if classes < 2 {
                return Err(Error::InvalidArgument(
                    "classification needs at least 2 classes".to_string(),
                ));
            }
            classes
        }
        TaskKind::Regression { output_dim } => {
            if output_dim == 0 {
                return Err(Error::InvalidArgument(
                    "regression output_dim must be positive".to_string(),
                ));
            }
            output_dim
        }
    };
    let mut blocks = Vec::with_capacity(hidden_dims.len());
    let mut prev = input_dim;
    for &width in hidden_dims {
        blocks.push(Linear::new(prev, width, rng));
        prev = width;
    }
    let head = Linear::new(prev, out_dim, rng);
    Ok(TargetModel { task, blocks, head })
}

impl TargetModel {
    pub fn tap_count(&self) -> usize {
        self.blocks.len()
    }

    /// Width of each tapped feature (these are vector taps, so this is also
    /// the post-gap dimension).
    pub fn tap_dims(&self) -> Vec<usize> {
        self.blocks.iter().map(|b| b.out_dim()).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.head.out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.blocks
            .iter()
            .map(Linear::param_count)
            .sum::<usize>()
            + self.head.param_count()
    }

    pub fn forward(&self, x: &Tensor) -> Result<TargetOutput> {
        if x.rank() != 2 || x.cols() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "TargetModel::forward",
                expected: format!("[batch, {}]", self.input_dim()),
                got: format!("{:?}", x.shape()),
            });
        }
        let mut posts = Vec::with_capacity(self.blocks.len());
        let mut current = x.clone();
        for block in &self.blocks {
            let post = relu(&block.forward(&current)?);
            posts.push(post.clone());
            current = post;
        }
        let prediction = self.head.forward(&current)?;
        Ok(TargetOutput {
            prediction,
            cache: TargetCache {
                input: x.clone(),
                posts,
            },
        })
    }

    /// Backpropagates a prediction gradient (and optional per-tap feature
    /// gradients) through the network, accumulating parameter gradients.
    pub fn backward(
        &mut self,
        cache: &TargetCache,
        grad_prediction: &Tensor,
        tap_gradients: Option<&[Tensor]>,
    ) -> Result<()> {
        if let Some(taps) = tap_gradients {
            if taps.len() != self.blocks.len() {
                return Err(Error::ShapeMismatch {
                    context: "TargetModel::backward",
                    expected: format!("{} tap gradients", self.blocks.len()),
                    got: format!("{}", taps.len()),
                });
            }
        }
        let last_post = cache.posts.last().expect("at least 2 blocks");
        let mut grad_post = self.head.backward(last_post, grad_prediction)?;
        for i in (0..self.blocks.len()).rev() {
            if let Some(taps) = tap_gradients {
                grad_post.axpy(1.0, &taps[i])?;
            }
            // posts[i] > 0 exactly where the pre-activation is > 0, so the
            // cached post-activation doubles as the relu mask.
            let grad_pre = relu_backward(&grad_post, &cache.posts[i])?;
            let input = if i == 0 { &cache.input } else { &cache.posts[i - 1] };
            grad_post = self.blocks[i].backward(input, &grad_pre)?;
        }
        Ok(())
    }

    pub fn params_mut(&mut self) -> Vec<&mut ParamBlock> {
        let mut out = Vec::new();
        for block in &mut self.blocks {
            out.extend(block.params_mut());
        }
        out.extend(self.head.params_mut());
        out
    }

    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for block in &self.blocks {
            out.push(&block.weights.value);
            out.push(&block.bias.value);
        }
        out.push(&self.head.weights.value);
        out.push(&self.head.bias.value);
        out
    }
}

/// Per-sample target losses for a prediction/label pair.
pub fn target_loss(prediction: &Tensor, labels: &BatchLabels, task: TaskKind) -> Result<Vec<f64>> {
    Ok(target_loss_with_grad(prediction, labels, task)?.0)
}

/// Per-sample losses plus the per-sample gradient with respect to the
/// prediction (unscaled by batch size).
pub fn target_loss_with_grad(
    prediction: &Tensor,
    labels: &BatchLabels,
    task: TaskKind,
) -> Result<(Vec<f64>, Tensor)> {
    match (task, labels) {
        (TaskKind::Classification { classes }, BatchLabels::Classes(idx)) => {
            if prediction.cols() != classes {
                return Err(Error::ShapeMismatch {
                    context: "target_loss",
                    expected: format!("{classes} logits"),
                    got: format!("{}", prediction.cols()),
                });
            }
            softmax_xent(prediction, idx)
        }
        (TaskKind::Regression { output_dim }, BatchLabels::Values(values)) => {
            if prediction.cols() != output_dim {
                return Err(Error::ShapeMismatch {
                    context: "target_loss",
                    expected: format!("{output_dim} outputs"),
                    got: format!("{}", prediction.cols()),
                });
            }
            mse(prediction, values)
        }
        (task, _) => Err(Error::InvalidArgument(format!(
            "label kind does not match {} task",
            task.name()
        ))),
    }
}

/// Gathers rows and labels for the given sample indices.
pub fn assemble_batch(samples: &[Sample], ids: &[usize], task: TaskKind) -> Result<(Tensor, BatchLabels)> {
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty batch".to_string()));
    }
    let dim = samples[ids[0]].x.len();
    let mut data = Vec::with_capacity(ids.len() * dim);
    for &id in ids {
        data.extend_from_slice(&samples[id].x);
    }
    let x = Tensor::new(vec![ids.len(), dim], data)?;
    let labels = match task {
        TaskKind::Classification { .. } => {
            let mut classes = Vec::with_capacity(ids.len());
            for &id in ids {
                match &samples[id].y {
                    Label::Class(c) => classes.push(*c),
                    Label::Vector(_) => {
                        return Err(Error::InvalidArgument(
                            "vector label in classification batch".to_string(),
                        ))
                    }
                }
            }
            BatchLabels::Classes(classes)
        }
        TaskKind::Regression { output_dim } => {
            let mut values = Vec::with_capacity(ids.len() * output_dim);
            for &id in ids {
                match &samples[id].y {
                    Label::Vector(v) if v.len() == output_dim => values.extend_from_slice(v),
                    Label::Vector(v) => {
                        return Err(Error::ShapeMismatch {
                            context: "assemble_batch",
                            expected: format!("{output_dim}-dim label"),
                            got: format!("{}", v.len()),
                        })
                    }
                    Label::Class(_) => {
                        return Err(Error::InvalidArgument(
                            "class label in regression batch".to_string(),
                        ))
                    }
                }
            }
            BatchLabels::Values(Tensor::new(vec![ids.len(), output_dim], values)?)
        }
    };
    Ok((x, labels))
}

// ---------------------------------------------------------------------------
// Checkpoint format: magic "LRNK", version u32, tensor count u64, then each
// tensor as rank u32, extents u64 x rank, little-endian f64 values.
// ---------------------------------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"LRNK";
const CHECKPOINT_VERSION: u32 = 1;

pub fn save_checkpoint(path: &Path, tensors: &[&Tensor]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u64).to_le_bytes());
    for t in tensors {
        buf.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path)?;
    file.write_all(&buf)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Tensor>> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let mut cursor = 0usize;
    let take = |cursor: &mut usize, n: usize| -> Result<&[u8]> {
        if *cursor + n > bytes.len() {
            return Err(Error::DataFormat("checkpoint truncated".to_string()));
        }
        let slice = &bytes[*cursor..*cursor + n];
        *cursor += n;
        Ok(slice)
    };
    if take(&mut cursor, 4)? != CHECKPOINT_MAGIC {
        return Err(Error::DataFormat("bad checkpoint magic".to_string()));
    }
    let version = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(Error::DataFormat(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let count = u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize;
    let mut tensors = Vec::with_capacity(count);
    for _ in 0..count {
        let rank = u32::from_le_bytes(take(&mut cursor, 4)?.try_into().unwrap()) as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()) as usize);
        }
        let n: usize = shape.iter().product();
        let mut data = Vec::with_capacity(n);
        for _ in 0..n {
            data.push(f64::from_le_bytes(take(&mut cursor, 8)?.try_into().unwrap()));
        }
        tensors.push(Tensor::new(shape, data)?);
    }
    if cursor != bytes.len() {
        return Err(Error::DataFormat(
            "trailing bytes after checkpoint payload".to_string(),
        ));
    }
    Ok(tensors)
}

/// Copies checkpoint tensors into an existing parameter list, verifying
/// shapes. The architecture must match the one that produced the file.
pub fn restore_params(params: &mut [&mut ParamBlock], tensors: &[Tensor]) -> Result<()> {
    if params.len() != tensors.len() {
        return Err(Error::DataFormat(format!(
            "checkpoint holds {} tensors, model has {} parameters",
            tensors.len(),
            params.len()
        )));
    }
    for (block, tensor) in params.iter_mut().zip(tensors.iter()) {
        tensor.require_shape("restore_params", block.value.shape())?;
        block.value = tensor.clone();
    }
    Ok(())
}
