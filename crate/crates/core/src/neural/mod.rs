//! Numerical core: tensors, a bidirectional LSTM stack with a dense head,
//! weighted binary cross-entropy, optimizers and checkpoints.
//!
//! Gradients are computed by hand-written reverse passes for each layer
//! rather than a general tape. Each training forward pass stores the
//! activations it needs; [`Classifier::backward`] consumes them.

mod checkpoint;
mod head;
mod layers;
mod loss;
mod lstm;
mod optim;
mod param;
mod tensor;
#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};
pub use head::{FineTuneHead, Head, Output};
pub use layers::{Affine, BatchNorm, PRelu};
pub use loss::{class_weights, weighted_bce, weighted_bce_single, EPS};
pub use lstm::{BiLayer, BiLstmStack, LstmCell};
pub use optim::{Optimizer, OptimizerKind};
pub use param::{Module, Param};
pub use tensor::Tensor;

use crate::contour::PaddedBatch;
use crate::error::{Error, Result};
use head::HeadCache;
use lstm::StackTrace;

/// Layout of the fine-tune head.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneArch {
    pub width: usize,
    pub extra_dims: usize,
    pub dropout: f64,
}

impl Default for FineTuneArch {
    fn default() -> Self {
        Self {
            width: 400,
            extra_dims: crate::fluency::FluencyVector::DIM + 3,
            dropout: 0.5,
        }
    }
}

/// Shape of a classifier. Everything needed to rebuild an empty model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_dim: usize,
    pub layers: usize,
    pub hidden: usize,
    pub head_width: usize,
    pub dropout: f64,
    #[serde(default)]
    pub finetune: Option<FineTuneArch>,
}

impl Architecture {
    /// Five layers of 400 hidden units per direction and a 400-wide head.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            layers: 5,
            hidden: 400,
            head_width: 400,
            dropout: 0.5,
            finetune: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.input_dim == 0 {
            return bad("input_dim must be positive");
        }
        if self.layers == 0 || self.hidden == 0 || self.head_width == 0 {
            return bad("layers, hidden and head_width must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1)");
        }
        if let Some(ft) = &self.finetune {
            if ft.width == 0 || !(0.0..1.0).contains(&ft.dropout) {
                return bad("fine-tune width must be positive and dropout in [0, 1)");
            }
        }
        Ok(())
    }

    /// Fails on the first field that differs from `expected`.
    pub fn ensure_matches(&self, expected: &Architecture) -> Result<()> {
        let mismatch = |field: &str, e: String, f: String| {
            Err(Error::ArchitectureMismatch {
                field: field.to_string(),
                expected: e,
                found: f,
            })
        };
        if self.input_dim != expected.input_dim {
            return mismatch(
                "input_dim",
                expected.input_dim.to_string(),
                self.input_dim.to_string(),
            );
        }
        if self.layers != expected.layers {
            return mismatch(
                "layers",
                expected.layers.to_string(),
                self.layers.to_string(),
            );
        }
        if self.hidden != expected.hidden {
            return mismatch(
                "hidden",
                expected.hidden.to_string(),
                self.hidden.to_string(),
            );
        }
        if self.head_width != expected.head_width {
            return mismatch(
                "head_width",
                expected.head_width.to_string(),
                self.head_width.to_string(),
            );
        }
        if self.finetune.map(|f| (f.width, f.extra_dims))
            != expected.finetune.map(|f| (f.width, f.extra_dims))
        {
            return mismatch(
                "finetune",
                format!("{:?}", expected.finetune),
                format!("{:?}", self.finetune),
            );
        }
        Ok(())
    }
}

/// Optimization settings for one training run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Rate of the outermost dropout layer of the model being trained.
    pub dropout: f64,
    pub optimizer: OptimizerKind,
    /// Share of the training data held out for early stopping; 0 trains
    /// for exactly `max_epochs`.
    pub val_fraction: f64,
}

impl TrainConfig {
    /// Pretraining defaults.
    pub fn pretrain() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 32,
            max_epochs: 200,
            patience: 10,
            seed: 0,
            dropout: 0.5,
            optimizer: OptimizerKind::Adam,
            val_fraction: 0.2,
        }
    }

    /// Fine-tuning defaults: batch size 8, learning rate 1e-4.
    pub fn finetune() -> Self {
        Self {
            learning_rate: 1e-4,
            batch_size: 8,
            ..Self::pretrain()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "learning_rate must be > 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidArgument(format!(
                "dropout must lie in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(0.0..0.9).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(format!(
                "val_fraction must lie in [0, 0.9), got {}",
                self.val_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Pending {
    traces: Vec<StackTrace>,
    head: HeadCache,
    probs: Vec<f64>,
}

/// Recurrent stack plus head, producing one probability per sequence.
#[derive(Debug, Clone)]
pub struct Classifier {
    arch: Architecture,
    pub stack: BiLstmStack,
    pub head: Head,
    pending: Option<Pending>,
    grads_ready: bool,
}

impl PartialEq for Classifier {
    fn eq(&self, other: &Self) -> bool {
        self.arch == other.arch && self.stack == other.stack && self.head == other.head
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Classifier {
    /// Randomly initialized model. A fine-tune layout in `arch` gets its
    /// head replaced immediately.
    pub fn new(arch: Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stack = BiLstmStack::new(arch.input_dim, arch.hidden, arch.layers, &mut rng);
        let mut head = Head::new(2 * arch.hidden, arch.head_width, arch.dropout, &mut rng);
        if let Some(ft) = arch.finetune {
            head.replace_output(ft.width, ft.extra_dims, ft.dropout, &mut rng);
        }
        Ok(Self::assemble(arch, stack, head))
    }

    /// Every weight and bias zero (batch-norm scale and running variance
    /// stay at one, PReLU slopes at their initial value).
    pub fn zeros(arch: Architecture) -> Result<Self> {
        arch.validate()?;
        let stack = BiLstmStack::zeros(arch.input_dim, arch.hidden, arch.layers);
        let mut head = Head::zeros(2 * arch.hidden, arch.head_width, arch.dropout);
        if let Some(ft) = arch.finetune {
            head.out = Output::FineTune(FineTuneHead {
                fc_a: Affine::zeros(arch.head_width + ft.extra_dims, ft.width),
                prelu: PRelu::default(),
                dropout: ft.dropout,
                fc_b: Affine::zeros(ft.width, 1),
                extra_dims: ft.extra_dims,
            });
        }
        Ok(Self::assemble(arch, stack, head))
    }

    fn assemble(arch: Architecture, stack: BiLstmStack, head: Head) -> Self {
        Self {
            arch,
            stack,
            head,
            pending: None,
            grads_ready: false,
        }
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input_dim
    }

    pub fn extra_dims(&self) -> usize {
        self.head.extra_dims()
    }

    /// Replaces the last affine layer with a fresh fine-tune head. The
    /// recurrent stack and the rest of the head are kept as they are.
    pub fn into_finetune(mut self, ft: FineTuneArch, seed: u64) -> Result<Self> {
        self.arch.finetune = Some(ft);
        self.arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        self.head
            .replace_output(ft.width, ft.extra_dims, ft.dropout, &mut rng);
        self.pending = None;
        self.grads_ready = false;
        Ok(self)
    }

    /// Rate of the last dropout layer before the output.
    pub fn dropout(&self) -> f64 {
        match &self.head.out {
            Output::Linear(_) => self.head.dropout,
            Output::FineTune(ft) => ft.dropout,
        }
    }

    pub fn set_dropout(&mut self, rate: f64) {
        match &mut self.head.out {
            Output::Linear(_) => {
                self.head.dropout = rate;
                self.arch.dropout = rate;
            }
            Output::FineTune(ft) => {
                ft.dropout = rate;
                if let Some(a) = &mut self.arch.finetune {
                    a.dropout = rate;
                }
            }
        }
    }

    /// Sets every weight, bias and slope of the model to zero.
    pub fn zero_weights(&mut self) {
        self.visit_mut("", &mut |name, p| {
            if p.trainable && !name.ends_with("gamma") {
                p.value.fill(0.0)
            }
        });
    }

    fn check_inputs(&self, batch: &PaddedBatch, extras: Option<&Tensor>) -> Result<usize> {
        let b = batch.lengths.len();
        let shape = batch.data.shape();
        if shape.len() != 3 || shape[2] != self.arch.input_dim || shape[0] != b {
            return Err(Error::ShapeMismatch {
                expected: vec![b, batch.padded_len(), self.arch.input_dim],
                actual: shape.to_vec(),
            });
        }
        if let Some(&l) = batch.lengths.iter().find(|&&l| l == 0 || l > shape[1]) {
            return Err(Error::InvalidArgument(format!(
                "sequence length {l} outside 1..={}",
                shape[1]
            )));
        }
        let e = self.extra_dims();
        match (e, extras) {
            (0, None) => {}
            (0, Some(t)) if t.is_empty() => {}
            (e, Some(t)) if t.shape() == [b, e] => {}
            (e, t) => {
                return Err(Error::ShapeMismatch {
                    expected: vec![b, e],
                    actual: t.map(|t| t.shape().to_vec()).unwrap_or_default(),
                })
            }
        }
        Ok(b)
    }

    fn sequence<'a>(&self, batch: &'a PaddedBatch, b: usize) -> &'a [f64] {
        let n = batch.padded_len();
        let f = self.arch.input_dim;
        &batch.data.data()[b * n * f..(b + 1) * n * f]
    }

    fn extras_slice<'a>(extras: Option<&'a Tensor>) -> &'a [f64] {
        extras.map(Tensor::data).unwrap_or(&[])
    }

    /// Evaluation-mode probabilities (running batch-norm statistics, no
    /// dropout). Safe to call concurrently.
    pub fn predict(&self, batch: &PaddedBatch, extras: Option<&Tensor>) -> Result<Vec<f64>> {
        let b = self.check_inputs(batch, extras)?;
        let feats: Vec<f64> = (0..b)
            .into_par_iter()
            .map(|i| {
                self.stack
                    .forward(self.sequence(batch, i), batch.lengths[i])
                    .0
            })
            .collect::<Vec<_>>()
            .concat();
        let logits = self.head.logits_eval(&feats, Self::extras_slice(extras), b);
        Ok(logits.into_iter().map(sigmoid).collect())
    }

    /// Training-mode forward pass. Activations are kept for
    /// [`backward`](Self::backward); dropout is active only when `rng` is
    /// given.
    pub fn forward_train(
        &mut self,
        batch: &PaddedBatch,
        extras: Option<&Tensor>,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<f64>> {
        let b = self.check_inputs(batch, extras)?;
        let (feats, traces): (Vec<Vec<f64>>, Vec<StackTrace>) = (0..b)
            .into_par_iter()
            .map(|i| {
                self.stack
                    .forward(self.sequence(batch, i), batch.lengths[i])
            })
            .unzip();
        let feats = feats.concat();
        let (logits, head) = self
            .head
            .logits_train(&feats, Self::extras_slice(extras), b, rng);
        let probs: Vec<f64> = logits.into_iter().map(sigmoid).collect();
        self.pending = Some(Pending {
            traces,
            head,
            probs: probs.clone(),
        });
        self.grads_ready = false;
        Ok(probs)
    }

    /// Replaces all gradients with those of a loss whose derivative with
    /// respect to the last training outputs is `dprobs`.
    pub fn backward(&mut self, dprobs: &[f64]) -> Result<()> {
        let pending = self.pending.take().ok_or_else(|| {
            Error::InvalidArgument("backward requires a training forward pass".into())
        })?;
        if dprobs.len() != pending.probs.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![pending.probs.len()],
                actual: vec![dprobs.len()],
            });
        }
        self.zero_grad();
        let dlogits: Vec<f64> = pending
            .probs
            .iter()
            .zip(dprobs)
            .map(|(p, g)| g * p * (1.0 - p))
            .collect();
        let dfeats = self.head.backward(&pending.head, &dlogits);
        let w = self.stack.output_dim();
        for (i, trace) in pending.traces.iter().enumerate() {
            self.stack.backward(trace, &dfeats[i * w..(i + 1) * w]);
        }
        self.grads_ready = true;
        Ok(())
    }

    /// Applies the optimizer to the gradients of the last backward pass.
    pub fn step(&mut self, opt: &mut Optimizer) -> Result<()> {
        if !self.grads_ready {
            return Err(Error::StepBeforeBackward);
        }
        opt.step(self);
        self.grads_ready = false;
        Ok(())
    }

    /// One forward, backward and update on a batch. Returns the batch loss.
    pub fn train_batch(
        &mut self,
        batch: &PaddedBatch,
        extras: Option<&Tensor>,
        targets: &[f64],
        p1: f64,
        opt: &mut Optimizer,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<f64> {
        let probs = self.forward_train(batch, extras, rng)?;
        let (loss, grad) = weighted_bce(&probs, targets, p1)?;
        self.backward(&grad)?;
        self.step(opt)?;
        Ok(loss)
    }

    /// Copies every parameter (including buffers) from `other`. Layouts must
    /// match.
    pub fn load_parameters_from(&mut self, other: &Classifier) -> Result<()> {
        other.arch.ensure_matches(&self.arch)?;
        let mut values = Vec::new();
        other.visit("", &mut |_, p| values.push(p.value.clone()));
        let mut it = values.into_iter();
        self.visit_mut("", &mut |_, p| {
            p.value = it.next().expect("matching layouts")
        });
        Ok(())
    }
}

impl Module for Classifier {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        self.stack.visit(&param::join(prefix, "stack"), f);
        self.head.visit(&param::join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        self.stack.visit_mut(&param::join(prefix, "stack"), f);
        self.head.visit_mut(&param::join(prefix, "head"), f);
    }
}
