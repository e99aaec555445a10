//! Experiment orchestration: data preparation, training with early
//! stopping, pretraining, fine-tuning, cross-validation and grid search.
//! Each rating category gets its own independent binary classifier.

mod cv;
mod grid;
mod metrics;
mod results;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use cv::{
    crossvalidate, fold_normalizer, fold_prior, CvResult, CvSetup, FoldResult, Prediction,
};
pub use grid::{grid_configs, grid_search, Grid, GridCell, GridResult};
pub use metrics::{compute_metrics, imbalance_flag, Confusion, Metrics};
pub use results::{read_results_csv, write_predictions_csv, write_results_csv, ResultRow};

use crate::contour::{pad_batch, PaddedBatch, StandardizationStats};
use crate::corpus::Topic;
use crate::error::{Error, Result};
use crate::fluency::FluencyVector;
use crate::neural::{
    weighted_bce, Architecture, Classifier, FineTuneArch, Module, Optimizer, Tensor, TrainConfig,
};

/// Extra head inputs per speech: fluency dimensions followed by the topic
/// one-hot.
pub const EXTRA_DIMS: usize = FluencyVector::DIM + 3;

/// One speech (or auxiliary talk) ready for modelling. Contours are kept
/// raw; standardization happens per training split.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub contour: Tensor,
    pub fluency: Option<[f64; FluencyVector::DIM]>,
    pub topic: Option<Topic>,
    pub label: f64,
}

/// Model-ready input: standardized contour plus the extra head inputs
/// (empty for models without a fine-tune head).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub contour: Tensor,
    pub extras: Vec<f64>,
}

/// Standardization fitted on a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub contour: StandardizationStats,
    /// Present when the model consumes fluency inputs.
    pub fluency: Option<StandardizationStats>,
}

impl Normalizer {
    /// Fits contour statistics on every window of `train`, and fluency
    /// statistics over the training speeches when `with_extras` is set.
    pub fn fit(train: &[&Sample], with_extras: bool) -> Result<Self> {
        let f = train
            .first()
            .map(|s| s.contour.row_len())
            .ok_or_else(|| Error::Empty("no training samples".into()))?;
        let contour = StandardizationStats::fit_rows(
            train
                .iter()
                .flat_map(|s| (0..s.contour.rows()).map(move |t| s.contour.row(t))),
            f,
        )?;
        let fluency = if with_extras {
            require_extras(train)?;
            Some(StandardizationStats::fit_rows(
                train.iter().map(|s| s.fluency.as_ref().unwrap().as_slice()),
                FluencyVector::DIM,
            )?)
        } else {
            None
        };
        Ok(Self { contour, fluency })
    }

    pub fn prepare(&self, s: &Sample) -> Result<ModelInput> {
        if s.contour.row_len() != self.contour.dim() {
            return Err(Error::ShapeMismatch {
                expected: vec![s.contour.rows(), self.contour.dim()],
                actual: s.contour.shape().to_vec(),
            });
        }
        let mut contour = s.contour.clone();
        for t in 0..contour.rows() {
            self.contour.apply_row(contour.row_mut(t));
        }
        let extras = match &self.fluency {
            None => Vec::new(),
            Some(stats) => {
                let (Some(fl), Some(topic)) = (s.fluency, s.topic) else {
                    return Err(Error::MissingFluency(vec![s.id.clone()]));
                };
                let mut e = fl.to_vec();
                stats.apply_row(&mut e);
                e.extend_from_slice(&topic.one_hot());
                e
            }
        };
        Ok(ModelInput { contour, extras })
    }

    pub fn prepare_all(&self, samples: &[&Sample]) -> Result<Vec<ModelInput>> {
        samples.iter().map(|s| self.prepare(s)).collect()
    }
}

/// Every sample must carry a fluency vector and a topic.
pub fn require_extras(samples: &[&Sample]) -> Result<()> {
    let missing: Vec<String> = samples
        .iter()
        .filter(|s| s.fluency.is_none() || s.topic.is_none())
        .map(|s| s.id.clone())
        .collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(Error::MissingFluency(missing))
    }
}

/// Pads inputs to their longest contour.
pub fn batch_inputs(inputs: &[&ModelInput]) -> Result<(PaddedBatch, Option<Tensor>)> {
    let seqs: Vec<&Tensor> = inputs.iter().map(|i| &i.contour).collect();
    let n = seqs.iter().map(|s| s.rows()).max().unwrap_or(0);
    let batch = pad_batch(&seqs, n)?;
    let e = inputs.first().map(|i| i.extras.len()).unwrap_or(0);
    let extras = if e == 0 {
        None
    } else {
        let rows: Vec<Vec<f64>> = inputs.iter().map(|i| i.extras.clone()).collect();
        Some(Tensor::from_rows(&rows, e)?)
    };
    Ok((batch, extras))
}

/// Evaluation-mode probabilities, in input order.
pub fn predict_inputs(model: &Classifier, inputs: &[ModelInput]) -> Result<Vec<f64>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(inputs.len());
    for chunk in inputs.chunks(CHUNK) {
        let refs: Vec<&ModelInput> = chunk.iter().collect();
        let (batch, extras) = batch_inputs(&refs)?;
        out.extend(model.predict(&batch, extras.as_ref())?);
    }
    Ok(out)
}

/// Share of label-1 samples; both classes must be present.
pub fn class_prior(labels: &[f64]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("no training labels".into()));
    }
    let p1 = labels.iter().filter(|&&y| y >= 0.5).count() as f64 / labels.len() as f64;
    if p1 == 0.0 || p1 == 1.0 {
        return Err(Error::SingleClass(format!(
            "all {} labels are {}",
            labels.len(),
            p1
        )));
    }
    Ok(p1)
}

/// Stratified split of indices `0..labels.len()` into (train, validation);
/// roughly `fraction` of each class goes to validation, but each class keeps
/// at least one training example.
pub fn split_validation(labels: &[f64], fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train = Vec::new();
    let mut val = Vec::new();
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..labels.len())
            .filter(|&i| (labels[i] >= 0.5) == (class == 1.0))
            .collect();
        idx.shuffle(&mut rng);
        let k = ((idx.len() as f64 * fraction).round() as usize).min(idx.len().saturating_sub(1));
        val.extend_from_slice(&idx[..k]);
        train.extend_from_slice(&idx[k..]);
    }
    train.sort_unstable();
    val.sort_unstable();
    (train, val)
}

/// Training trajectory summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub p1: f64,
    pub epochs_run: usize,
    /// Epoch (1-based) whose parameters were kept; 0 means the initial ones.
    pub best_epoch: usize,
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
}

/// Mini-batch training with weighted BCE. When `val` is given, training
/// stops after `patience` epochs without validation-loss improvement and
/// the best parameters are restored. Class weights come from the training
/// labels only.
pub fn train(
    model: &mut Classifier,
    inputs: &[ModelInput],
    labels: &[f64],
    val: Option<(&[ModelInput], &[f64])>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if inputs.len() != labels.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![labels.len()],
            actual: vec![inputs.len()],
        });
    }
    let p1 = class_prior(labels)?;
    model.set_dropout(cfg.dropout);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let val_loss_of = |m: &Classifier| -> Result<Option<f64>> {
        match val {
            Some((vi, vl)) if !vi.is_empty() => {
                let p = predict_inputs(m, vi)?;
                Ok(Some(weighted_bce(&p, vl, p1)?.0))
            }
            _ => Ok(None),
        }
    };
    let mut best = val_loss_of(model)?.map(|l| (l, 0usize, model.clone()));
    let mut outcome = TrainOutcome {
        p1,
        epochs_run: 0,
        best_epoch: 0,
        train_loss: Vec::new(),
        val_loss: Vec::new(),
    };
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut batches: Vec<&[usize]> = order.chunks(cfg.batch_size).collect();
        // batch statistics need at least two samples
        if batches.len() > 1 && batches.last().is_some_and(|b| b.len() == 1) {
            batches.pop();
            let n = batches.len();
            let start = (n - 1) * cfg.batch_size;
            batches[n - 1] = &order[start..];
        }
        let mut total = 0.0;
        for b in &batches {
            let refs: Vec<&ModelInput> = b.iter().map(|&i| &inputs[i]).collect();
            let targets: Vec<f64> = b.iter().map(|&i| labels[i]).collect();
            let (batch, extras) = batch_inputs(&refs)?;
            let loss = model.train_batch(
                &batch,
                extras.as_ref(),
                &targets,
                p1,
                &mut opt,
                Some(&mut rng),
            )?;
            total += loss * b.len() as f64;
        }
        outcome.train_loss.push(total / inputs.len() as f64);
        outcome.epochs_run = epoch;
        if let Some(l) = val_loss_of(model)? {
            outcome.val_loss.push(l);
            let (best_loss, best_epoch, _) = best.as_ref().expect("validation present");
            if l < *best_loss {
                best = Some((l, epoch, model.clone()));
            } else if epoch - best_epoch >= cfg.patience.max(1) {
                break;
            }
        }
        if !outcome.train_loss.last().unwrap().is_finite() {
            return Err(Error::InvalidArgument(format!(
                "training diverged at epoch {epoch}"
            )));
        }
    }
    match best {
        Some((_, epoch, params)) => {
            outcome.best_epoch = epoch;
            model.load_parameters_from(&params)?;
        }
        None => outcome.best_epoch = outcome.epochs_run,
    }
    log::debug!(
        "trained {} epochs (kept {}), p1 = {:.4}",
        outcome.epochs_run,
        outcome.best_epoch,
        p1
    );
    Ok(outcome)
}

/// Fits normalization on `samples`, carves a validation split and trains.
fn fit_on(
    model: &mut Classifier,
    samples: &[&Sample],
    with_extras: bool,
    cfg: &TrainConfig,
) -> Result<(Normalizer, TrainOutcome)> {
    let labels: Vec<f64> = samples.iter().map(|s| s.label).collect();
    class_prior(&labels)?;
    let (tr, va) = if cfg.val_fraction > 0.0 {
        split_validation(&labels, cfg.val_fraction, cfg.seed ^ 0x5eed)
    } else {
        ((0..samples.len()).collect(), Vec::new())
    };
    let train_s: Vec<&Sample> = tr.iter().map(|&i| samples[i]).collect();
    let norm = Normalizer::fit(&train_s, with_extras)?;
    let train_x = norm.prepare_all(&train_s)?;
    let train_y: Vec<f64> = tr.iter().map(|&i| labels[i]).collect();
    let val_s: Vec<&Sample> = va.iter().map(|&i| samples[i]).collect();
    let val_x = norm.prepare_all(&val_s)?;
    let val_y: Vec<f64> = va.iter().map(|&i| labels[i]).collect();
    let val = (!va.is_empty()).then_some((val_x.as_slice(), val_y.as_slice()));
    let outcome = train(model, &train_x, &train_y, val, cfg)?;
    Ok((norm, outcome))
}

/// A trained model with the normalization it expects.
#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Classifier,
    pub normalizer: Normalizer,
    pub outcome: TrainOutcome,
}

impl Trained {
    pub fn predict(&self, samples: &[&Sample]) -> Result<Vec<f64>> {
        predict_inputs(&self.model, &self.normalizer.prepare_all(samples)?)
    }
}

/// Trains a fresh classifier with the original linear head on auxiliary
/// data (contours only).
pub fn pretrain(samples: &[&Sample], arch: Architecture, cfg: &TrainConfig) -> Result<Trained> {
    let mut arch = arch;
    arch.finetune = None;
    if let Some(s) = samples.first() {
        if s.contour.row_len() != arch.input_dim {
            return Err(Error::ArchitectureMismatch {
                field: "input_dim".into(),
                expected: arch.input_dim.to_string(),
                found: s.contour.row_len().to_string(),
            });
        }
    }
    let mut model = Classifier::new(arch, cfg.seed)?;
    let (normalizer, outcome) = fit_on(&mut model, samples, false, cfg)?;
    log::info!(
        "pretrained on {} samples, class-1 prior {:.4}",
        samples.len(),
        outcome.p1
    );
    Ok(Trained {
        model,
        normalizer,
        outcome,
    })
}

/// Swaps the last layer of `base` for a fine-tune head and trains the
/// whole model on `samples` with fluency and topic inputs.
pub fn finetune(
    base: &Classifier,
    samples: &[&Sample],
    ft: FineTuneArch,
    cfg: &TrainConfig,
) -> Result<Trained> {
    check_input_dim(base, samples)?;
    require_extras(samples)?;
    let mut model = base.clone().into_finetune(ft, cfg.seed)?;
    let (normalizer, outcome) = fit_on(&mut model, samples, true, cfg)?;
    Ok(Trained {
        model,
        normalizer,
        outcome,
    })
}

/// Same schedule as [`finetune`] but from random initialization.
pub fn train_from_scratch(
    arch: Architecture,
    samples: &[&Sample],
    ft: FineTuneArch,
    cfg: &TrainConfig,
) -> Result<Trained> {
    let base = Classifier::new(
        Architecture {
            finetune: None,
            ..arch
        },
        cfg.seed.wrapping_add(1),
    )?;
    finetune(&base, samples, ft, cfg)
}

fn check_input_dim(model: &Classifier, samples: &[&Sample]) -> Result<()> {
    if let Some(s) = samples
        .iter()
        .find(|s| s.contour.row_len() != model.input_dim())
    {
        return Err(Error::ArchitectureMismatch {
            field: "input_dim".into(),
            expected: s.contour.row_len().to_string(),
            found: model.input_dim().to_string(),
        });
    }
    Ok(())
}

/// Number of trainable scalars; handy for logs.
pub fn parameter_count(model: &Classifier) -> usize {
    model.num_parameters()
}

#[cfg(test)]
mod tests;
