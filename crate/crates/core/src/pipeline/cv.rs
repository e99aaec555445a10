use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{compute_metrics, imbalance_flag, Metrics};
use super::{class_prior, finetune, train_from_scratch, Normalizer, Sample, Trained};
use crate::corpus::FoldPlan;
use crate::error::{Error, Result};
use crate::neural::{Architecture, Classifier, FineTuneArch, TrainConfig};

/// How each fold's model is built and trained.
#[derive(Debug, Clone)]
pub struct CvSetup {
    /// Stack and head layout used when there is no pretrained model.
    pub arch: Architecture,
    pub finetune: FineTuneArch,
    pub train: TrainConfig,
    pub threshold: f64,
    /// Pretrained model whose last layer is replaced in every fold.
    pub init: Option<Classifier>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub fold: usize,
    pub probability: f64,
    pub label: f64,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub fold: usize,
    pub metrics: Metrics,
    pub trained: Trained,
    pub predictions: Vec<Prediction>,
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub folds: Vec<FoldResult>,
    pub mean: Metrics,
    pub sd: Metrics,
    /// Imbalance of the full label set (minority:majority below 4:6).
    pub imbalanced: bool,
}

fn fold_split<'a>(
    samples: &'a [Sample],
    plan: &FoldPlan,
    fold: usize,
) -> Result<(Vec<&'a Sample>, Vec<&'a Sample>)> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        match plan.assignments.get(&s.id) {
            Some(&f) if f == fold => test.push(s),
            Some(_) => train.push(s),
            None => return Err(Error::UnknownSpeech(s.id.clone())),
        }
    }
    Ok((train, test))
}

/// Standardization statistics fold `fold` would use (training folds only;
/// the inner validation carve-out is not applied here).
pub fn fold_normalizer(
    samples: &[Sample],
    plan: &FoldPlan,
    fold: usize,
    with_extras: bool,
) -> Result<Normalizer> {
    let (train, _) = fold_split(samples, plan, fold)?;
    Normalizer::fit(&train, with_extras)
}

/// Class-1 prior of the training folds of `fold`.
pub fn fold_prior(samples: &[Sample], plan: &FoldPlan, fold: usize) -> Result<f64> {
    let (train, _) = fold_split(samples, plan, fold)?;
    class_prior(&train.iter().map(|s| s.label).collect::<Vec<_>>())
}

/// k-fold cross-validation. Each fold fine-tunes (or trains from scratch)
/// on the other folds and is scored on its own; folds run in parallel.
pub fn crossvalidate(samples: &[Sample], plan: &FoldPlan, setup: &CvSetup) -> Result<CvResult> {
    if samples.len() != plan.assignments.len() {
        return Err(Error::InvalidArgument(format!(
            "fold plan covers {} ids but {} samples were given",
            plan.assignments.len(),
            samples.len()
        )));
    }
    let folds: Vec<FoldResult> = (0..plan.k)
        .into_par_iter()
        .map(|fold| run_fold(samples, plan, setup, fold))
        .collect::<Result<_>>()?;
    let all: Vec<Metrics> = folds.iter().map(|f| f.metrics).collect();
    let labels: Vec<u8> = samples.iter().map(|s| u8::from(s.label >= 0.5)).collect();
    Ok(CvResult {
        mean: Metrics::mean(&all)?,
        sd: Metrics::sd(&all)?,
        imbalanced: imbalance_flag(&labels),
        folds,
    })
}

fn run_fold(
    samples: &[Sample],
    plan: &FoldPlan,
    setup: &CvSetup,
    fold: usize,
) -> Result<FoldResult> {
    let (train, test) = fold_split(samples, plan, fold)?;
    let mut cfg = setup.train;
    cfg.seed = cfg.seed.wrapping_add(fold as u64);
    let trained = match &setup.init {
        Some(base) => finetune(base, &train, setup.finetune, &cfg)?,
        None => train_from_scratch(setup.arch, &train, setup.finetune, &cfg)?,
    };
    let probs = trained.predict(&test)?;
    let targets: Vec<f64> = test.iter().map(|s| s.label).collect();
    let metrics = compute_metrics(&probs, &targets, setup.threshold)?;
    if metrics.partial {
        log::warn!(
            "fold {fold}: some per-class terms undefined (single-class test fold or prediction)"
        );
    }
    let predictions = test
        .iter()
        .zip(&probs)
        .map(|(s, &p)| Prediction {
            id: s.id.clone(),
            fold,
            probability: p,
            label: s.label,
        })
        .collect();
    Ok(FoldResult {
        fold,
        metrics,
        trained,
        predictions,
    })
}
