use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cv::{CvResult, Prediction};
use super::metrics::Metrics;
use crate::error::Result;

/// One line of `results.csv`. `fold` is the fold index, `mean` or `sd`.
/// Undefined macro terms are written as empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub category: String,
    pub fold: String,
    pub acc: f64,
    pub rec: Option<f64>,
    pub prec: Option<f64>,
    pub f1: Option<f64>,
    pub imbalanced: bool,
    pub partial: bool,
}

impl ResultRow {
    pub fn new(category: &str, fold: impl Into<String>, m: &Metrics, imbalanced: bool) -> Self {
        Self {
            category: category.to_string(),
            fold: fold.into(),
            acc: m.accuracy,
            rec: m.recall,
            prec: m.precision,
            f1: m.f1,
            imbalanced,
            partial: m.partial,
        }
    }

    /// Per-fold rows followed by the `mean` and `sd` rows.
    pub fn from_cv(category: &str, cv: &CvResult) -> Vec<Self> {
        let mut rows: Vec<Self> = cv
            .folds
            .iter()
            .map(|f| Self::new(category, f.fold.to_string(), &f.metrics, cv.imbalanced))
            .collect();
        rows.push(Self::new(category, "mean", &cv.mean, cv.imbalanced));
        rows.push(Self::new(category, "sd", &cv.sd, cv.imbalanced));
        rows
    }

    pub fn metrics(&self) -> Metrics {
        Metrics {
            accuracy: self.acc,
            recall: self.rec,
            precision: self.prec,
            f1: self.f1,
            partial: self.partial,
        }
    }
}

pub fn write_results_csv(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv(path: &Path) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_predictions_csv(
    path: &Path,
    category: &str,
    predictions: &[Prediction],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["category", "id", "fold", "probability", "label"])?;
    for p in predictions {
        w.write_record([
            category.to_string(),
            p.id.clone(),
            p.fold.to_string(),
            p.probability.to_string(),
            p.label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
