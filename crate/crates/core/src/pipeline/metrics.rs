use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Counts for the positive class (label 1) against predictions.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

impl Confusion {
    pub fn from_labels(predicted: &[u8], actual: &[u8]) -> Self {
        let mut c = Confusion::default();
        for (&p, &a) in predicted.iter().zip(actual) {
            match (p, a) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.fn_ + self.tn
    }
}

/// Accuracy plus macro-averaged precision, recall and F1 over the two
/// classes. A per-class term whose denominator is zero is undefined and left
/// out of the macro average; `partial` records that this happened. A macro
/// term with no defined class is `None`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub recall: Option<f64>,
    pub precision: Option<f64>,
    pub f1: Option<f64>,
    pub partial: bool,
}

fn ratio(num: usize, den: usize) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64)
}

impl Metrics {
    pub fn from_confusion(c: &Confusion) -> Result<Self> {
        if c.total() == 0 {
            return Err(Error::Empty("no predictions to score".into()));
        }
        // class 1 then class 0
        let prec = [ratio(c.tp, c.tp + c.fp), ratio(c.tn, c.tn + c.fn_)];
        let rec = [ratio(c.tp, c.tp + c.fn_), ratio(c.tn, c.tn + c.fp)];
        let f1: Vec<Option<f64>> = prec
            .iter()
            .zip(&rec)
            .map(|(p, r)| match (p, r) {
                (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
                (Some(_), Some(_)) => Some(0.0),
                _ => None,
            })
            .collect();
        let partial = prec.iter().chain(&rec).chain(&f1).any(Option::is_none);
        Ok(Self {
            accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
            recall: mean_defined(&rec),
            precision: mean_defined(&prec),
            f1: mean_defined(&f1),
            partial,
        })
    }

    /// Unweighted mean over folds; undefined entries are skipped.
    pub fn mean(all: &[Metrics]) -> Result<Self> {
        if all.is_empty() {
            return Err(Error::Empty("no fold metrics to average".into()));
        }
        let n = all.len() as f64;
        let collect =
            |f: fn(&Metrics) -> Option<f64>| mean_defined(&all.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            accuracy: all.iter().map(|m| m.accuracy).sum::<f64>() / n,
            recall: collect(|m| m.recall),
            precision: collect(|m| m.precision),
            f1: collect(|m| m.f1),
            partial: all.iter().any(|m| m.partial),
        })
    }

    /// Population standard deviation over folds, same skipping rule.
    pub fn sd(all: &[Metrics]) -> Result<Self> {
        let mean = Self::mean(all)?;
        let sd_of = |vals: Vec<f64>, m: Option<f64>| -> Option<f64> {
            let m = m?;
            if vals.is_empty() {
                return None;
            }
            Some((vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt())
        };
        let pick = |f: fn(&Metrics) -> Option<f64>| all.iter().filter_map(f).collect::<Vec<_>>();
        Ok(Self {
            accuracy: sd_of(
                all.iter().map(|m| m.accuracy).collect(),
                Some(mean.accuracy),
            )
            .unwrap_or(0.0),
            recall: sd_of(pick(|m| m.recall), mean.recall),
            precision: sd_of(pick(|m| m.precision), mean.precision),
            f1: sd_of(pick(|m| m.f1), mean.f1),
            partial: mean.partial,
        })
    }
}

/// Thresholds probabilities (`p >= threshold` is class 1) and scores them.
pub fn compute_metrics(probs: &[f64], targets: &[f64], threshold: f64) -> Result<Metrics> {
    if probs.len() != targets.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![targets.len()],
            actual: vec![probs.len()],
        });
    }
    let predicted: Vec<u8> = probs.iter().map(|&p| u8::from(p >= threshold)).collect();
    let actual: Vec<u8> = targets.iter().map(|&t| u8::from(t >= 0.5)).collect();
    Metrics::from_confusion(&Confusion::from_labels(&predicted, &actual))
}

/// True when the minority/majority class ratio is strictly below 4:6.
pub fn imbalance_flag(labels: &[u8]) -> bool {
    let ones = labels.iter().filter(|&&l| l == 1).count();
    let zeros = labels.len() - ones;
    let (minority, majority) = (ones.min(zeros), ones.max(zeros));
    6 * minority < 4 * majority
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(tp: usize, fp: usize, fn_: usize, tn: usize) -> (Vec<f64>, Vec<f64>) {
        let mut p = Vec::new();
        let mut t = Vec::new();
        for (n, pv, tv) in [
            (tp, 1.0, 1.0),
            (fp, 1.0, 0.0),
            (fn_, 0.0, 1.0),
            (tn, 0.0, 0.0),
        ] {
            p.extend(std::iter::repeat_n(pv, n));
            t.extend(std::iter::repeat_n(tv, n));
        }
        (p, t)
    }

    #[test]
    fn confusion_arithmetic() {
        let (p, t) = labels(7, 3, 2, 8);
        let m = compute_metrics(&p, &t, 0.5).unwrap();
        assert_eq!(m.accuracy, 0.75);
        let c = Confusion {
            tp: 7,
            fp: 3,
            fn_: 2,
            tn: 8,
        };
        assert_eq!(ratio(c.tp, c.tp + c.fp), Some(0.7));
        assert_eq!(ratio(c.tp, c.tp + c.fn_), Some(7.0 / 9.0));
        let prec = (0.7 + 0.8) / 2.0;
        let rec = (7.0 / 9.0 + 8.0 / 11.0) / 2.0;
        assert!((m.precision.unwrap() - prec).abs() < 1e-15);
        assert!((m.recall.unwrap() - rec).abs() < 1e-15);
        assert!(!m.partial);
    }

    #[test]
    fn perfect_predictions() {
        let (p, t) = labels(4, 0, 0, 6);
        let m = compute_metrics(&p, &t, 0.5).unwrap();
        assert_eq!((m.accuracy, m.f1), (1.0, Some(1.0)));
    }

    #[test]
    fn all_positive_on_balanced_set() {
        let (p, t) = labels(5, 5, 0, 0);
        let m = compute_metrics(&p, &t, 0.5).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.recall, Some(0.5));
        // class-0 precision has no predicted negatives
        assert!(m.partial);
        assert_eq!(m.precision, Some(0.5));
    }

    #[test]
    fn single_class_fold_is_partial() {
        let m = compute_metrics(&[0.9, 0.2], &[1.0, 1.0], 0.5).unwrap();
        assert!(m.partial);
        assert_eq!(m.accuracy, 0.5);
        assert_eq!(m.recall, Some(0.5));
    }

    #[test]
    fn empty_is_rejected() {
        assert!(compute_metrics(&[], &[], 0.5).is_err());
    }

    #[test]
    fn imbalance_rule() {
        let make = |ones: usize, zeros: usize| {
            let mut v = vec![1u8; ones];
            v.extend(vec![0u8; zeros]);
            v
        };
        assert!(imbalance_flag(&make(30, 70)));
        assert!(!imbalance_flag(&make(45, 55)));
        assert!(!imbalance_flag(&make(40, 60)));
        assert!(imbalance_flag(&make(39, 61)));
        assert!(imbalance_flag(&make(0, 5)));
        assert_eq!(imbalance_flag(&make(70, 30)), imbalance_flag(&make(30, 70)));
    }

    #[test]
    fn fold_mean_skips_undefined() {
        let a = Metrics {
            accuracy: 0.5,
            recall: Some(0.4),
            precision: None,
            f1: Some(0.2),
            partial: true,
        };
        let b = Metrics {
            accuracy: 1.0,
            recall: Some(0.6),
            precision: Some(0.9),
            f1: Some(0.4),
            partial: false,
        };
        let m = Metrics::mean(&[a, b]).unwrap();
        assert_eq!(m.accuracy, 0.75);
        assert_eq!(m.precision, Some(0.9));
        assert!((m.f1.unwrap() - 0.3).abs() < 1e-15);
        assert!(m.partial);
        let s = Metrics::sd(&[a, b]).unwrap();
        assert!((s.accuracy - 0.25).abs() < 1e-15);
        assert_eq!(s.precision, Some(0.0));
    }
}
