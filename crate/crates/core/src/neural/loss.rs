use crate::error::{Error, Result};

/// Predictions are clamped to `[EPS, 1 - EPS]` before taking logarithms.
pub const EPS: f64 = 1e-12;

/// Class weights `(w0, w1) = (p1, 1 - p1)` for a class-1 prior `p1`.
pub fn class_weights(p1: f64) -> Result<(f64, f64)> {
    if !(p1 > 0.0 && p1 < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "class-1 prior must lie in (0, 1), got {p1}"
        )));
    }
    Ok((p1, 1.0 - p1))
}

/// Weighted binary cross-entropy for a single prediction.
pub fn weighted_bce_single(pred: f64, target: f64, p1: f64) -> Result<f64> {
    let (w0, w1) = class_weights(p1)?;
    let p = pred.clamp(EPS, 1.0 - EPS);
    Ok(if target >= 0.5 {
        -w1 * p.ln()
    } else {
        -w0 * (1.0 - p).ln()
    })
}

/// Mean weighted BCE over a batch and its gradient with respect to each
/// (clamped) prediction.
pub fn weighted_bce(preds: &[f64], targets: &[f64], p1: f64) -> Result<(f64, Vec<f64>)> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch {
            expected: vec![targets.len()],
            actual: vec![preds.len()],
        });
    }
    if let Some(t) = targets.iter().find(|&&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidArgument(format!("target {t} is not 0 or 1")));
    }
    let (w0, w1) = class_weights(p1)?;
    let n = preds.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(preds.len());
    for (&pred, &y) in preds.iter().zip(targets) {
        let p = pred.clamp(EPS, 1.0 - EPS);
        if y == 1.0 {
            loss -= w1 * p.ln();
            grad.push(-w1 / p / n);
        } else {
            loss -= w0 * (1.0 - p).ln();
            grad.push(w0 / (1.0 - p) / n);
        }
    }
    Ok((loss / n, grad))
}
