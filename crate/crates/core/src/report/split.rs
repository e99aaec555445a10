//! Median-split group-mean differences per feature and subgroup.

use serde::{Deserialize, Serialize};

use crate::contour::FeatureInfo;
use crate::corpus::median;
use crate::error::{Error, Result};
use crate::neural::Tensor;

/// How a contour is reduced to one value per feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Median,
}

/// Per-feature reduction over the windows of one contour.
pub fn reduce_contour(contour: &Tensor, how: Reduction) -> Vec<f64> {
    let f = contour.row_len();
    (0..f)
        .map(|j| {
            let col: Vec<f64> = (0..contour.rows()).map(|t| contour.row(t)[j]).collect();
            match how {
                Reduction::Mean => col.iter().sum::<f64>() / col.len() as f64,
                Reduction::Median => median(&col),
            }
        })
        .collect()
}

/// `M_high - M_low` for one feature or subgroup; `None` when either group
/// is empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDiff {
    pub category: String,
    pub feature: String,
    pub diff: Option<f64>,
}

/// Difference of group means per column, with `high[i]` selecting row `i`
/// into the high group.
pub fn group_mean_diffs(values: &[Vec<f64>], high: &[bool]) -> Result<Vec<Option<f64>>> {
    if values.len() != high.len() || values.is_empty() {
        return Err(Error::InvalidArgument(
            "values and group flags must be non-empty and aligned".into(),
        ));
    }
    let f = values[0].len();
    let nh = high.iter().filter(|&&h| h).count();
    let nl = high.len() - nh;
    if nh == 0 || nl == 0 {
        return Ok(vec![None; f]);
    }
    Ok((0..f)
        .map(|j| {
            let (mut sh, mut sl) = (0.0, 0.0);
            for (row, &h) in values.iter().zip(high) {
                if h {
                    sh += row[j];
                } else {
                    sl += row[j];
                }
            }
            Some(sh / nh as f64 - sl / nl as f64)
        })
        .collect())
}

/// Splits speeches at the category median of their rating counts (count at
/// or above the median is high) and returns per-feature differences.
pub fn median_split_diffs(
    category: &str,
    features: &[FeatureInfo],
    per_speech: &[Vec<f64>],
    counts: &[f64],
) -> Result<Vec<SplitDiff>> {
    if per_speech.len() != counts.len() || counts.is_empty() {
        return Err(Error::InvalidArgument(
            "per-speech values and counts must be non-empty and aligned".into(),
        ));
    }
    if let Some(r) = per_speech.iter().find(|r| r.len() != features.len()) {
        return Err(Error::ShapeMismatch {
            expected: vec![features.len()],
            actual: vec![r.len()],
        });
    }
    let m = median(counts);
    let high: Vec<bool> = counts.iter().map(|&c| c >= m).collect();
    let diffs = group_mean_diffs(per_speech, &high)?;
    if diffs.iter().any(Option::is_none) {
        log::warn!("{category}: degenerate median split, low-rated group is empty");
    }
    Ok(features
        .iter()
        .zip(diffs)
        .map(|(f, diff)| SplitDiff {
            category: category.to_string(),
            feature: f.id.clone(),
            diff,
        })
        .collect())
}

/// Averages feature diffs within each subgroup, in order of first
/// appearance. A subgroup with any undefined member is undefined.
pub fn aggregate_subgroups(
    diffs: &[SplitDiff],
    features: &[FeatureInfo],
) -> Result<Vec<SplitDiff>> {
    let mut order: Vec<String> = Vec::new();
    let mut sums: Vec<(Option<f64>, usize)> = Vec::new();
    for d in diffs {
        let info = features
            .iter()
            .find(|f| f.id == d.feature)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown feature `{}`", d.feature)))?;
        let k = match order.iter().position(|s| *s == info.subgroup) {
            Some(k) => k,
            None => {
                order.push(info.subgroup.clone());
                sums.push((Some(0.0), 0));
                order.len() - 1
            }
        };
        sums[k].0 = sums[k].0.zip(d.diff).map(|(a, b)| a + b);
        sums[k].1 += 1;
    }
    let category = diffs
        .first()
        .map(|d| d.category.clone())
        .unwrap_or_default();
    Ok(order
        .into_iter()
        .zip(sums)
        .map(|(feature, (s, n))| SplitDiff {
            category: category.clone(),
            feature,
            diff: s.map(|s| s / n as f64),
        })
        .collect())
}
