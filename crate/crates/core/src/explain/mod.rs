//! Group-level LIME: perturb a sample by switching feature groups off, fit
//! a kernel-weighted linear surrogate on the mask bits, and aggregate the
//! local coefficients into global importance scores.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contour::{FeatureGroup, FeatureInfo};
use crate::error::{Error, Result};
use crate::fluency::FluencyVector;
use crate::neural::Classifier;
use crate::pipeline::{predict_inputs, ModelInput};

/// Masks are enumerated exhaustively up to this many groups.
pub const MAX_EXACT_GROUPS: usize = 12;

/// Presence bits, one per feature group.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupMask {
    pub bits: Vec<bool>,
}

impl GroupMask {
    pub fn all_on(d: usize) -> Self {
        Self {
            bits: vec![true; d],
        }
    }

    /// Bit `j` is bit `j` of `code`.
    pub fn from_code(code: u64, d: usize) -> Self {
        Self {
            bits: (0..d).map(|j| (code >> j) & 1 == 1).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Hamming distance to the all-ones mask.
    pub fn zeros(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| f64::from(u8::from(b))).collect()
    }

    pub fn to_bit_string(&self) -> String {
        self.bits
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect()
    }
}

/// Maps each contour column (and the fluency inputs) to one of `d` groups.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupAssignment {
    pub groups: Vec<FeatureGroup>,
    columns: Vec<usize>,
    fluency: Option<usize>,
}

impl GroupAssignment {
    /// Every column must belong to one of `groups`; fluency inputs map to
    /// the `fluency` group when it is listed.
    pub fn new(features: &[FeatureInfo], groups: &[FeatureGroup]) -> Result<Self> {
        let columns = features
            .iter()
            .enumerate()
            .map(|(c, info)| {
                groups
                    .iter()
                    .position(|&g| g == info.group && g != FeatureGroup::Fluency)
                    .ok_or(Error::UnassignedFeature(c))
            })
            .collect::<Result<Vec<_>>>()?;
        let fluency = groups.iter().position(|&g| g == FeatureGroup::Fluency);
        Ok(Self {
            groups: groups.to_vec(),
            columns,
            fluency,
        })
    }

    pub fn d(&self) -> usize {
        self.groups.len()
    }

    pub fn group_names(&self) -> Vec<String> {
        self.groups.iter().map(|g| g.name().to_string()).collect()
    }

    /// Zeros every column of a switched-off group across all windows, and
    /// the fluency inputs when the fluency group is off. Topic inputs are
    /// never touched.
    pub fn perturb(&self, input: &ModelInput, mask: &GroupMask) -> Result<ModelInput> {
        if mask.len() != self.d() {
            return Err(Error::ShapeMismatch {
                expected: vec![self.d()],
                actual: vec![mask.len()],
            });
        }
        if input.contour.row_len() != self.columns.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![input.contour.rows(), self.columns.len()],
                actual: input.contour.shape().to_vec(),
            });
        }
        let mut out = input.clone();
        let off: Vec<usize> = (0..self.columns.len())
            .filter(|&c| !mask.bits[self.columns[c]])
            .collect();
        if !off.is_empty() {
            for t in 0..out.contour.rows() {
                let row = out.contour.row_mut(t);
                for &c in &off {
                    row[c] = 0.0;
                }
            }
        }
        if let Some(g) = self.fluency {
            if !mask.bits[g] && !out.extras.is_empty() {
                let n = FluencyVector::DIM.min(out.extras.len());
                out.extras[..n].iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(out)
    }
}

/// `σ = 0.75·√d`.
pub fn kernel_width(d: usize) -> f64 {
    0.75 * (d as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum KernelForm {
    /// `exp(-D²/σ²)`
    #[default]
    Squared,
    /// `exp(-D/σ)`
    Linear,
}

/// Kernel weight of `mask` relative to the unperturbed sample, with `D` the
/// Hamming distance to all-ones.
pub fn kernel_weight(mask: &GroupMask, d: usize) -> f64 {
    kernel_weight_with(mask, d, KernelForm::Squared)
}

pub fn kernel_weight_with(mask: &GroupMask, d: usize, form: KernelForm) -> f64 {
    let dist = mask.zeros() as f64;
    let sigma = kernel_width(d);
    match form {
        KernelForm::Squared => (-(dist * dist) / (sigma * sigma)).exp(),
        KernelForm::Linear => (-dist / sigma).exp(),
    }
}

/// What the surrogate regresses on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Target {
    #[default]
    Probability,
    Logit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplainConfig {
    pub kernel: KernelForm,
    pub target: Target,
    /// Mask count when `d` exceeds [`MAX_EXACT_GROUPS`].
    pub samples: usize,
    pub seed: u64,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        Self {
            kernel: KernelForm::Squared,
            target: Target::Probability,
            samples: 4096,
            seed: 0,
        }
    }
}

/// All `2^d` masks, or for large `d` the all-ones mask plus random draws.
pub fn masks(d: usize, cfg: &ExplainConfig) -> Result<Vec<GroupMask>> {
    if d == 0 {
        return Err(Error::InvalidArgument(
            "need at least one feature group".into(),
        ));
    }
    if d <= MAX_EXACT_GROUPS {
        return Ok((0..1u64 << d).map(|c| GroupMask::from_code(c, d)).collect());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut out = vec![GroupMask::all_on(d)];
    while out.len() < cfg.samples.max(d + 2) {
        out.push(GroupMask {
            bits: (0..d).map(|_| rng.random::<bool>()).collect(),
        });
    }
    Ok(out)
}

/// Weighted least squares `y ≈ b + X·w` solved through an SVD, which gives
/// the minimum-norm solution when the design is rank deficient.
#[derive(Debug, Clone, PartialEq)]
pub struct WlsFit {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub singular: bool,
}

pub fn weighted_least_squares(x: &[Vec<f64>], y: &[f64], w: &[f64]) -> Result<WlsFit> {
    let n = x.len();
    if n == 0 || y.len() != n || w.len() != n {
        return Err(Error::InvalidArgument(
            "regression inputs must be non-empty and equal length".into(),
        ));
    }
    let d = x[0].len();
    if let Some(&bad) = w.iter().find(|&&v| !(v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "regression weight {bad} is not a finite non-negative number"
        )));
    }
    let a = DMatrix::from_fn(n, d + 1, |i, j| {
        let s = w[i].sqrt();
        if j == 0 {
            s
        } else {
            s * x[i][j - 1]
        }
    });
    let b = DVector::from_fn(n, |i, _| w[i].sqrt() * y[i]);
    let svd = a.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * f64::EPSILON * (n.max(d + 1) as f64);
    let rank = svd.singular_values.iter().filter(|&&s| s > eps).count();
    let beta = svd
        .solve(&b, eps)
        .map_err(|e| Error::InvalidArgument(format!("least squares failed: {e}")))?;
    Ok(WlsFit {
        intercept: beta[0],
        coefficients: beta.iter().skip(1).copied().collect(),
        singular: rank < d + 1,
    })
}

/// One perturbation query: mask, kernel weight and model output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskQuery {
    pub mask: GroupMask,
    pub weight: f64,
    pub output: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LocalExplanation {
    pub sample_id: String,
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    /// The weighted design was rank deficient; coefficients are the
    /// minimum-norm solution.
    pub singular: bool,
    pub queries: Vec<MaskQuery>,
}

/// Fits the local surrogate for a black box evaluated on a list of masks.
pub fn explain_black_box<F>(
    sample_id: &str,
    d: usize,
    cfg: &ExplainConfig,
    f: F,
) -> Result<LocalExplanation>
where
    F: FnOnce(&[GroupMask]) -> Result<Vec<f64>>,
{
    let ms = masks(d, cfg)?;
    let outputs = f(&ms)?;
    if outputs.len() != ms.len() {
        return Err(Error::ShapeMismatch {
            expected: vec![ms.len()],
            actual: vec![outputs.len()],
        });
    }
    let targets: Vec<f64> = match cfg.target {
        Target::Probability => outputs.clone(),
        Target::Logit => outputs
            .iter()
            .map(|&p| {
                let p = p.clamp(crate::neural::EPS, 1.0 - crate::neural::EPS);
                (p / (1.0 - p)).ln()
            })
            .collect(),
    };
    let weights: Vec<f64> = ms
        .iter()
        .map(|m| kernel_weight_with(m, d, cfg.kernel))
        .collect();
    let x: Vec<Vec<f64>> = ms.iter().map(GroupMask::as_f64).collect();
    let fit = weighted_least_squares(&x, &targets, &weights)?;
    if fit.singular {
        log::warn!("{sample_id}: singular surrogate design, using minimum-norm solution");
    }
    let queries = ms
        .into_iter()
        .zip(weights)
        .zip(outputs)
        .map(|((mask, weight), output)| MaskQuery {
            mask,
            weight,
            output,
        })
        .collect();
    Ok(LocalExplanation {
        sample_id: sample_id.to_string(),
        coefficients: fit.coefficients,
        intercept: fit.intercept,
        singular: fit.singular,
        queries,
    })
}

/// Local explanation of `model` around one prepared (standardized) input.
pub fn local_explain(
    model: &Classifier,
    sample_id: &str,
    input: &ModelInput,
    assign: &GroupAssignment,
    cfg: &ExplainConfig,
) -> Result<LocalExplanation> {
    explain_black_box(sample_id, assign.d(), cfg, |ms| {
        let perturbed = ms
            .iter()
            .map(|m| assign.perturb(input, m))
            .collect::<Result<Vec<_>>>()?;
        predict_inputs(model, &perturbed)
    })
}

/// `W ∈ R^{n×d}`: one row of local coefficients per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ImportanceMatrix {
    pub groups: Vec<String>,
    pub sample_ids: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl ImportanceMatrix {
    pub fn from_explanations(groups: Vec<String>, locals: &[LocalExplanation]) -> Self {
        Self {
            groups,
            sample_ids: locals.iter().map(|l| l.sample_id.clone()).collect(),
            rows: locals.iter().map(|l| l.coefficients.clone()).collect(),
        }
    }
}

/// Explains every input in parallel and stacks the coefficients.
pub fn explain_dataset(
    model: &Classifier,
    ids: &[String],
    inputs: &[ModelInput],
    assign: &GroupAssignment,
    cfg: &ExplainConfig,
) -> Result<(ImportanceMatrix, Vec<LocalExplanation>)> {
    let locals: Vec<LocalExplanation> = ids
        .par_iter()
        .zip(inputs.par_iter())
        .map(|(id, x)| local_explain(model, id, x, assign, cfg))
        .collect::<Result<_>>()?;
    Ok((
        ImportanceMatrix::from_explanations(assign.group_names(), &locals),
        locals,
    ))
}

/// `I_j = sqrt(Σ_i |W_ij|)`.
pub fn global_importance(w: &ImportanceMatrix) -> Result<Vec<f64>> {
    if w.rows.is_empty() {
        return Err(Error::Empty("importance matrix has no rows".into()));
    }
    let d = w.groups.len();
    if let Some(r) = w.rows.iter().find(|r| r.len() != d) {
        return Err(Error::ShapeMismatch {
            expected: vec![d],
            actual: vec![r.len()],
        });
    }
    Ok((0..d)
        .map(|j| w.rows.iter().map(|r| r[j].abs()).sum::<f64>().sqrt())
        .collect())
}

/// One line of the importance ranking.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedGroup {
    pub category: String,
    pub group: String,
    pub importance: f64,
    pub rank: usize,
}

/// Groups by descending importance (ties keep group order), ranks from 1.
pub fn rank_groups(category: &str, groups: &[String], scores: &[f64]) -> Vec<RankedGroup> {
    let mut idx: Vec<usize> = (0..groups.len()).collect();
    idx.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    idx.into_iter()
        .enumerate()
        .map(|(r, j)| RankedGroup {
            category: category.to_string(),
            group: groups[j].clone(),
            importance: scores[j],
            rank: r + 1,
        })
        .collect()
}

pub fn write_importance_csv(path: &Path, rows: &[RankedGroup]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_importance_csv(path: &Path) -> Result<Vec<RankedGroup>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Audit trail of one local explanation: mask bits, weight, model output.
pub fn write_local_csv(path: &Path, local: &LocalExplanation, groups: &[String]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header: Vec<String> = groups.to_vec();
    header.extend(["weight".to_string(), "output".to_string()]);
    w.write_record(&header)?;
    for q in &local.queries {
        let mut rec: Vec<String> = q
            .mask
            .bits
            .iter()
            .map(|&b| u8::from(b).to_string())
            .collect();
        rec.push(q.weight.to_string());
        rec.push(q.output.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
