//! Sliding-window complexity contours over a pluggable feature registry.

mod io;
mod registry;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::neural::Tensor;
use crate::textproc::{Token, Tokenizer};

pub use io::{read_contour_csv, read_contour_dir, write_contour_csv, ContourManifest};
pub use registry::{
    compression_ratio, corrected_ttr, default_registry, registry_hash, unigram_entropy, Extractor,
    FeatureGroup, FeatureInfo, FeatureSpec, Registry, SOPHISTICATION_TOP_K,
};

/// A tokenized sentence plus optional external parse metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSentence {
    pub text: String,
    pub tokens: Vec<Token>,
    pub metrics: BTreeMap<String, f64>,
}

impl AnnotatedSentence {
    pub fn new(text: &str, tokenizer: &Tokenizer) -> Self {
        Self {
            text: text.to_string(),
            tokens: tokenizer.tokenize(text),
            metrics: BTreeMap::new(),
        }
    }

    /// Word tokens, excluding hesitation fillers.
    pub fn words(&self) -> impl Iterator<Item = &Token> {
        self.tokens.iter().filter(|t| t.is_word && !t.is_filler)
    }
}

/// Tokenizes sentences and attaches per-sentence annotations when given.
pub fn annotate(
    sentences: &[String],
    annotations: Option<&[BTreeMap<String, f64>]>,
    tokenizer: &Tokenizer,
) -> Vec<AnnotatedSentence> {
    sentences
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut a = AnnotatedSentence::new(s, tokenizer);
            if let Some(m) = annotations.and_then(|ann| ann.get(i)) {
                a.metrics = m.clone();
            }
            a
        })
        .collect()
}

/// A contiguous run of sentences handed to every extractor.
#[derive(Debug, Clone, Copy)]
pub struct Window<'a> {
    pub sentences: &'a [AnnotatedSentence],
}

impl<'a> Window<'a> {
    pub fn words(&self) -> impl Iterator<Item = &'a Token> {
        self.sentences.iter().flat_map(|s| s.words())
    }

    pub fn word_count(&self) -> usize {
        self.words().count()
    }

    pub fn text(&self) -> String {
        self.sentences
            .iter()
            .map(|s| s.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Window size and step, both in sentences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    pub size: usize,
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self { size: 5, step: 1 }
    }
}

impl WindowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.step == 0 {
            return Err(Error::InvalidArgument(format!(
                "window size and step must be >= 1 (got size {}, step {})",
                self.size, self.step
            )));
        }
        Ok(())
    }

    /// Number of windows over `sentences` sentences (at least one).
    pub fn window_count(&self, sentences: usize) -> usize {
        if sentences <= self.size {
            1
        } else {
            (sentences - self.size) / self.step + 1
        }
    }
}

/// Per-speech sequence of window feature vectors, shape `[T, F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexityContour {
    pub speech_id: String,
    pub feature_ids: Vec<String>,
    pub values: Tensor,
}

impl ComplexityContour {
    pub fn new(
        speech_id: impl Into<String>,
        feature_ids: Vec<String>,
        values: Tensor,
    ) -> Result<Self> {
        if values.shape().len() != 2 || values.shape()[1] != feature_ids.len() {
            return Err(Error::ShapeMismatch {
                expected: vec![values.rows(), feature_ids.len()],
                actual: values.shape().to_vec(),
            });
        }
        Ok(Self {
            speech_id: speech_id.into(),
            feature_ids,
            values,
        })
    }

    pub fn len(&self) -> usize {
        self.values.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_features(&self) -> usize {
        self.feature_ids.len()
    }

    /// Column means over windows.
    pub fn column_means(&self) -> Vec<f64> {
        let f = self.num_features();
        let mut m = vec![0.0; f];
        for t in 0..self.len() {
            for (mj, v) in m.iter_mut().zip(self.values.row(t)) {
                *mj += v;
            }
        }
        let n = self.len().max(1) as f64;
        m.iter_mut().for_each(|x| *x /= n);
        m
    }
}

/// Row `t` holds every registered feature over sentences
/// `[t * step, t * step + size)`; fewer sentences than `size` give one
/// window over the whole speech.
pub fn compute_contour(
    speech_id: &str,
    sentences: &[AnnotatedSentence],
    registry: &Registry,
    window: WindowConfig,
) -> Result<ComplexityContour> {
    window.validate()?;
    if sentences.is_empty() {
        return Err(Error::Empty(format!(
            "speech `{speech_id}` has no sentences"
        )));
    }
    let t_count = window.window_count(sentences.len());
    let f = registry.len();
    let mut data = Vec::with_capacity(t_count * f);
    for t in 0..t_count {
        let start = t * window.step;
        let end = (start + window.size).min(sentences.len());
        let w = Window {
            sentences: &sentences[start..end],
        };
        for spec in registry.specs() {
            let v = (spec.extractor)(&w, registry.lexicons());
            if v.is_finite() {
                data.push(v);
            } else {
                log::warn!(
                    "feature `{}` gave {v} on `{speech_id}` window {t}; using 0",
                    spec.id
                );
                data.push(0.0);
            }
        }
    }
    ComplexityContour::new(
        speech_id,
        registry.feature_ids(),
        Tensor::new(vec![t_count, f], data)?,
    )
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl StandardizationStats {
    /// Fits over every row given; needs at least two rows.
    pub fn fit_rows<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Result<Self> {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(Error::InvalidArgument(format!(
                "standardization needs at least 2 rows, got {}",
                rows.len()
            )));
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            if r.len() != dim {
                return Err(Error::ShapeMismatch {
                    expected: vec![dim],
                    actual: vec![r.len()],
                });
            }
            for (m, v) in mean.iter_mut().zip(r.iter()) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(r.iter()).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let sd = var.into_iter().map(|s| (s / n).sqrt()).collect();
        Ok(Self { mean, sd })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// z-scores in place; zero-variance columns map to 0.
    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.sd) {
            *v = if *s > 0.0 { (*v - m) / s } else { 0.0 };
        }
    }
}

/// Fits standardization on all windows of the training contours.
pub fn fit_standardize(train: &[&ComplexityContour]) -> Result<StandardizationStats> {
    let dim = train.first().map(|c| c.num_features()).unwrap_or(0);
    StandardizationStats::fit_rows(
        train
            .iter()
            .flat_map(|c| (0..c.len()).map(move |t| c.values.row(t))),
        dim,
    )
}

pub fn apply_standardize(
    contour: &ComplexityContour,
    stats: &StandardizationStats,
) -> Result<ComplexityContour> {
    if contour.num_features() != stats.dim() {
        return Err(Error::ShapeMismatch {
            expected: vec![stats.dim()],
            actual: vec![contour.num_features()],
        });
    }
    let mut out = contour.clone();
    for t in 0..out.len() {
        stats.apply_row(out.values.row_mut(t));
    }
    Ok(out)
}

/// Zero-padded batch of shape `[B, n, F]` with true lengths.
#[derive(Debug, Clone, PartialEq)]
pub struct PaddedBatch {
    pub data: Tensor,
    pub lengths: Vec<usize>,
}

impl PaddedBatch {
    pub fn batch_size(&self) -> usize {
        self.lengths.len()
    }

    pub fn padded_len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.data.shape()[2]
    }

    /// Row `t` of sample `b`.
    pub fn step(&self, b: usize, t: usize) -> &[f64] {
        let (n, f) = (self.padded_len(), self.features());
        let off = (b * n + t) * f;
        &self.data.data()[off..off + f]
    }
}

/// Stacks `[T_i, F]` sequences into `[B, n, F]`, zero-filling rows past each
/// true length.
pub fn pad_batch(sequences: &[&Tensor], n: usize) -> Result<PaddedBatch> {
    let f = sequences.first().map(|s| s.row_len()).unwrap_or(0);
    let max_len = sequences.iter().map(|s| s.rows()).max().unwrap_or(0);
    if n < max_len {
        return Err(Error::InvalidArgument(format!(
            "padded length {n} is shorter than the longest sequence ({max_len})"
        )));
    }
    let mut data = vec![0.0; sequences.len() * n * f];
    let mut lengths = Vec::with_capacity(sequences.len());
    for (b, s) in sequences.iter().enumerate() {
        if s.row_len() != f {
            return Err(Error::ShapeMismatch {
                expected: vec![s.rows(), f],
                actual: s.shape().to_vec(),
            });
        }
        let off = b * n * f;
        data[off..off + s.len()].copy_from_slice(s.data());
        lengths.push(s.rows());
    }
    Ok(PaddedBatch {
        data: Tensor::new(vec![sequences.len(), n, f], data)?,
        lengths,
    })
}
