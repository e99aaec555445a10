//! Affective rating prediction for argumentative speech.
//!
//! The pipeline turns transcripts into sliding-window complexity contours,
//! derives speech-level fluency measures from time-aligned transcripts, and
//! trains one bidirectional LSTM classifier per rating category (pretrained on
//! an auxiliary talk corpus, then fine-tuned with fluency and topic inputs).
//! Group-level LIME explanations aggregate into global feature-group
//! importance scores.
//!
//! Modules map onto pipeline stages:
//!
//! * [`corpus`]: ingestion, rating tallies, median binarization, folds, kappa
//! * [`textproc`]: tokenization, sentence splitting, syllables, lexicons
//! * [`contour`]: feature registry, contour extraction, standardization, padding
//! * [`fluency`]: pause detection and the 7-dimensional fluency vector
//! * [`neural`]: tensors, BiLSTM stack, heads, loss, optimizers, checkpoints
//! * [`pipeline`]: pretraining, fine-tuning, cross-validation, grid search
//! * [`explain`]: group masks, LIME surrogates, global importance
//! * [`report`]: tables, median-split differences, SVG figures
//! * [`synth`]: synthetic datasets with a known informative feature group
//! * [`cli`]: the `contour-rater` command line

pub mod cli;
pub mod contour;
pub mod corpus;
pub mod error;
pub mod explain;
pub mod fluency;
pub mod neural;
pub mod pipeline;
pub mod report;
pub mod synth;
pub mod textproc;

pub use error::{Error, Result};
