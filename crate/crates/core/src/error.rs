use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown rating category `{0}`")]
    UnknownCategory(String),

    #[error("unknown speech id `{0}`")]
    UnknownSpeech(String),

    #[error("invalid record: {0}")]
    InvalidRecord(String),

    #[error("talk `{0}` has zero views; cannot normalize per million views")]
    ZeroViews(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing required lexicon `{0}`")]
    MissingLexicon(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("overlapping tokens in `{speech}`: token {index} starts at {start}s before previous end {prev_end}s")]
    OverlappingTokens {
        speech: String,
        index: usize,
        start: f64,
        prev_end: f64,
    },

    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("architecture mismatch in `{field}`: checkpoint has {found}, expected {expected}")]
    ArchitectureMismatch {
        field: String,
        expected: String,
        found: String,
    },

    #[error("optimizer step requested before backward pass")]
    StepBeforeBackward,

    #[error("training labels contain a single class ({0}); both classes are required")]
    SingleClass(String),

    #[error("missing fluency vector for speeches: {0:?}")]
    MissingFluency(Vec<String>),

    #[error("feature column {0} is not assigned to any group")]
    UnassignedFeature(usize),

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("missing input `{}`", .0.display())]
    MissingPath(PathBuf),

    #[error("parse error in {location}: {message}")]
    Parse { location: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }
}
