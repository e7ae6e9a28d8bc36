use std::path::PathBuf;

use crate::trace::Fidelity;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("sample {id}: fidelity mismatch: {reason}")]
    FidelityMismatch { id: String, reason: String },

    #[error("sample {id}, step {step}: chosen_logprob {given} disagrees with logits ({computed})")]
    InconsistentLogprob {
        id: String,
        step: usize,
        given: f64,
        computed: f64,
    },

    #[error("sample {0}: trace has no steps")]
    EmptyTrace(String),

    #[error("sample {id}: step {step} has no log-probability")]
    MissingLogprob { id: String, step: usize },

    #[error("sample {id}: attack needs {required} fidelity, trace is {found}")]
    WrongFidelity {
        id: String,
        required: &'static str,
        found: Fidelity,
    },

    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTemperature(f64),

    #[error("logit at index {0} is not finite")]
    NonFiniteLogit(usize),

    #[error("vocabulary of size {0} is too small (need at least 2)")]
    VocabularyTooSmall(usize),

    #[error("vocabulary of size {0} exceeds the 2^20 cap")]
    VocabularyTooLarge(usize),

    #[error("token index {index} out of range for vocabulary of size {size}")]
    IndexOutOfRange { index: usize, size: usize },

    #[error("sample {id}: loss grid has no entry for tau = {tau}")]
    MissingGridPoint { id: String, tau: f64 },

    #[error("sample {0}: no text attached")]
    MissingText(String),

    #[error("sample {0}: text is empty, compressed size undefined")]
    EmptyCompression(String),

    #[error("original loss must be positive, got {0}")]
    ZeroOriginalLoss(f64),

    #[error("token {token} outside vocabulary of size {vocab_size}")]
    VocabMismatch { token: usize, vocab_size: usize },

    #[error("calibration split needs at least one member and one non-member")]
    DegenerateSplit,

    #[error("need at least one member and one non-member (members: {members}, non-members: {nonmembers})")]
    DegenerateLabels { members: usize, nonmembers: usize },

    #[error("density export needs at least two distinct scores")]
    DegenerateScores,

    #[error("calibration and evaluation splits overlap ({0})")]
    SplitOverlap(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("cannot train on an empty corpus")]
    EmptyCorpus,

    #[error("context has length {got}, model expects {expected}")]
    BadContextLength { expected: usize, got: usize },

    #[error("sequence of length {len} is shorter than n = {n}")]
    SequenceTooShort { len: usize, n: usize },

    #[error("duplicate sample id {0}")]
    DuplicateId(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}, line {line}: {source}")]
    Json {
        path: PathBuf,
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 config, 3 fidelity, 4 split overlap, 5 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::FidelityMismatch { .. }
            | Error::WrongFidelity { .. }
            | Error::MissingLogprob { .. }
            | Error::MissingGridPoint { .. } => 3,
            Error::SplitOverlap(_) => 4,
            Error::Io { .. } | Error::Json { .. } | Error::Csv { .. } | Error::Parse { .. } => 5,
            _ => 2,
        }
    }
}
