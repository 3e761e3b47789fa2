use thiserror::Error;

use crate::llm::LlmError;
use crate::sandbox::SandboxError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Llm(#[from] LlmError),

    #[error(transparent)]
    Sandbox(#[from] SandboxError),

    #[error("template for {kind} uses placeholder {{{placeholder}}} that its context does not supply")]
    MissingPlaceholder { kind: String, placeholder: String },

    #[error("intention extracted from the model response is empty")]
    EmptyIntention,

    #[error("only {got} of {wanted} reference versions compiled after {rounds} regeneration rounds")]
    InsufficientVersions { wanted: usize, got: usize, rounds: u32 },

    #[error("no test input could be parsed from the model response ({warnings} malformed lines)")]
    NoParsableInputs { warnings: usize },

    #[error("subject returned different results on repeated execution of {input}")]
    NondeterministicSubject { input: String },

    #[error("patched program timed out; verdict is ambiguous")]
    AmbiguousVerdict,

    #[error("affirmative bug claim but no test case could be extracted from the response")]
    UnparsableTestCase,

    #[error("run table is incomplete: {0}")]
    IncompleteTable(String),

    #[error("accuracy is undefined: no test cases were found")]
    UndefinedAccuracy,

    #[error("ground-truth test list is empty")]
    EmptyGroundTruth,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

impl Error {
    /// Short stable name of the failure, used in report cells
    /// (`error: CassetteMiss`).
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Llm(e) => e.kind(),
            Error::Sandbox(e) => e.kind(),
            Error::MissingPlaceholder { .. } => "MissingPlaceholder",
            Error::EmptyIntention => "EmptyIntention",
            Error::InsufficientVersions { .. } => "InsufficientVersions",
            Error::NoParsableInputs { .. } => "NoParsableInputs",
            Error::NondeterministicSubject { .. } => "NondeterministicSubject",
            Error::AmbiguousVerdict => "AmbiguousVerdict",
            Error::UnparsableTestCase => "UnparsableTestCase",
            Error::IncompleteTable(_) => "IncompleteTable",
            Error::UndefinedAccuracy => "UndefinedAccuracy",
            Error::EmptyGroundTruth => "EmptyGroundTruth",
            Error::Config(_) => "Config",
            Error::Io { .. } => "Io",
            Error::Json { .. } => "Json",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io { path: path.as_ref().display().to_string(), source }
    }

    pub(crate) fn json(path: impl AsRef<std::path::Path>, source: serde_json::Error) -> Self {
        Error::Json { path: path.as_ref().display().to_string(), source }
    }
}
