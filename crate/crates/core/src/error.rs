use crate::model::MemoryId;
use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Failures raised by an external knowledge source (scripted, HTTP or sandboxed tool loop).
#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum SourceError {
    #[error("request timed out")]
    Timeout,
    #[error("endpoint returned HTTP status {0}")]
    HttpStatus(u16),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("sandboxed execution exceeded its time limit")]
    SandboxTimeout,
    #[error("sandbox refused to run code: {0}")]
    SandboxDenied(String),
    #[error("source unavailable: {0}")]
    Unavailable(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
    #[error("task carries no reference answer")]
    MissingReference,
    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("unknown memory id {0}")]
    UnknownMemoryId(MemoryId),
    #[error("knowledge cascade exhausted after {calls} calls without a correct reference")]
    CascadeExhausted { calls: u32 },
    #[error("could not parse extractor output: {0}")]
    ExtractionParseError(String),
    #[error("judge unavailable: {0}")]
    JudgeUnavailable(String),
    #[error("could not parse judge verdict: {0}")]
    JudgeParseError(String),
    #[error("could not parse router reply: {0}")]
    RouterParseError(String),
    #[error("attempted to mutate a frozen memory store")]
    FrozenStoreMutation,
    #[error("empty input set")]
    EmptySet,
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Source(#[from] SourceError),
    #[error("unsupported store format: {0}")]
    FormatVersionMismatch(String),
    #[error("corrupt line {line}: {reason}")]
    CorruptLine { line: usize, reason: String },
    #[error("template {template} is missing required text {missing:?}")]
    TemplateDrift { template: String, missing: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
