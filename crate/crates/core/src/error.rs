use thiserror::Error;

use crate::engine::EngineError;

/// Errors raised while building, importing or transforming models.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("dimension mismatch: expected {expected} features, got {actual}")]
    Dimension { expected: usize, actual: usize },
    #[error("malformed tree: {0}")]
    Structure(String),
    #[error("schema error at line {line}, column {column}: {message}")]
    Schema { line: usize, column: usize, message: String },
    #[error("invalid field `{field}`: {message}")]
    Field { field: String, message: String },
    #[error("cannot pad a tree with {current} leaves down to {target}")]
    PadBelow { current: usize, target: usize },
    #[error("unsupported task: {0}")]
    UnsupportedTask(String),
    #[error("network is already normalized")]
    AlreadyNormalized,
    #[error("range error: {0}")]
    Range(String),
}

impl ModelError {
    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        ModelError::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl From<serde_json::Error> for ModelError {
    fn from(e: serde_json::Error) -> Self {
        ModelError::Schema {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        }
    }
}

/// Errors raised by the packed compiler and the homomorphic evaluator.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum CompileError {
    #[error("layout overflow: L(2K-1) = {trees}*{width} = {needed} > n = {slots}; {suggestion}")]
    LayoutOverflow {
        trees: usize,
        width: usize,
        needed: usize,
        slots: usize,
        suggestion: String,
    },
    #[error("depth overflow: requirement {required} > budget {budget}; {suggestion}")]
    DepthOverflow {
        required: usize,
        budget: usize,
        suggestion: String,
    },
    #[error("layout mismatch: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{stage}: {source}")]
    Engine {
        stage: &'static str,
        #[source]
        source: EngineError,
    },
}

impl CompileError {
    pub(crate) fn at(stage: &'static str) -> impl FnOnce(EngineError) -> CompileError {
        move |source| CompileError::Engine { stage, source }
    }
}
