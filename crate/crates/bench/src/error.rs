use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("stage `{stage}` failed: {message}{}", completed_note(.completed))]
    Stage {
        stage: &'static str,
        message: String,
        /// Artifacts written by the stages that finished.
        completed: Vec<PathBuf>,
    },
    #[error("acceptance thresholds not met:\n{}", .0.join("\n"))]
    Assert(Vec<String>),
}

fn completed_note(paths: &[PathBuf]) -> String {
    if paths.is_empty() {
        String::new()
    } else {
        let list: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
        format!(" (completed artifacts: {})", list.join(", "))
    }
}

impl BenchError {
    pub fn stage(stage: &'static str, err: impl std::fmt::Display) -> Self {
        BenchError::Stage {
            stage,
            message: err.to_string(),
            completed: Vec::new(),
        }
    }

    /// Process exit code: 1 config, 2 stage failure, 3 threshold failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_) => 1,
            BenchError::Data(_) | BenchError::Stage { .. } => 2,
            BenchError::Assert(_) => 3,
        }
    }
}
