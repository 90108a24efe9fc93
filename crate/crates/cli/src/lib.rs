//! Library side of the CLI: the structured configuration (every tunable
//! constant of the pipeline in one file), trajectory metrics, recall
//! scoring, and the precomputed-feature frontend.

pub mod config;
pub mod eval;
pub mod file_frontend;
pub mod pipeline;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("insufficient overlap: only {0} associated frames")]
    InsufficientOverlap(usize),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
