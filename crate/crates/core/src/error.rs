use std::path::PathBuf;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("integration step error at t = {time_s:e} s: {reason}")]
    IntegrationStep { time_s: f64, reason: String },

    #[error("numerical error at t = {time_s:e} s: {reason}")]
    Numerical { time_s: f64, reason: String },

    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("validation error at line {line}: {reason}")]
    Validation { line: usize, reason: String },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("unsupported input: {0}")]
    UnsupportedInput(String),

    #[error("fit did not converge after {iterations} iterations (best residual norm {best_residual:e})")]
    FitNonConvergence { iterations: usize, best_residual: f64 },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable variant name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Config(_) => "config",
            Error::Domain(_) => "domain",
            Error::Internal(_) => "internal",
            Error::IntegrationStep { .. } => "integration_step",
            Error::Numerical { .. } => "numerical",
            Error::Parse { .. } => "parse",
            Error::Validation { .. } => "validation",
            Error::DegenerateInput(_) => "degenerate_input",
            Error::UnsupportedInput(_) => "unsupported_input",
            Error::FitNonConvergence { .. } => "fit_non_convergence",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}
