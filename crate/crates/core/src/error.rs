use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("unsupported request in {op}: {detail}")]
    Unsupported { op: &'static str, detail: String },

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    Convergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("out of bounds: {0}")]
    Bounds(String),

    #[error("prompt bank schema violation in class `{class}`, field `{field}`: {detail}")]
    Schema {
        class: String,
        field: &'static str,
        detail: String,
    },

    #[error("template error: {0}")]
    Template(String),

    #[error("metric undefined: {0}")]
    MetricUndefined(String),

    #[error("training diverged at stage {stage}, step {step}: loss {loss}")]
    Divergence { stage: u8, step: usize, loss: f64 },

    #[error("incompatible checkpoint: {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: malformed image: {detail}")]
    Image { path: PathBuf, detail: String },
}

impl Error {
    /// Stable short name of the variant, for machine-readable reporting.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Unsupported { .. } => "unsupported",
            Error::Convergence { .. } => "convergence",
            Error::Input(_) => "input",
            Error::Bounds(_) => "bounds",
            Error::Schema { .. } => "schema",
            Error::Template(_) => "template",
            Error::MetricUndefined(_) => "metric_undefined",
            Error::Divergence { .. } => "divergence",
            Error::Checkpoint(_) => "checkpoint",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Image { .. } => "image",
        }
    }

    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}
