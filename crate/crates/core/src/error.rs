use std::path::PathBuf;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("backward: {0}")]
    Backward(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("{path}: malformed data at byte {offset}: {detail}")]
    Format {
        path: PathBuf,
        offset: usize,
        detail: String,
    },

    #[error("{path}: {detail}")]
    Consistency { path: PathBuf, detail: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("incompatible: {0}")]
    Incompatible(String),

    #[error(
        "non-finite loss at epoch {epoch}, batch {batch}: L_r={recon}, L_c={contrastive}, L={total}"
    )]
    NonFinite {
        epoch: usize,
        batch: usize,
        recon: f64,
        contrastive: f64,
        total: f64,
    },

    #[error("non-finite value in parameter {name} after epoch {epoch}")]
    NonFiniteParam { name: String, epoch: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by numerics rather than inputs or I/O.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. } | Error::NonFiniteParam { .. } | Error::Domain { .. }
        )
    }

    /// True for failures the caller could fix by changing arguments or config.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Precondition(_) | Error::Incompatible(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
