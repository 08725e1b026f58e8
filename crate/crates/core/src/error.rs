use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("missing cell: issuance {issuance}, lead {lead}, scenario {scenario}, series {series}")]
    MissingCell {
        issuance: String,
        lead: usize,
        scenario: i64,
        series: String,
    },

    #[error(
        "incoherent observation at issuance {issuance}, lead {lead}: aggregate {aggregate} MW, parts sum {parts} MW"
    )]
    IncoherentObservation {
        issuance: String,
        lead: usize,
        aggregate: f64,
        parts: f64,
    },

    #[error("coherence violation in {context}: scenario {scenario} differs by {gap} MW")]
    Incoherent {
        context: &'static str,
        scenario: usize,
        gap: f64,
    },

    #[error("duality gap too large: primal {primal}, dual {dual}")]
    DualityGap { primal: f64, dual: f64 },

    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },

    #[error("hierarchy fingerprint mismatch: checkpoint {expected}, data {actual}")]
    HierarchyMismatch { expected: String, actual: String },

    #[error("issuance {issuance}, lead {lead}: {source}")]
    AtHour {
        issuance: String,
        lead: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_hour(self, issuance: &str, lead: usize) -> Self {
        Error::AtHour {
            issuance: issuance.to_string(),
            lead,
            source: Box::new(self),
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }

    /// True for failures of numerical consistency, as opposed to bad input or configuration.
    pub fn is_numerical(&self) -> bool {
        if let Error::AtHour { source, .. } = self {
            return source.is_numerical();
        }
        matches!(
            self,
            Error::NonFinite(_)
                | Error::Incoherent { .. }
                | Error::DualityGap { .. }
                | Error::Diverged { .. }
        )
    }
}
