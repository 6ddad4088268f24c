use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of a model formula.
    #[error("domain error: {0}")]
    Domain(String),

    /// Model parameters are mutually inconsistent (e.g. a non-positive
    /// denominator in the terminal-voltage current limit).
    #[error("model error: {0}")]
    Model(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("infeasible session for EV {ev_id}: {reason}")]
    InfeasibleSession { ev_id: usize, reason: String },

    #[error("infeasible schedule: {0}")]
    Infeasible(String),

    #[error("energy {energy:.6} kWh outside envelope [{lower:.6}, {upper:.6}] at point {point}")]
    Projection {
        point: usize,
        energy: f64,
        lower: f64,
        upper: f64,
    },

    #[error("training diverged at episode {episode}: {reason}")]
    Divergence { episode: usize, reason: String },

    #[error("missing file {}", .0.display())]
    MissingFile(PathBuf),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::MissingFile(path)
        } else {
            Error::Io { path, source }
        }
    }

    /// Process exit code for this category of failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain(_) | Error::Model(_) | Error::Config(_) => 2,
            Error::MissingFile(_) => 3,
            Error::InfeasibleSession { .. } | Error::Infeasible(_) | Error::Projection { .. } => 4,
            Error::Divergence { .. } => 5,
            Error::Io { .. } | Error::Csv(_) | Error::Json(_) => 6,
        }
    }
}
