use std::io;
use std::path::PathBuf;

use gccakit::datamodel::DataError;
use gccakit::estimators::EstimatorError;
use gccakit::harness::{SelectionError, SweepError, SynthError};
use gccakit::linalg::LinalgError;
use gccakit::metrics::MetricsError;
use gccakit::stats::StatsError;
use thiserror::Error;

use crate::matfile::MatFileError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: `{key}`: {reason}")]
    Config { key: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    MatFile(#[from] MatFileError),
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("invalid data: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        CliError::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(io::Error) -> Self {
        let path = path.into();
        move |source| CliError::Io { path, source }
    }

    /// Process exit status for this failure class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } => 2,
            CliError::Io { .. } | CliError::MatFile(_) | CliError::Format { .. } | CliError::Data(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Other(_) => 1,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<EstimatorError> for CliError {
    fn from(e: EstimatorError) -> Self {
        match e {
            EstimatorError::TooManyComponents { q, dim } => CliError::config(
                "model.q",
                format!("Q = {q} exceeds the pencil dimension {dim}"),
            ),
            EstimatorError::InvalidHyper { name, value } => {
                CliError::config(format!("model.{name}"), format!("invalid value {value}"))
            }
            EstimatorError::ZeroComponents => CliError::config("model.q", "Q must be at least 1"),
            EstimatorError::Linalg(e) => e.into(),
            e @ EstimatorError::DegenerateComponent(_) => CliError::Numerical(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<StatsError> for CliError {
    fn from(e: StatsError) -> Self {
        match e {
            StatsError::InvalidLevel(_) => CliError::config("protocol.level", e.to_string()),
            StatsError::Metrics(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SelectionError> for CliError {
    fn from(e: SelectionError) -> Self {
        match e {
            SelectionError::AllFailed(e) => e.into(),
            SelectionError::Metrics(e) => e.into(),
            SelectionError::Linalg(e) => e.into(),
            SelectionError::EmptyGrid => CliError::config("model.mu_grid", e.to_string()),
            SelectionError::NoValidation => CliError::config("protocol.val_fraction", e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Invalid(reason) => CliError::config("synth", reason),
            SynthError::Data(e) => e.into(),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::Infeasible(reason) => CliError::config("sweep", reason),
            SweepError::Data(e) => e.into(),
            SweepError::Estimator(e) => e.into(),
            SweepError::Selection(e) => e.into(),
            SweepError::Metrics(e) => e.into(),
            SweepError::Stats(e) => e.into(),
        }
    }
}
