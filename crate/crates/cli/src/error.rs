//! Failure classes reported by the command-line tool.

use std::io;

use desknmt_core::corpus::CorpusError;
use desknmt_core::eval::EvalError;
use desknmt_core::lm::LmError;
use desknmt_core::model::ModelError;
use desknmt_core::select::SelectError;
use desknmt_core::subword::SubwordError;
use desknmt_core::train::TrainError;
use desknmt_core::translate::TranslateError;
use thiserror::Error;

use crate::config::{ConfigError, ErrorList};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("missing file: {0}")]
    MissingFile(String),
    #[error("config: {}", ErrorList(.0))]
    Config(Vec<ConfigError>),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("data: {0}")]
    Data(String),
    #[error("io: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status for this class.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::MissingFile(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Data(_) => 5,
            CliError::Io(_) => 1,
        }
    }

    /// One diagnostic line per problem.
    pub fn lines(&self) -> Vec<String> {
        match self {
            CliError::Config(errs) => errs.iter().map(|e| format!("config: {e}")).collect(),
            other => vec![other.to_string()],
        }
    }

    pub fn io(path: &std::path::Path, e: io::Error) -> Self {
        if e.kind() == io::ErrorKind::NotFound {
            CliError::MissingFile(path.display().to_string())
        } else {
            CliError::Io(format!("{}: {e}", path.display()))
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<Vec<ConfigError>> for CliError {
    fn from(e: Vec<ConfigError>) -> Self {
        if let [ConfigError::MissingFile { key, path }] = e.as_slice() {
            if key == "config" {
                return CliError::MissingFile(path.display().to_string());
            }
        }
        CliError::Config(e)
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::Io { path, source } if source.kind() == io::ErrorKind::NotFound => CliError::MissingFile(path),
            CorpusError::Io { path, source } => CliError::Io(format!("{path}: {source}")),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::NonFinite(_) => CliError::Numeric(e.to_string()),
            ModelError::Io(io) => io.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::NonFiniteGradient(_) => CliError::Numeric(e.to_string()),
            TrainError::Model(m) => m.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<TranslateError> for CliError {
    fn from(e: TranslateError) -> Self {
        match e {
            TranslateError::Model(m) => m.into(),
            TranslateError::Train(t) => t.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SubwordError> for CliError {
    fn from(e: SubwordError) -> Self {
        match e {
            SubwordError::Io(io) => io.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::Io(io) => io.into(),
            LmError::ZeroProbability { .. } => CliError::Numeric(e.to_string()),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<SelectError> for CliError {
    fn from(e: SelectError) -> Self {
        match e {
            SelectError::Lm(l) => l.into(),
            other => CliError::Data(other.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        CliError::Data(e.to_string())
    }
}
