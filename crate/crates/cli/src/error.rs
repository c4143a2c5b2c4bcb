use std::fmt;

use vqai_core::config::ConfigError;
use vqai_core::eval::EvalError;
use vqai_core::ingest::IngestError;
use vqai_core::models::ModelError;
use vqai_core::trainer::{CheckpointError, TrainError};

/// A failure with its process exit code: 1 usage, 2 data, 3 runtime.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError { code: 1, message: m.into() }
    }

    pub fn data(m: impl Into<String>) -> Self {
        CliError { code: 2, message: m.into() }
    }

    pub fn runtime(m: impl Into<String>) -> Self {
        CliError { code: 3, message: m.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // one line, whatever the source
        f.write_str(&self.message.replace('\n', " "))
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::InvalidConfig(_) | IngestError::CountMismatch { .. } | IngestError::ChainsExceedTrain { .. } => {
                CliError::usage(e.to_string())
            }
            _ => CliError::data(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::InvalidConfig(_) => CliError::usage(e.to_string()),
            _ => CliError::runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::DatasetMissing(_) | TrainError::EmptyDataset => CliError::data(e.to_string()),
            TrainError::Config(c) => c.into(),
            TrainError::Ingest(i) => i.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Model(m) => m.into(),
            TrainError::NonFiniteLoss { .. } => CliError::runtime(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Ingest(i) => i.into(),
            EvalError::Model(m) => m.into(),
            EvalError::EmbedderMissing(_) | EvalError::CorruptEmbedder(_) | EvalError::InvalidRecord(_) | EvalError::InvalidReport(_) => {
                CliError::data(e.to_string())
            }
            _ => CliError::runtime(e.to_string()),
        }
    }
}
