use dora::checkpoint::CheckpointError;
use dora::dataset::DatasetError;
use dora::encoder::EncoderError;
use dora::eval::EvalError;
use dora::policy::PolicyError;
use dora::report::CsvError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config, or input files; exit code 1.
    #[error("{0}")]
    User(String),
    /// Anything else; exit code 2.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    /// Prefixes the message with the failing stage.
    pub fn in_stage(self, stage: &str) -> Self {
        match self {
            CliError::User(m) => CliError::User(format!("{stage}: {m}")),
            CliError::Internal(m) => CliError::Internal(format!("{stage}: {m}")),
        }
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::PartialData { .. }
            | DatasetError::Empty
            | DatasetError::NoCompleteEpisode => CliError::Internal(e.to_string()),
            _ => CliError::User(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::User(e.to_string())
    }
}

impl From<EncoderError> for CliError {
    fn from(e: EncoderError) -> Self {
        match e {
            EncoderError::Config(_) => CliError::User(e.to_string()),
            EncoderError::Checkpoint(c) => c.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Config(_) | PolicyError::EnvMismatch(_) => CliError::User(e.to_string()),
            PolicyError::Encoder(inner) => inner.into(),
            PolicyError::Checkpoint(c) => c.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Config(_)
            | EvalError::EnvMismatch(_)
            | EvalError::MissingStats
            | EvalError::TooFewClasses(_) => CliError::User(e.to_string()),
            EvalError::Encoder(inner) => inner.into(),
            EvalError::Dataset(inner) => inner.into(),
            _ => CliError::Internal(e.to_string()),
        }
    }
}

impl From<CsvError> for CliError {
    fn from(e: CsvError) -> Self {
        CliError::Internal(e.to_string())
    }
}

pub fn io_error(path: &std::path::Path, e: std::io::Error) -> CliError {
    let msg = format!("{}: {e}", path.display());
    if e.kind() == std::io::ErrorKind::NotFound || e.kind() == std::io::ErrorKind::PermissionDenied
    {
        CliError::User(msg)
    } else {
        CliError::Internal(msg)
    }
}
