use std::path::PathBuf;

/// Failure categories. Each maps to its own process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Divergence(_) => 4,
            CliError::Io { .. } => 5,
        }
    }

    pub fn category(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Data(_) => "data",
            CliError::Divergence(_) => "divergence",
            CliError::Io { .. } => "io",
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<cgrpo_core::joint::TrainError> for CliError {
    fn from(e: cgrpo_core::joint::TrainError) -> Self {
        use cgrpo_core::grpo::StepError;
        use cgrpo_core::joint::TrainError as T;
        use cgrpo_core::policy::PolicyError;
        match e {
            T::Update { .. }
            | T::Step(StepError::Policy(PolicyError::Divergence)) => CliError::Divergence(e.to_string()),
            T::Vocab(_) | T::Eval(_) | T::EmptyDataset(_) => CliError::Data(e.to_string()),
            other => CliError::Config(other.to_string()),
        }
    }
}
