use std::fmt::Display;

use lexsig::analysis::AnalysisError;
use lexsig::corpus::CorpusError;
use lexsig::lm::LmError;
use lexsig::signatures::SignatureError;
use lexsig::trajectory::TrajectoryError;
use lexsig::wordbank::WordbankError;
use thiserror::Error;

/// Failure of a command, classified by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, unreadable or invalid configuration.
    #[error("{0}")]
    Usage(String),
    /// Input files that are missing, malformed or from another run.
    #[error("{0}")]
    Data(String),
    /// The backend cannot provide what the run asks for.
    #[error("{0}")]
    Capability(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Capability(_) => 3,
        }
    }

    pub fn usage(msg: impl Display) -> Self {
        CliError::Usage(msg.to_string())
    }

    pub fn data(msg: impl Display) -> Self {
        CliError::Data(msg.to_string())
    }

    /// Prefixes the message with what was being done.
    pub fn context(self, what: impl Display) -> Self {
        match self {
            CliError::Usage(m) => CliError::Usage(format!("{what}: {m}")),
            CliError::Data(m) => CliError::Data(format!("{what}: {m}")),
            CliError::Capability(m) => CliError::Capability(format!("{what}: {m}")),
        }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<LmError> for CliError {
    fn from(e: LmError) -> Self {
        match e {
            LmError::CapabilityMissing(_) => CliError::Capability(e.to_string()),
            LmError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<CorpusError> for CliError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::InvalidArgument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<SignatureError> for CliError {
    fn from(e: SignatureError) -> Self {
        match e {
            SignatureError::Lm(inner) => inner.into(),
            SignatureError::CapabilityMissing | SignatureError::MissingReference => CliError::Capability(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<TrajectoryError> for CliError {
    fn from(e: TrajectoryError) -> Self {
        match e {
            TrajectoryError::InvalidWindow(_) | TrajectoryError::InvalidEpsilon(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<WordbankError> for CliError {
    fn from(e: WordbankError) -> Self {
        match e {
            WordbankError::InvalidThreshold(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

impl From<AnalysisError> for CliError {
    fn from(e: AnalysisError) -> Self {
        CliError::Data(e.to_string())
    }
}
