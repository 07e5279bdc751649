use std::fmt;
use std::path::Path;

use histoseg::baselines::BaselineError;
use histoseg::data::DataError;
use histoseg::metrics::MetricsError;
use histoseg::network::NetworkError;
use histoseg::trainer::TrainError;

/// Which exit code an error maps to.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorKind {
    /// Help or version output; not a failure.
    Info,
    /// Bad flags, arguments or configuration: exit 1.
    Usage,
    /// Unreadable or inconsistent data, violated contracts, I/O: exit 2.
    Data,
    /// Non-finite arithmetic: exit 3.
    Numerical,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: ErrorKind,
    pub message: String,
}

impl CliError {
    pub fn new(kind: ErrorKind, message: impl Into<String>) -> Self {
        Self {
            kind,
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Usage, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Data, message)
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self::new(ErrorKind::Numerical, message)
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::data(format!("{}: {e}", path.display()))
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            ErrorKind::Info => 0,
            ErrorKind::Usage => 1,
            ErrorKind::Data => 2,
            ErrorKind::Numerical => 3,
        }
    }

    pub(crate) fn from_clap(e: clap::Error) -> Self {
        use clap::error::ErrorKind as K;
        let kind = match e.kind() {
            K::DisplayHelp | K::DisplayVersion | K::DisplayHelpOnMissingArgumentOrSubcommand => {
                ErrorKind::Info
            }
            _ => ErrorKind::Usage,
        };
        Self::new(kind, e.render().to_string())
    }

    /// Prints the message where it belongs and returns the exit code.
    pub fn report(&self) -> i32 {
        match self.kind {
            ErrorKind::Info => print!("{}", self.message),
            ErrorKind::Usage if self.message.starts_with("error:") => eprint!("{}", self.message),
            _ => eprintln!("error: {}", self.message),
        }
        self.exit_code()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<NetworkError> for CliError {
    fn from(e: NetworkError) -> Self {
        match e {
            NetworkError::Divergence { .. } | NetworkError::NonFiniteParameter { .. } => {
                Self::numerical(e.to_string())
            }
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        if e.is_numerical() {
            Self::numerical(e.to_string())
        } else {
            Self::data(e.to_string())
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        Self::data(e.to_string())
    }
}

impl From<BaselineError> for CliError {
    fn from(e: BaselineError) -> Self {
        match e {
            BaselineError::NonFinite => Self::numerical(e.to_string()),
            _ => Self::data(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        Self::data(e.to_string())
    }
}
