use std::io;
use std::path::Path;

use propensity_core::Error;
use thiserror::Error;

/// A command failure, classified by exit code.
#[derive(Debug, Error)]
pub enum Failure {
    /// Bad flags, bad configuration or a missing input file.
    #[error("{0}")]
    Usage(String),
    /// The inputs were read but could not be processed.
    #[error("{0}")]
    Data(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
        }
    }

    pub fn io(path: &Path, err: io::Error) -> Self {
        let message = format!("{}: {err}", path.display());
        if err.kind() == io::ErrorKind::NotFound {
            Failure::Usage(message)
        } else {
            Failure::Data(message)
        }
    }

    pub fn in_file(path: &Path, err: Error) -> Self {
        match Failure::from(err) {
            Failure::Usage(m) => Failure::Usage(format!("{}: {m}", path.display())),
            Failure::Data(m) => Failure::Data(format!("{}: {m}", path.display())),
        }
    }
}

impl From<Error> for Failure {
    fn from(err: Error) -> Self {
        match err {
            Error::Config(_) => Failure::Usage(err.to_string()),
            _ => Failure::Data(err.to_string()),
        }
    }
}

pub type CmdResult<T = ()> = std::result::Result<T, Failure>;
