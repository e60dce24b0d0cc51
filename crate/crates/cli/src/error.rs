use std::fmt::Display;

use tcer_core::Error;

/// A failed command with its exit code.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: Option<String>,
}

impl CliError {
    pub fn usage(msg: impl Display) -> Self {
        CliError {
            code: 1,
            message: Some(msg.to_string()),
        }
    }

    pub fn data(msg: impl Display) -> Self {
        CliError {
            code: 2,
            message: Some(msg.to_string()),
        }
    }

    /// An exit code whose message was already printed.
    pub fn silent(code: u8) -> Self {
        CliError {
            code,
            message: None,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(_) | Error::InvalidParams(_) => CliError::usage(e),
            _ => CliError::data(e),
        }
    }
}
