use std::fmt;

use vgembed::Error;

pub const CONFIG: u8 = 2;
pub const DATA: u8 = 3;
pub const NUMERICAL: u8 = 4;

/// A failure with the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub msg: String,
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError {
            code: CONFIG,
            msg: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        CliError {
            code: DATA,
            msg: msg.into(),
        }
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError {
            code: NUMERICAL,
            msg: msg.into(),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Usage(_) => CONFIG,
            Error::Io { .. }
            | Error::Format { .. }
            | Error::Parse { .. }
            | Error::Data(_)
            | Error::Shape(_) => DATA,
            Error::Numerical(_) => NUMERICAL,
        };
        CliError {
            code,
            msg: e.to_string(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.msg)
    }
}
