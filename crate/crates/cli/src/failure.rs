//! Exit-code taxonomy.

use std::fmt;
use std::process::ExitCode;

use ghostlite::Error;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Code {
    /// A verification command found a failing check.
    CheckFailed = 1,
    /// Bad flags, config files or model specs.
    Config = 2,
    /// Unusable data, images or checkpoints.
    Data = 3,
    /// Training produced a non-finite loss.
    Numeric = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub code: Code,
    pub message: String,
}

impl Failure {
    pub fn new(code: Code, message: impl Into<String>) -> Self {
        Failure { code, message: message.into() }
    }

    pub fn config(message: impl Into<String>) -> Self {
        Self::new(Code::Config, message)
    }

    pub fn data(message: impl Into<String>) -> Self {
        Self::new(Code::Data, message)
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.code as u8)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

/// Default classification of library errors. Call sites that know better
/// (a missing config file is a config error, not a data error) use
/// [`Context::or_config`] and friends instead.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::NonFinite { .. } => Code::Numeric,
            Error::Shape(_) | Error::InvalidArgument(_) | Error::Spec { .. } | Error::Json(_) => Code::Config,
            Error::Data(_)
            | Error::Checkpoint(_)
            | Error::UnsupportedVersion(_)
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Image(_) => Code::Data,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::data(e.to_string())
    }
}

pub type Outcome<T = ()> = Result<T, Failure>;

pub trait Context<T> {
    fn or_config(self, what: impl fmt::Display) -> Outcome<T>;
    fn or_data(self, what: impl fmt::Display) -> Outcome<T>;
}

impl<T, E: fmt::Display> Context<T> for Result<T, E> {
    fn or_config(self, what: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::config(format!("{what}: {e}")))
    }

    fn or_data(self, what: impl fmt::Display) -> Outcome<T> {
        self.map_err(|e| Failure::data(format!("{what}: {e}")))
    }
}
