use std::fmt;

/// A failure with its process exit code: 2 for usage and validation
/// problems, 1 for failures at run time.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            code: 2,
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        CliError {
            code: 1,
            message: message.into(),
        }
    }

    pub fn missing(flag: &str) -> Self {
        Self::usage(format!("missing required --{flag}"))
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<activemix::Error> for CliError {
    fn from(e: activemix::Error) -> Self {
        use activemix::Error as E;
        let code = match &e {
            E::NonFiniteObjective { .. } | E::NonPositiveMass { .. } | E::MissingClass { .. } | E::Stopped | E::WrongPhase { .. } => 1,
            _ => 2,
        };
        CliError {
            code,
            message: e.to_string(),
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
