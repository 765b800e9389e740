use std::fmt;

/// Exit status plus a one-line reason, printed as `error[<kind>]: <reason>`.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub kind: &'static str,
    pub message: String,
}

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_VALIDATION: u8 = 2;
pub const EXIT_RUNTIME: u8 = 3;

impl CliError {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "usage",
            message: message.into(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_VALIDATION,
            kind: "validation",
            message: message.into(),
        }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_RUNTIME,
            kind: "runtime",
            message: message.into(),
        }
    }

    /// The single stderr line.
    pub fn line(&self) -> String {
        let msg: String = self
            .message
            .chars()
            .map(|c| if c == '\n' || c == '\r' { ' ' } else { c })
            .collect();
        format!("error[{}]: {}", self.kind, msg.trim())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.line())
    }
}

impl std::error::Error for CliError {}

impl From<earthgan::Error> for CliError {
    fn from(e: earthgan::Error) -> Self {
        use earthgan::Error as E;
        let missing_input =
            matches!(&e, E::Io(io) if io.kind() == std::io::ErrorKind::NotFound);
        if e.is_validation() || missing_input {
            Self::validation(e.to_string())
        } else {
            Self::runtime(e.to_string())
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        earthgan::Error::Io(e).into()
    }
}

pub type CliResult<T> = Result<T, CliError>;
