//! Error kinds mapped to process exit codes.

use std::fmt;

/// Bad input: configuration, arguments, files. Exit code 2.
pub const EXIT_CONFIG: i32 = 2;
/// The numerics failed or did not converge. Exit code 3.
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum Failure {
    Config(String),
    Numerical(String),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Numerical(_) => EXIT_NUMERICAL,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "{m}"),
            Failure::Numerical(m) => write!(f, "numerical failure: {m}"),
        }
    }
}

impl From<aopt::Error> for Failure {
    fn from(e: aopt::Error) -> Self {
        use aopt::Error as E;
        match e {
            E::SingularOperator { .. } | E::IndefinitePrior { .. } | E::Factorization(_) => Failure::Numerical(e.to_string()),
            _ => Failure::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("i/o error: {e}"))
    }
}

pub type CliResult<T> = Result<T, Failure>;

pub fn config_err(msg: String) -> Failure {
    Failure::Config(msg)
}
