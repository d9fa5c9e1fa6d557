use std::fmt;

use thiserror::Error;

/// Which declared bound a coefficient broke during certification.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    /// `value <= delta`
    Lower,
    /// `value >= 1/delta`
    Upper,
    /// `|first derivative| >= L`
    FirstDerivative,
    /// `|second derivative| >= L`
    SecondDerivative,
    /// Not a finite number.
    NonFinite,
}

impl fmt::Display for Bound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Bound::Lower => "value <= delta",
            Bound::Upper => "value >= 1/delta",
            Bound::FirstDerivative => "|first derivative| >= L",
            Bound::SecondDerivative => "|second derivative| >= L",
            Bound::NonFinite => "non-finite value",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("bound violation for {spec} at x = {x}: {which}")]
    BoundViolation { spec: String, x: f64, which: Bound },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quadrature failed on [{a}, {b}]: error estimate {estimate:e} after {intervals} intervals")]
    QuadratureFailure {
        a: f64,
        b: f64,
        estimate: f64,
        intervals: usize,
    },

    #[error("root finding failed for target {target}: residual {residual:e} after {iterations} iterations")]
    RootFailure {
        target: f64,
        residual: f64,
        iterations: usize,
    },

    #[error("mesh error: {0}")]
    Mesh(String),

    #[error("mass leak {leak:e} exceeds tolerance {tol:e}")]
    MassLeak { leak: f64, tol: f64 },

    #[error("kernel error: {0}")]
    Kernel(String),

    #[error("config error{}: {message}", location(*.line, .key.as_deref()))]
    Config {
        line: Option<usize>,
        key: Option<String>,
        message: String,
    },

    #[error("{} study assertion(s) failed: {}", .0.len(), .0.join("; "))]
    AssertionFailure(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn location(line: Option<usize>, key: Option<&str>) -> String {
    match (line, key) {
        (Some(l), Some(k)) => format!(" at line {l}, key `{k}`"),
        (Some(l), None) => format!(" at line {l}"),
        (None, Some(k)) => format!(" at key `{k}`"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            line: None,
            key: Some(key.into()),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
