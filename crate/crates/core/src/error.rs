//! Crate-wide error type.

use std::fmt;

/// Errors surfaced by dataset handling, auditing, enforcement, training,
/// and the command layer.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// File-level I/O failure (path and underlying message).
    Io { path: String, msg: String },
    /// A structured text file failed to parse.
    Parse { path: String, line: usize, msg: String },
    /// Schema construction or validation failure.
    Schema(String),
    /// A cell value falls outside its declared domain.
    CellDomain { row: usize, column: String, value: String, msg: String },
    /// Outcome column contains something other than 0 or 1.
    Outcome { row: usize, value: String },
    /// CSV header does not match the schema column order.
    HeaderMismatch { expected: String, found: String },
    /// Referenced column name does not exist in the schema.
    UnknownColumn(String),
    /// Split fractions invalid or a nonzero-fraction split came out empty.
    Split(String),
    /// No computationally possible racial group exists for the setting.
    NoPossibleRace,
    /// Enforcement exceeded its iteration budget.
    IterationBudget { draws: u64, worst_violation: f64 },
    /// Balanced-accuracy input contains a single class.
    SingleClass { missing: u8 },
    /// Percent-change summary hit a zero denominator.
    ZeroDenominator(String),
    /// Shape mismatch in a numeric operation.
    Shape { expected: String, found: String },
    /// Too many training iterations were skipped for lack of batch members.
    TooManySkips { skipped: u64, total: u64 },
    /// Invalid configuration or command usage.
    Usage(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Io { path, msg } => write!(f, "{path}: {msg}"),
            Error::Parse { path, line, msg } => write!(f, "{path}:{line}: {msg}"),
            Error::Schema(msg) => write!(f, "invalid schema: {msg}"),
            Error::CellDomain { row, column, value, msg } => {
                write!(f, "row {row}, column {column}: value {value} {msg}")
            }
            Error::Outcome { row, value } => {
                write!(f, "row {row}: outcome {value} is not 0 or 1")
            }
            Error::HeaderMismatch { expected, found } => {
                write!(f, "header mismatch: expected `{expected}`, found `{found}`")
            }
            Error::UnknownColumn(name) => write!(f, "unknown column `{name}`"),
            Error::Split(msg) => write!(f, "bad split: {msg}"),
            Error::NoPossibleRace => {
                write!(f, "no computationally possible racial group in every split")
            }
            Error::IterationBudget { draws, worst_violation } => write!(
                f,
                "enforcement did not converge within {draws} draws (worst violation {worst_violation})"
            ),
            Error::SingleClass { missing } => {
                write!(f, "balanced accuracy undefined: no outcome of class {missing}")
            }
            Error::ZeroDenominator(what) => write!(f, "summary undefined: {what} is zero"),
            Error::Shape { expected, found } => {
                write!(f, "shape mismatch: expected {expected}, found {found}")
            }
            Error::TooManySkips { skipped, total } => {
                write!(f, "{skipped} of {total} iterations skipped; check group coverage")
            }
            Error::Usage(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;
