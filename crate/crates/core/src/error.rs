use std::io;
use std::path::PathBuf;

use thiserror::Error;

use crate::comm::CommError;
use crate::element::ElementType;

/// Errors raised by tables and storage managers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("a table already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("invalid table description: {0}")]
    InvalidDesc(String),
    #[error("table lock is held: {0}")]
    LockHeld(PathBuf),
    #[error("not a table: {0}")]
    NotATable(PathBuf),
    #[error("corrupt table descriptor: {0}")]
    CorruptDescriptor(String),
    #[error("row {row} out of range for table with {nrows} rows")]
    RowOutOfRange { row: u64, nrows: u64 },
    #[error("column {column}: expected element type {expected}, got {found}")]
    TypeMismatch {
        column: String,
        expected: ElementType,
        found: ElementType,
    },
    #[error("column {column}: expected shape {expected}, got {found:?}")]
    ShapeMismatch {
        column: String,
        expected: String,
        found: Vec<usize>,
    },
    #[error("operation not permitted on a table opened for {0}")]
    WrongMode(&'static str),
    #[error("unknown column {0}")]
    UnknownColumn(String),
    #[error("column {column}: row {row} was never written")]
    CellNeverWritten { column: String, row: u64 },
    #[error("column {0}: shape not supported by this storage manager")]
    UnsupportedShape(String),
    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),
    #[error("column {column}: row {row} already written (rewrite not supported)")]
    RewriteUnsupported { column: String, row: u64 },
    #[error("ranks disagree on the table description: {0}")]
    DescMismatch(String),
    #[error("column {column}: row {row} was never written by any rank")]
    CoverageGap { column: String, row: u64 },
    #[error("column {column}: ranks fixed different shapes {first:?} and {second:?}")]
    ShapeConflict {
        column: String,
        first: Vec<usize>,
        second: Vec<usize>,
    },
    #[error("column {column}: row {row} written by more than one rank")]
    OverlapError { column: String, row: u64 },
    #[error("index corrupt: {0}")]
    IndexCorrupt(String),
    #[error("invalid options: {0}")]
    InvalidOptions(String),
    #[error("communicator: {0}")]
    Comm(#[from] CommError),
    #[error("remote rank failed: {0}")]
    Remote(String),
    #[error("i/o failed: {0}")]
    IoFailed(#[from] io::Error),
}

impl Error {
    /// Stable name of the error kind, used across language boundaries.
    pub fn name(&self) -> &'static str {
        match self {
            Error::AlreadyExists(_) => "AlreadyExists",
            Error::InvalidDesc(_) => "InvalidDesc",
            Error::LockHeld(_) => "LockHeld",
            Error::NotATable(_) => "NotATable",
            Error::CorruptDescriptor(_) => "CorruptDescriptor",
            Error::RowOutOfRange { .. } => "RowOutOfRange",
            Error::TypeMismatch { .. } => "TypeMismatch",
            Error::ShapeMismatch { .. } => "ShapeMismatch",
            Error::WrongMode(_) => "WrongMode",
            Error::UnknownColumn(_) => "UnknownColumn",
            Error::CellNeverWritten { .. } => "CellNeverWritten",
            Error::UnsupportedShape(_) => "UnsupportedShape",
            Error::UnsupportedOperation(_) => "UnsupportedOperation",
            Error::RewriteUnsupported { .. } => "RewriteUnsupported",
            Error::DescMismatch(_) => "DescMismatch",
            Error::CoverageGap { .. } => "CoverageGap",
            Error::ShapeConflict { .. } => "ShapeConflict",
            Error::OverlapError { .. } => "OverlapError",
            Error::IndexCorrupt(_) => "IndexCorrupt",
            Error::InvalidOptions(_) => "InvalidOptions",
            Error::Comm(e) => e.name(),
            Error::Remote(_) => "Remote",
            Error::IoFailed(_) => "IoFailed",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
