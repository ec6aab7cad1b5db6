//! Workflow harness over `psm-core`: synthetic MeasurementSet-like tables,
//! conversion between storage managers, channel splitting, verification and
//! benchmarks.

pub mod bench;
pub mod manifest;
pub mod ms;
pub mod ops;
pub mod procs;

pub use ops::{usage, UsageError};
