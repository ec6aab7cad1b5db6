//! Parallel segment storage manager.
//!
//! Several processes bind the same table. Rank 0 owns the table descriptor;
//! other ranks keep a throwaway copy in a scratch directory and share the
//! payload store under `<table>/table.psegd/`. Writes are buffered per rank and
//! flushed at finalize in two layers: members of an aggregation group ship
//! their buffers to the group leader, each leader appends them to its own
//! `seg.<g>` file, and rank 0 merges the leaders' records into one `index`.
//!
//! Readers go through a per-column prefetch window that turns row-at-a-time
//! sequential access into batched reads.

mod index;
mod reader;
mod writer;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use index::{
    data_dir, decode_index, encode_index, read_index, segment_header, segment_path, VarRecord,
    DATA_DIR, INDEX_FILE, INDEX_MAGIC, SEGMENT_HEADER_LEN, SEGMENT_MAGIC,
};
pub use reader::{PrefetchCache, PsegReader};
pub use writer::{PendingRecord, PsegWriter};

use crate::comm::Communicator;
use crate::error::{Error, Result};
use crate::schema::{ManagerId, TableDesc};

pub const SCRATCH_ROOT: &str = "psm_scratch";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Aggregators {
    /// `ceil(sqrt(size))` groups.
    Auto,
    Fixed(usize),
}

impl Aggregators {
    pub fn resolve(self, size: usize) -> usize {
        match self {
            Aggregators::Auto => (1..=size).find(|g| g * g >= size).unwrap_or(1),
            Aggregators::Fixed(n) => n,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PsegOptions {
    /// Fix a variable-shape array column's shape at its first write.
    pub force_direct_array: bool,
    pub aggregators: Aggregators,
    pub scratch_dir: PathBuf,
    pub prefetch_rows: usize,
    pub prefetch_bytes_cap: u64,
}

impl Default for PsegOptions {
    fn default() -> Self {
        PsegOptions {
            force_direct_array: true,
            aggregators: Aggregators::Auto,
            scratch_dir: std::env::temp_dir(),
            prefetch_rows: 1024,
            prefetch_bytes_cap: 64 << 20,
        }
    }
}

impl PsegOptions {
    pub fn validate(&self) -> Result<()> {
        if self.prefetch_rows == 0 || self.prefetch_bytes_cap == 0 {
            return Err(Error::InvalidOptions(
                "prefetch_rows and prefetch_bytes_cap must be positive".into(),
            ));
        }
        if self.aggregators == Aggregators::Fixed(0) {
            return Err(Error::InvalidOptions("aggregators must be positive".into()));
        }
        Ok(())
    }
}

/// Partition of ranks into contiguous aggregation groups.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AggregationPlan {
    size: usize,
    /// First rank of each group, plus `size` as a sentinel.
    bounds: Vec<usize>,
}

impl AggregationPlan {
    pub fn new(size: usize, groups: usize) -> Result<Self> {
        if size == 0 || groups == 0 || groups > size {
            return Err(Error::InvalidOptions(format!(
                "{groups} aggregators for {size} ranks"
            )));
        }
        let bounds = (0..=groups).map(|g| g * size / groups).collect();
        Ok(AggregationPlan { size, bounds })
    }

    pub fn groups(&self) -> usize {
        self.bounds.len() - 1
    }

    pub fn group_of(&self, rank: usize) -> usize {
        self.bounds.partition_point(|&b| b <= rank) - 1
    }

    pub fn leader_of(&self, group: usize) -> usize {
        self.bounds[group]
    }

    pub fn members(&self, group: usize) -> std::ops::Range<usize> {
        self.bounds[group]..self.bounds[group + 1]
    }

    pub fn is_leader(&self, rank: usize) -> bool {
        self.leader_of(self.group_of(rank)) == rank
    }

    pub fn size(&self) -> usize {
        self.size
    }
}

/// Errors that cross rank boundaries keep their kind.
#[derive(Debug, Serialize, Deserialize)]
enum WireError {
    AlreadyExists(PathBuf),
    LockHeld(PathBuf),
    DescMismatch(String),
    InvalidOptions(String),
    UnsupportedOperation(String),
    CoverageGap { column: String, row: u64 },
    OverlapError { column: String, row: u64 },
    ShapeConflict { column: String, first: Vec<usize>, second: Vec<usize> },
    IndexCorrupt(String),
    Other(String),
}

impl From<&Error> for WireError {
    fn from(e: &Error) -> Self {
        match e {
            Error::AlreadyExists(p) => WireError::AlreadyExists(p.clone()),
            Error::LockHeld(p) => WireError::LockHeld(p.clone()),
            Error::DescMismatch(m) => WireError::DescMismatch(m.clone()),
            Error::InvalidOptions(m) => WireError::InvalidOptions(m.clone()),
            Error::UnsupportedOperation(m) => WireError::UnsupportedOperation(m.clone()),
            Error::CoverageGap { column, row } => WireError::CoverageGap {
                column: column.clone(),
                row: *row,
            },
            Error::OverlapError { column, row } => WireError::OverlapError {
                column: column.clone(),
                row: *row,
            },
            Error::ShapeConflict {
                column,
                first,
                second,
            } => WireError::ShapeConflict {
                column: column.clone(),
                first: first.clone(),
                second: second.clone(),
            },
            Error::IndexCorrupt(m) => WireError::IndexCorrupt(m.clone()),
            other => WireError::Other(format!("{}: {other}", other.name())),
        }
    }
}

impl From<WireError> for Error {
    fn from(e: WireError) -> Self {
        match e {
            WireError::AlreadyExists(p) => Error::AlreadyExists(p),
            WireError::LockHeld(p) => Error::LockHeld(p),
            WireError::DescMismatch(m) => Error::DescMismatch(m),
            WireError::InvalidOptions(m) => Error::InvalidOptions(m),
            WireError::UnsupportedOperation(m) => Error::UnsupportedOperation(m),
            WireError::CoverageGap { column, row } => Error::CoverageGap { column, row },
            WireError::OverlapError { column, row } => Error::OverlapError { column, row },
            WireError::ShapeConflict {
                column,
                first,
                second,
            } => Error::ShapeConflict {
                column,
                first,
                second,
            },
            WireError::IndexCorrupt(m) => Error::IndexCorrupt(m),
            WireError::Other(m) => Error::Remote(m),
        }
    }
}

pub(crate) fn encode_outcome(outcome: &Result<Vec<u8>>) -> Vec<u8> {
    match outcome {
        Ok(bytes) => {
            let mut out = Vec::with_capacity(bytes.len() + 1);
            out.push(0);
            out.extend_from_slice(bytes);
            out
        }
        Err(e) => {
            let mut out = vec![1];
            serde_json::to_writer(&mut out, &WireError::from(e)).expect("error serializes");
            out
        }
    }
}

pub(crate) fn decode_outcome(bytes: &[u8]) -> Result<Vec<u8>> {
    match bytes.split_first() {
        Some((0, rest)) => Ok(rest.to_vec()),
        Some((1, rest)) => {
            let wire: WireError = serde_json::from_slice(rest)
                .map_err(|e| Error::Remote(format!("undecodable remote error: {e}")))?;
            Err(wire.into())
        }
        _ => Err(Error::Remote("malformed outcome".into())),
    }
}

/// Gathers every rank's contribution at rank 0, lets rank 0 decide, and
/// hands the same outcome back to all ranks.
pub(crate) fn agree(
    comm: &Communicator,
    contribution: &Result<Vec<u8>>,
    decide: impl FnOnce(Vec<Result<Vec<u8>>>) -> Result<Vec<u8>>,
) -> Result<Vec<u8>> {
    let all = comm.gather(0, &encode_outcome(contribution))?;
    let verdict = if comm.is_master() {
        let decoded = all.iter().map(|b| decode_outcome(b)).collect();
        encode_outcome(&decide(decoded))
    } else {
        Vec::new()
    };
    decode_outcome(&comm.broadcast(0, &verdict)?)
}

/// Checks that the records of every pseg column tile `0..nrows` exactly once
/// with one shape.
pub fn audit_records(desc: &TableDesc, records: &[VarRecord]) -> Result<()> {
    let mut by_column: BTreeMap<u32, Vec<&VarRecord>> = BTreeMap::new();
    for r in records {
        let col = desc
            .columns
            .get(r.column_id as usize)
            .filter(|c| c.manager == ManagerId::Pseg)
            .ok_or_else(|| Error::IndexCorrupt(format!("record for unknown column {}", r.column_id)))?;
        if r.etype != col.etype || r.row_count == 0 {
            return Err(Error::IndexCorrupt(format!("bad record for column {}", col.name)));
        }
        by_column.entry(r.column_id).or_default().push(r);
    }
    for (ordinal, col) in desc.columns.iter().enumerate() {
        if col.manager != ManagerId::Pseg {
            continue;
        }
        let mut recs = by_column.remove(&(ordinal as u32)).unwrap_or_default();
        recs.sort_by_key(|r| r.row_begin);
        for pair in recs.windows(2) {
            if pair[1].row_begin < pair[0].row_end() {
                return Err(Error::OverlapError {
                    column: col.name.clone(),
                    row: pair[1].row_begin,
                });
            }
        }
        if let Some(first) = recs.first() {
            if let Some(other) = recs.iter().find(|r| r.shape != first.shape) {
                return Err(Error::ShapeConflict {
                    column: col.name.clone(),
                    first: first.shape.clone(),
                    second: other.shape.clone(),
                });
            }
            if !col.shape.accepts(&first.shape) {
                return Err(Error::IndexCorrupt(format!(
                    "column {} stored with shape {:?}",
                    col.name, first.shape
                )));
            }
        }
        let mut next = 0u64;
        for r in &recs {
            if r.row_begin > next {
                break;
            }
            next = r.row_end();
        }
        if next < desc.nrows {
            return Err(Error::CoverageGap {
                column: col.name.clone(),
                row: next,
            });
        }
        if recs.last().is_some_and(|r| r.row_end() > desc.nrows) {
            return Err(Error::IndexCorrupt(format!(
                "column {} has rows beyond the table",
                col.name
            )));
        }
    }
    Ok(())
}
