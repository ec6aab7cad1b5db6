//! The contract every storage manager implements.
//!
//! A table binds each column to exactly one manager instance. Table-level code
//! validates rows, types and shapes, then hands payload I/O to the manager; it
//! never reads or writes payload bytes itself.

use crate::cell::CellValue;
use crate::error::Result;
use crate::schema::ManagerId;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Capabilities {
    /// A row may be written more than once; the last write wins.
    pub supports_rewrite: bool,
    /// Several processes may bind the same table and write disjoint rows.
    pub supports_parallel_bind: bool,
}

pub trait StorageManager {
    fn id(&self) -> ManagerId;

    fn capabilities(&self) -> Capabilities;

    /// Column ordinals (positions in the table descriptor) served here.
    fn columns(&self) -> &[usize];

    fn put_cell(&mut self, column: usize, row: u64, value: &CellValue) -> Result<()>;

    fn get_cell(&mut self, column: usize, row: u64) -> Result<CellValue>;

    /// Contiguous rows `begin..end` of one column, in row order.
    fn get_range(&mut self, column: usize, begin: u64, end: u64) -> Result<Vec<CellValue>> {
        (begin..end).map(|row| self.get_cell(column, row)).collect()
    }

    /// Flushes and closes. Must be idempotent.
    fn finalize(&mut self) -> Result<()>;

    /// Physical payload reads issued on behalf of `get_cell`/`get_range`.
    fn backend_read_count(&self, _column: usize) -> u64 {
        0
    }
}
