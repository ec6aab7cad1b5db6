//! Serial storage manager with a dense tiled layout.
//!
//! Each column lives in `<column>.tsm`: a 16-byte header (`TSM1`, version
//! u16, rows_per_tile u16, cell_bytes u64, little-endian) followed by the
//! preallocated payload. A sidecar `<column>.tsm.map` holds one bit per row
//! (LSB-first) so unwritten rows are distinguishable from zero-valued ones.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use crate::cell::CellValue;
use crate::error::{Error, Result};
use crate::schema::{ColumnDesc, ManagerId};
use crate::stman::{Capabilities, StorageManager};

pub const TSM_MAGIC: &[u8; 4] = b"TSM1";
pub const TSM_VERSION: u16 = 1;
pub const TSM_HEADER_LEN: u64 = 16;
pub const DEFAULT_ROWS_PER_TILE: u16 = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileLayout {
    pub rows_per_tile: u16,
    pub cell_bytes: u64,
}

impl TileLayout {
    pub fn offset(&self, row: u64) -> u64 {
        let rpt = u64::from(self.rows_per_tile);
        TSM_HEADER_LEN + (row / rpt) * rpt * self.cell_bytes + (row % rpt) * self.cell_bytes
    }

    fn header(&self) -> [u8; 16] {
        let mut h = [0u8; 16];
        h[..4].copy_from_slice(TSM_MAGIC);
        h[4..6].copy_from_slice(&TSM_VERSION.to_le_bytes());
        h[6..8].copy_from_slice(&self.rows_per_tile.to_le_bytes());
        h[8..].copy_from_slice(&self.cell_bytes.to_le_bytes());
        h
    }
}

pub fn payload_path(dir: &Path, column: &str) -> PathBuf {
    dir.join(format!("{column}.tsm"))
}

pub fn bitmap_path(dir: &Path, column: &str) -> PathBuf {
    dir.join(format!("{column}.tsm.map"))
}

/// One column stored in the tiled layout.
#[derive(Debug)]
pub struct TiledColumn {
    desc: ColumnDesc,
    shape: Vec<usize>,
    nrows: u64,
    layout: TileLayout,
    payload: File,
    bitmap_file: File,
    bitmap: Vec<u8>,
    reads: u64,
}

impl TiledColumn {
    pub fn create(desc: &ColumnDesc, nrows: u64, dir: &Path, rows_per_tile: u16) -> Result<Self> {
        if rows_per_tile == 0 {
            return Err(Error::InvalidOptions("rows_per_tile must be positive".into()));
        }
        let (shape, cell_bytes) = fixed_geometry(desc)?;
        let layout = TileLayout {
            rows_per_tile,
            cell_bytes,
        };
        let mut payload = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(payload_path(dir, &desc.name))?;
        payload.write_all(&layout.header())?;
        payload.set_len(TSM_HEADER_LEN + nrows * cell_bytes)?;
        let bitmap = vec![0u8; nrows.div_ceil(8) as usize];
        let mut bitmap_file = OpenOptions::new()
            .read(true)
            .write(true)
            .create_new(true)
            .open(bitmap_path(dir, &desc.name))?;
        bitmap_file.write_all(&bitmap)?;
        Ok(TiledColumn {
            desc: desc.clone(),
            shape,
            nrows,
            layout,
            payload,
            bitmap_file,
            bitmap,
            reads: 0,
        })
    }

    pub fn open(desc: &ColumnDesc, nrows: u64, dir: &Path, writable: bool) -> Result<Self> {
        let (shape, cell_bytes) = fixed_geometry(desc)?;
        let path = payload_path(dir, &desc.name);
        let mut payload = OpenOptions::new().read(true).write(writable).open(&path)?;
        let mut header = [0u8; 16];
        payload.read_exact(&mut header)?;
        let bad = |what: &str| Error::CorruptDescriptor(format!("{}: {what}", path.display()));
        if &header[..4] != TSM_MAGIC {
            return Err(bad("bad magic"));
        }
        if u16::from_le_bytes([header[4], header[5]]) != TSM_VERSION {
            return Err(bad("unsupported version"));
        }
        let rows_per_tile = u16::from_le_bytes([header[6], header[7]]);
        let stored_cell_bytes = u64::from_le_bytes(header[8..].try_into().expect("8 bytes"));
        if rows_per_tile == 0 || stored_cell_bytes != cell_bytes {
            return Err(bad("header disagrees with column description"));
        }
        if payload.metadata()?.len() != TSM_HEADER_LEN + nrows * cell_bytes {
            return Err(bad("payload size disagrees with row count"));
        }
        let mut bitmap_file = OpenOptions::new()
            .read(true)
            .write(writable)
            .open(bitmap_path(dir, &desc.name))?;
        let mut bitmap = Vec::new();
        bitmap_file.read_to_end(&mut bitmap)?;
        if bitmap.len() as u64 != nrows.div_ceil(8) {
            return Err(bad("bitmap size disagrees with row count"));
        }
        Ok(TiledColumn {
            desc: desc.clone(),
            shape,
            nrows,
            layout: TileLayout {
                rows_per_tile,
                cell_bytes,
            },
            payload,
            bitmap_file,
            bitmap,
            reads: 0,
        })
    }

    pub fn layout(&self) -> TileLayout {
        self.layout
    }

    pub fn read_count(&self) -> u64 {
        self.reads
    }

    pub fn is_written(&self, row: u64) -> bool {
        row < self.nrows && self.bitmap[(row / 8) as usize] & (1 << (row % 8)) != 0
    }

    fn check_row(&self, row: u64) -> Result<()> {
        if row >= self.nrows {
            return Err(Error::RowOutOfRange {
                row,
                nrows: self.nrows,
            });
        }
        Ok(())
    }

    pub fn put_cell(&mut self, row: u64, value: &CellValue) -> Result<()> {
        self.check_row(row)?;
        self.desc.check_value(value)?;
        self.payload.seek(SeekFrom::Start(self.layout.offset(row)))?;
        self.payload.write_all(value.as_bytes())?;
        let byte = (row / 8) as usize;
        self.bitmap[byte] |= 1 << (row % 8);
        self.bitmap_file.seek(SeekFrom::Start(byte as u64))?;
        self.bitmap_file.write_all(&self.bitmap[byte..=byte])?;
        Ok(())
    }

    pub fn get_cell(&mut self, row: u64) -> Result<CellValue> {
        Ok(self.get_range(row, row + 1)?.remove(0))
    }

    /// Reads rows `begin..end` with a single backend read.
    pub fn get_range(&mut self, begin: u64, end: u64) -> Result<Vec<CellValue>> {
        if begin >= end || end > self.nrows {
            return Err(Error::RowOutOfRange {
                row: if begin >= end { begin } else { end - 1 },
                nrows: self.nrows,
            });
        }
        if let Some(row) = (begin..end).find(|&r| !self.is_written(r)) {
            return Err(Error::CellNeverWritten {
                column: self.desc.name.clone(),
                row,
            });
        }
        let cell = self.layout.cell_bytes as usize;
        let mut buf = vec![0u8; cell * (end - begin) as usize];
        self.payload.seek(SeekFrom::Start(self.layout.offset(begin)))?;
        self.payload.read_exact(&mut buf)?;
        self.reads += 1;
        buf.chunks_exact(cell)
            .map(|chunk| CellValue::from_bytes(self.desc.etype, self.shape.clone(), chunk.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::CorruptDescriptor(format!("column {}: {e}", self.desc.name)))
    }

    pub fn flush(&mut self) -> Result<()> {
        self.payload.sync_data()?;
        self.bitmap_file.sync_data()?;
        Ok(())
    }
}

fn fixed_geometry(desc: &ColumnDesc) -> Result<(Vec<usize>, u64)> {
    match (desc.shape.fixed_shape(), desc.cell_bytes()) {
        (Some(shape), Some(bytes)) => Ok((shape.to_vec(), bytes)),
        _ => Err(Error::UnsupportedShape(desc.name.clone())),
    }
}

/// [`StorageManager`] wrapper binding one [`TiledColumn`] to its ordinal.
#[derive(Debug)]
pub struct TiledManager {
    ordinal: [usize; 1],
    column: TiledColumn,
}

impl TiledManager {
    pub fn new(ordinal: usize, column: TiledColumn) -> Self {
        TiledManager {
            ordinal: [ordinal],
            column,
        }
    }

    pub fn column(&self) -> &TiledColumn {
        &self.column
    }
}

impl StorageManager for TiledManager {
    fn id(&self) -> ManagerId {
        ManagerId::Tiled
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_rewrite: true,
            supports_parallel_bind: false,
        }
    }

    fn columns(&self) -> &[usize] {
        &self.ordinal
    }

    fn put_cell(&mut self, column: usize, row: u64, value: &CellValue) -> Result<()> {
        debug_assert_eq!(column, self.ordinal[0]);
        self.column.put_cell(row, value)
    }

    fn get_cell(&mut self, column: usize, row: u64) -> Result<CellValue> {
        debug_assert_eq!(column, self.ordinal[0]);
        self.column.get_cell(row)
    }

    fn get_range(&mut self, column: usize, begin: u64, end: u64) -> Result<Vec<CellValue>> {
        debug_assert_eq!(column, self.ordinal[0]);
        self.column.get_range(begin, end)
    }

    fn finalize(&mut self) -> Result<()> {
        self.column.flush()
    }

    fn backend_read_count(&self, _column: usize) -> u64 {
        self.column.read_count()
    }
}

#[cfg(test)]
mod tests {
    use std::collections::HashMap;

    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::element::ElementType;
    use crate::schema::ShapePolicy;

    fn f64_col() -> ColumnDesc {
        ColumnDesc::scalar("X", ElementType::Float64, ManagerId::Tiled)
    }

    #[test]
    fn preallocated_file_size_follows_layout() {
        let dir = tempfile::tempdir().unwrap();
        let col = TiledColumn::create(&f64_col(), 10, dir.path(), 4).unwrap();
        // Dense layout: last byte of row 9 sits at offset(9) + cell_bytes.
        let expected = col.layout().offset(9) + 8;
        assert_eq!(expected, 16 + 10 * 8);
        let len = std::fs::metadata(payload_path(dir.path(), "X")).unwrap().len();
        assert_eq!(len, expected);
        assert_eq!(std::fs::metadata(bitmap_path(dir.path(), "X")).unwrap().len(), 2);
    }

    #[test]
    fn header_bytes() {
        let dir = tempfile::tempdir().unwrap();
        TiledColumn::create(&f64_col(), 0, dir.path(), 4).unwrap();
        let bytes = std::fs::read(payload_path(dir.path(), "X")).unwrap();
        assert_eq!(bytes, [b'T', b'S', b'M', b'1', 1, 0, 4, 0, 8, 0, 0, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_variable_shape() {
        let dir = tempfile::tempdir().unwrap();
        let col = ColumnDesc::new(
            "V",
            ElementType::Float32,
            ShapePolicy::VariableArray { ndim: 1 },
            ManagerId::Tiled,
        );
        assert!(matches!(
            TiledColumn::create(&col, 4, dir.path(), 16),
            Err(Error::UnsupportedShape(_))
        ));
    }

    #[test]
    fn rewrite_last_writer_wins() {
        let dir = tempfile::tempdir().unwrap();
        let mut col = TiledColumn::create(&f64_col(), 10, dir.path(), 4).unwrap();
        col.put_cell(5, &CellValue::scalar(1.0f64)).unwrap();
        col.put_cell(5, &CellValue::scalar(2.0f64)).unwrap();
        assert_eq!(col.get_cell(5).unwrap().get_scalar::<f64>(), Some(2.0));
        assert!(matches!(
            col.get_cell(6),
            Err(Error::CellNeverWritten { row: 6, .. })
        ));
        assert!(matches!(
            col.put_cell(10, &CellValue::scalar(0.0f64)),
            Err(Error::RowOutOfRange { row: 10, nrows: 10 })
        ));
    }

    #[test]
    fn zero_value_is_not_unwritten() {
        let dir = tempfile::tempdir().unwrap();
        let mut col = TiledColumn::create(&f64_col(), 3, dir.path(), 16).unwrap();
        col.put_cell(1, &CellValue::scalar(0.0f64)).unwrap();
        assert!(col.get_cell(1).is_ok());
        assert!(col.get_cell(0).is_err());
    }

    #[test]
    fn random_array_round_trip_against_map() {
        let dir = tempfile::tempdir().unwrap();
        let desc = ColumnDesc::new(
            "A",
            ElementType::Float32,
            ShapePolicy::FixedArray(vec![2, 3]),
            ManagerId::Tiled,
        );
        let mut col = TiledColumn::create(&desc, 100, dir.path(), 16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut oracle = HashMap::new();
        for _ in 0..300 {
            let row = rng.random_range(0..100u64);
            let vals: Vec<f32> = (0..6).map(|_| rng.random()).collect();
            let cell = CellValue::array(vec![2, 3], &vals).unwrap();
            col.put_cell(row, &cell).unwrap();
            oracle.insert(row, cell);
        }
        for row in 0..100 {
            match oracle.get(&row) {
                Some(cell) => assert_eq!(&col.get_cell(row).unwrap(), cell),
                None => assert!(col.get_cell(row).is_err()),
            }
        }
        drop(col);
        let mut reopened = TiledColumn::open(&desc, 100, dir.path(), false).unwrap();
        for (row, cell) in &oracle {
            assert_eq!(&reopened.get_cell(*row).unwrap(), cell);
        }
    }

    #[test]
    fn range_reads() {
        let dir = tempfile::tempdir().unwrap();
        let mut col = TiledColumn::create(&f64_col(), 10, dir.path(), 4).unwrap();
        for r in 0..10 {
            col.put_cell(r, &CellValue::scalar(r as f64 * 0.5)).unwrap();
        }
        let before = col.read_count();
        let all = col.get_range(0, 10).unwrap();
        assert_eq!(col.read_count(), before + 1);
        let per_row: Vec<_> = (0..10).map(|r| col.get_cell(r).unwrap()).collect();
        assert_eq!(all, per_row);

        let across = col.get_range(3, 5).unwrap();
        let vals: Vec<f64> = across.iter().map(|c| c.get_scalar().unwrap()).collect();
        assert_eq!(vals, [1.5, 2.0]);

        assert!(matches!(col.get_range(4, 4), Err(Error::RowOutOfRange { .. })));
        assert!(matches!(col.get_range(8, 11), Err(Error::RowOutOfRange { .. })));
    }

    #[test]
    fn range_with_hole_reports_first_unwritten_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut col = TiledColumn::create(&f64_col(), 6, dir.path(), 4).unwrap();
        for r in [0, 1, 3] {
            col.put_cell(r, &CellValue::scalar(1.0f64)).unwrap();
        }
        assert!(matches!(
            col.get_range(0, 4),
            Err(Error::CellNeverWritten { row: 2, .. })
        ));
    }

    #[test]
    fn open_detects_header_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        TiledColumn::create(&f64_col(), 4, dir.path(), 4).unwrap();
        let other = ColumnDesc::scalar("X", ElementType::Float32, ManagerId::Tiled);
        assert!(TiledColumn::open(&other, 4, dir.path(), false).is_err());
        assert!(TiledColumn::open(&f64_col(), 5, dir.path(), false).is_err());
        assert!(TiledColumn::open(&f64_col(), 4, dir.path(), false).is_ok());
    }
}
