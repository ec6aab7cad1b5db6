use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{self, Read, Seek, SeekFrom};
use std::path::{Path, PathBuf};

use crate::cell::CellValue;
use crate::error::{Error, Result};
use crate::schema::{ManagerId, TableDesc};
use crate::stman::{Capabilities, StorageManager};

use super::index::{self, VarRecord, SEGMENT_HEADER_LEN, SEGMENT_MAGIC};
use super::{audit_records, PsegOptions};

const VERIFY_CHUNK: u64 = 8 << 20;

/// Per-column window of decoded cells from the last backend fetch.
#[derive(Debug, Default)]
pub struct PrefetchCache {
    window_begin: u64,
    cells: Vec<CellValue>,
    last_row: Option<u64>,
    backend_reads: u64,
}

impl PrefetchCache {
    pub fn window_begin(&self) -> u64 {
        self.window_begin
    }

    pub fn window_rows(&self) -> usize {
        self.cells.len()
    }

    pub fn backend_read_count(&self) -> u64 {
        self.backend_reads
    }

    fn lookup(&self, row: u64) -> Option<&CellValue> {
        let i = row.checked_sub(self.window_begin)?;
        self.cells.get(usize::try_from(i).ok()?)
    }
}

/// Read side of the parallel manager over a finalized table.
#[derive(Debug)]
pub struct PsegReader {
    desc: TableDesc,
    ordinals: Vec<usize>,
    data_dir: PathBuf,
    records: BTreeMap<usize, Vec<VarRecord>>,
    verified: HashSet<(usize, usize)>,
    segments: HashMap<u32, File>,
    caches: BTreeMap<usize, PrefetchCache>,
    prefetch_rows: u64,
    prefetch_bytes_cap: u64,
    verify_reads: u64,
    sealed: bool,
}

impl PsegReader {
    pub fn open(table: &Path, desc: &TableDesc, opts: &PsegOptions) -> Result<Self> {
        opts.validate()?;
        let records = index::read_index(table)?;
        audit_records(desc, &records).map_err(|e| match e {
            Error::IndexCorrupt(m) => Error::IndexCorrupt(m),
            other => Error::IndexCorrupt(other.to_string()),
        })?;
        let mut by_column: BTreeMap<usize, Vec<VarRecord>> = BTreeMap::new();
        let mut ordinals = Vec::new();
        for (ordinal, col) in desc.columns.iter().enumerate() {
            if col.manager == ManagerId::Pseg {
                ordinals.push(ordinal);
                by_column.insert(ordinal, Vec::new());
            }
        }
        for r in records {
            by_column
                .get_mut(&(r.column_id as usize))
                .expect("audited")
                .push(r);
        }
        for recs in by_column.values_mut() {
            recs.sort_by_key(|r| r.row_begin);
        }
        let caches = ordinals.iter().map(|&o| (o, PrefetchCache::default())).collect();
        Ok(PsegReader {
            desc: desc.clone(),
            ordinals,
            data_dir: index::data_dir(table),
            records: by_column,
            verified: HashSet::new(),
            segments: HashMap::new(),
            caches,
            prefetch_rows: opts.prefetch_rows as u64,
            prefetch_bytes_cap: opts.prefetch_bytes_cap,
            verify_reads: 0,
            sealed: false,
        })
    }

    /// Marks the reader as standing in for a writable binding; puts then
    /// report that rewriting is unsupported.
    pub fn sealed(mut self) -> Self {
        self.sealed = true;
        self
    }

    pub fn records(&self, ordinal: usize) -> &[VarRecord] {
        self.records.get(&ordinal).map_or(&[], Vec::as_slice)
    }

    pub fn cache(&self, ordinal: usize) -> Option<&PrefetchCache> {
        self.caches.get(&ordinal)
    }

    /// Reads spent on checksum verification, kept apart from data fetches.
    pub fn verify_read_count(&self) -> u64 {
        self.verify_reads
    }

    pub fn get(&mut self, ordinal: usize, row: u64) -> Result<CellValue> {
        let nrows = self.desc.nrows;
        let Some(cache) = self.caches.get_mut(&ordinal) else {
            return Err(Error::UnknownColumn(format!("#{ordinal}")));
        };
        if row >= nrows {
            return Err(Error::RowOutOfRange { row, nrows });
        }
        if let Some(cell) = cache.lookup(row) {
            let cell = cell.clone();
            cache.last_row = Some(row);
            return Ok(cell);
        }
        let sequential = match cache.last_row {
            Some(last) => last + 1 == row,
            None => row == 0,
        };
        let recs = &self.records[&ordinal];
        let idx = recs.partition_point(|r| r.row_end() <= row);
        let Some(rec) = recs.get(idx).filter(|r| r.contains(row)).cloned() else {
            return Err(Error::CellNeverWritten {
                column: self.desc.columns[ordinal].name.clone(),
                row,
            });
        };
        let cell_bytes = rec.cell_bytes();
        let n = if sequential {
            let by_cap = (self.prefetch_bytes_cap / cell_bytes).max(1);
            self.prefetch_rows.min(rec.row_end() - row).min(by_cap)
        } else {
            1
        };
        let whole = row == rec.row_begin && n == rec.row_count;
        let checked = self.verified.contains(&(ordinal, idx));
        if !checked && !whole {
            self.verify(&rec)?;
            self.verified.insert((ordinal, idx));
        }
        let offset = SEGMENT_HEADER_LEN + rec.offset + (row - rec.row_begin) * cell_bytes;
        let buf = self.read_at(rec.segment_id, offset, n * cell_bytes)?;
        if !checked && whole {
            if crc32fast::hash(&buf) != rec.crc32 {
                return Err(self.crc_error(&rec));
            }
            self.verified.insert((ordinal, idx));
        }
        let cells = buf
            .chunks_exact(cell_bytes as usize)
            .map(|chunk| CellValue::from_bytes(rec.etype, rec.shape.clone(), chunk.to_vec()))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::IndexCorrupt(format!("undecodable payload: {e}")))?;
        let cache = self.caches.get_mut(&ordinal).expect("checked above");
        cache.backend_reads += 1;
        cache.window_begin = row;
        cache.cells = cells;
        cache.last_row = Some(row);
        Ok(cache.cells[0].clone())
    }

    fn crc_error(&self, rec: &VarRecord) -> Error {
        Error::IndexCorrupt(format!(
            "checksum mismatch in column {} rows {}..{}",
            self.desc.columns[rec.column_id as usize].name,
            rec.row_begin,
            rec.row_end()
        ))
    }

    fn verify(&mut self, rec: &VarRecord) -> Result<()> {
        let mut hasher = crc32fast::Hasher::new();
        let mut done = 0;
        while done < rec.length {
            let len = VERIFY_CHUNK.min(rec.length - done);
            let buf = self.read_at(rec.segment_id, SEGMENT_HEADER_LEN + rec.offset + done, len)?;
            self.verify_reads += 1;
            hasher.update(&buf);
            done += len;
        }
        if hasher.finalize() != rec.crc32 {
            return Err(self.crc_error(rec));
        }
        Ok(())
    }

    fn segment(&mut self, id: u32) -> Result<&mut File> {
        if !self.segments.contains_key(&id) {
            let path = index::segment_path(&self.data_dir, id);
            let mut file = File::open(&path).map_err(|e| {
                Error::IndexCorrupt(format!("cannot open {}: {e}", path.display()))
            })?;
            let mut header = [0u8; SEGMENT_HEADER_LEN as usize];
            file.read_exact(&mut header)
                .map_err(|_| Error::IndexCorrupt(format!("{} truncated", path.display())))?;
            if &header[..4] != SEGMENT_MAGIC || header[4..] != id.to_le_bytes() {
                return Err(Error::IndexCorrupt(format!("bad header in {}", path.display())));
            }
            self.segments.insert(id, file);
        }
        Ok(self.segments.get_mut(&id).expect("inserted"))
    }

    fn read_at(&mut self, segment: u32, offset: u64, len: u64) -> Result<Vec<u8>> {
        let file = self.segment(segment)?;
        let mut buf = vec![0u8; len as usize];
        file.seek(SeekFrom::Start(offset))?;
        file.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => {
                Error::IndexCorrupt(format!("segment {segment} shorter than its index"))
            }
            _ => Error::IoFailed(e),
        })?;
        Ok(buf)
    }
}

impl StorageManager for PsegReader {
    fn id(&self) -> ManagerId {
        ManagerId::Pseg
    }

    fn capabilities(&self) -> Capabilities {
        Capabilities {
            supports_rewrite: false,
            supports_parallel_bind: true,
        }
    }

    fn columns(&self) -> &[usize] {
        &self.ordinals
    }

    fn put_cell(&mut self, _column: usize, _row: u64, _value: &CellValue) -> Result<()> {
        if self.sealed {
            Err(Error::UnsupportedOperation("rewrite".into()))
        } else {
            Err(Error::WrongMode("reading"))
        }
    }

    fn get_cell(&mut self, column: usize, row: u64) -> Result<CellValue> {
        self.get(column, row)
    }

    fn finalize(&mut self) -> Result<()> {
        Ok(())
    }

    fn backend_read_count(&self, column: usize) -> u64 {
        self.caches.get(&column).map_or(0, PrefetchCache::backend_read_count)
    }
}
