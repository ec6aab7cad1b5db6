//! Binary layout of the parallel manager's data directory.
//!
//! `seg.<g>` holds an 8-byte header (`PSG1`, segment id u32) and then raw
//! payloads. `index` holds `PSGIDX1`, a u32 record count, the records, and a
//! trailing CRC32 of every preceding byte. Everything is little-endian.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::element::ElementType;
use crate::error::{Error, Result};

pub const DATA_DIR: &str = "table.psegd";
pub const INDEX_FILE: &str = "index";
pub const INDEX_MAGIC: &[u8; 7] = b"PSGIDX1";
pub const SEGMENT_MAGIC: &[u8; 4] = b"PSG1";
pub const SEGMENT_HEADER_LEN: u64 = 8;

pub fn data_dir(table: &Path) -> PathBuf {
    table.join(DATA_DIR)
}

pub fn segment_path(data_dir: &Path, segment_id: u32) -> PathBuf {
    data_dir.join(format!("seg.{segment_id}"))
}

pub fn segment_header(segment_id: u32) -> [u8; 8] {
    let mut h = [0u8; 8];
    h[..4].copy_from_slice(SEGMENT_MAGIC);
    h[4..].copy_from_slice(&segment_id.to_le_bytes());
    h
}

/// Locates one contiguous row range of one column inside a segment file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VarRecord {
    pub column_id: u32,
    pub row_begin: u64,
    pub row_count: u64,
    pub etype: ElementType,
    pub shape: Vec<usize>,
    pub segment_id: u32,
    /// Byte offset into the segment's payload area (after the header).
    pub offset: u64,
    pub length: u64,
    pub crc32: u32,
}

impl VarRecord {
    pub fn row_end(&self) -> u64 {
        self.row_begin + self.row_count
    }

    pub fn cell_bytes(&self) -> u64 {
        self.shape.iter().product::<usize>() as u64 * self.etype.width() as u64
    }

    pub fn contains(&self, row: u64) -> bool {
        (self.row_begin..self.row_end()).contains(&row)
    }

    pub(crate) fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.column_id.to_le_bytes());
        out.extend_from_slice(&self.row_begin.to_le_bytes());
        out.extend_from_slice(&self.row_count.to_le_bytes());
        out.push(self.etype.code());
        encode_shape(&self.shape, out);
        out.extend_from_slice(&self.segment_id.to_le_bytes());
        out.extend_from_slice(&self.offset.to_le_bytes());
        out.extend_from_slice(&self.length.to_le_bytes());
        out.extend_from_slice(&self.crc32.to_le_bytes());
    }

    pub(crate) fn decode_from(buf: &mut Cursor<'_>) -> Option<VarRecord> {
        let record = VarRecord {
            column_id: buf.u32()?,
            row_begin: buf.u64()?,
            row_count: buf.u64()?,
            etype: ElementType::from_code(buf.u8()?)?,
            shape: decode_shape(buf)?,
            segment_id: buf.u32()?,
            offset: buf.u64()?,
            length: buf.u64()?,
            crc32: buf.u32()?,
        };
        (record.row_count.checked_mul(record.cell_bytes()) == Some(record.length)).then_some(record)
    }
}

pub(crate) fn encode_shape(shape: &[usize], out: &mut Vec<u8>) {
    out.push(shape.len() as u8);
    for e in shape {
        out.extend_from_slice(&(*e as u64).to_le_bytes());
    }
}

pub(crate) fn decode_shape(buf: &mut Cursor<'_>) -> Option<Vec<usize>> {
    let ndim = buf.u8()?;
    (0..ndim).map(|_| buf.u64().map(|e| e as usize)).collect()
}

/// Little-endian reader over a byte slice.
pub(crate) struct Cursor<'a> {
    buf: &'a [u8],
}

impl<'a> Cursor<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Cursor { buf }
    }

    pub(crate) fn bytes(&mut self, n: usize) -> Option<&'a [u8]> {
        let (head, rest) = self.buf.split_at_checked(n)?;
        self.buf = rest;
        Some(head)
    }

    pub(crate) fn u8(&mut self) -> Option<u8> {
        self.bytes(1).map(|b| b[0])
    }

    pub(crate) fn u32(&mut self) -> Option<u32> {
        self.bytes(4).map(|b| u32::from_le_bytes(b.try_into().expect("4 bytes")))
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        self.bytes(8).map(|b| u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    pub(crate) fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }
}

pub fn encode_index(records: &[VarRecord]) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + records.len() * 64);
    out.extend_from_slice(INDEX_MAGIC);
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        r.encode_into(&mut out);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

pub fn decode_index(bytes: &[u8]) -> Result<Vec<VarRecord>> {
    let corrupt = |what: &str| Error::IndexCorrupt(what.to_string());
    if bytes.len() < INDEX_MAGIC.len() + 8 {
        return Err(corrupt("index truncated"));
    }
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
        return Err(corrupt("index checksum mismatch"));
    }
    let mut cur = Cursor::new(body);
    if cur.bytes(INDEX_MAGIC.len()) != Some(INDEX_MAGIC.as_slice()) {
        return Err(corrupt("bad index magic"));
    }
    let count = cur.u32().ok_or_else(|| corrupt("index truncated"))?;
    let records = (0..count)
        .map(|_| VarRecord::decode_from(&mut cur))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| corrupt("malformed index record"))?;
    if !cur.is_empty() {
        return Err(corrupt("trailing bytes in index"));
    }
    Ok(records)
}

/// Decoded index of a finalized table.
pub fn read_index(table: &Path) -> Result<Vec<VarRecord>> {
    let path = data_dir(table).join(INDEX_FILE);
    let bytes = fs::read(&path).map_err(|e| {
        Error::IndexCorrupt(format!("cannot read {}: {e}", path.display()))
    })?;
    decode_index(&bytes)
}
