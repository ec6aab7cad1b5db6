#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use psm_core::comm::free_loopback_addr;
use psm_core::pseg::{read_index, VarRecord};
use psm_core::{CellValue, CommConfig, Communicator, ElementType, TableDesc};
use rand::Rng;

/// Runs `f` once per rank, each on its own thread with its own communicator.
pub fn run_ranks<T, F>(size: usize, f: F) -> Vec<T>
where
    T: Send + 'static,
    F: Fn(Communicator) -> T + Send + Sync + 'static,
{
    run_ranks_timeout(size, Duration::from_secs(20), f)
}

pub fn run_ranks_timeout<T, F>(size: usize, timeout: Duration, f: F) -> Vec<T>
where
    T: Send + 'static,
    F: Fn(Communicator) -> T + Send + Sync + 'static,
{
    let addr = free_loopback_addr().unwrap();
    let f = Arc::new(f);
    let handles: Vec<_> = (0..size)
        .map(|rank| {
            let f = Arc::clone(&f);
            let cfg = CommConfig {
                addr: addr.clone(),
                rank,
                size,
                timeout,
            };
            thread::spawn(move || f(Communicator::init(cfg).unwrap()))
        })
        .collect();
    handles.into_iter().map(|h| h.join().unwrap()).collect()
}

/// Bitwise reflected CRC-32 (polynomial 0xEDB88320).
pub fn crc32_oracle(data: &[u8]) -> u32 {
    let mut crc = !0u32;
    for &b in data {
        crc ^= b as u32;
        for _ in 0..8 {
            crc = if crc & 1 != 0 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
        }
    }
    !crc
}

/// Independent re-check of an index: per column, ranges are disjoint and
/// cover `0..nrows` exactly, lengths agree with shapes, and payload CRCs
/// match the segment bytes.
pub fn audit_table(table: &Path, desc: &TableDesc) -> Result<usize, String> {
    let records = read_index(table).map_err(|e| e.to_string())?;
    let mut by_col: BTreeMap<u32, Vec<&VarRecord>> = BTreeMap::new();
    for r in &records {
        by_col.entry(r.column_id).or_default().push(r);
    }
    for (ordinal, col) in desc.columns.iter().enumerate() {
        let mut covered = vec![0u8; desc.nrows as usize];
        for r in by_col.remove(&(ordinal as u32)).unwrap_or_default() {
            if r.etype != col.etype {
                return Err(format!("{}: etype", col.name));
            }
            let cell = r.shape.iter().product::<usize>() * r.etype.width();
            if r.length != r.row_count * cell as u64 {
                return Err(format!("{}: length", col.name));
            }
            for row in r.row_begin..r.row_begin + r.row_count {
                let slot = covered
                    .get_mut(row as usize)
                    .ok_or_else(|| format!("{}: row {row} beyond table", col.name))?;
                *slot += 1;
            }
            let seg = std::fs::read(table.join("table.psegd").join(format!("seg.{}", r.segment_id)))
                .map_err(|e| e.to_string())?;
            if &seg[..4] != b"PSG1" || seg[4..8] != r.segment_id.to_le_bytes() {
                return Err(format!("seg.{} header", r.segment_id));
            }
            let start = 8 + r.offset as usize;
            let payload = seg
                .get(start..start + r.length as usize)
                .ok_or_else(|| format!("seg.{} short", r.segment_id))?;
            if crc32_oracle(payload) != r.crc32 {
                return Err(format!("{}: crc rows {}+{}", col.name, r.row_begin, r.row_count));
            }
        }
        if let Some(row) = covered.iter().position(|&c| c != 1) {
            return Err(format!("{}: row {row} covered {} times", col.name, covered[row]));
        }
    }
    if !by_col.is_empty() {
        return Err("records for unknown columns".into());
    }
    Ok(records.len())
}

pub fn random_cell<R: Rng>(rng: &mut R, etype: ElementType, shape: &[usize]) -> CellValue {
    let n: usize = shape.iter().product();
    let mut bytes = vec![0u8; n * etype.width()];
    rng.fill(&mut bytes[..]);
    if etype == ElementType::Bool {
        bytes.iter_mut().for_each(|b| *b &= 1);
    }
    CellValue::from_bytes(etype, shape.to_vec(), bytes).unwrap()
}
