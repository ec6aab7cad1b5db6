//! Synthetic MeasurementSet-like main tables.
//!
//! Every row draws from its own SplitMix64 stream seeded with
//! `seed ^ row.wrapping_mul(ROW_STRIDE)`, so any cell can be recomputed
//! without generating the rows before it. See the README for the exact
//! draw order.

use std::collections::BTreeMap;
use std::path::Path;

use psm_core::{
    CellValue, ColumnDesc, Communicator, Complex64, CreateOptions, ElementType, ManagerId, ShapePolicy, Table,
    TableDesc,
};
use rand_xoshiro::rand_core::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;
use serde::Serialize;

use crate::manifest::Manifest;

pub const DEFAULT_NPOL: usize = 2;
pub const DEFAULT_NCHAN: usize = 2048;
pub const ROW_STRIDE: u64 = 0x9E37_79B9_7F4A_7C15;
pub const TIME_ORIGIN: f64 = 4.8e9;
pub const TIME_STEP: f64 = 10.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MsLikeSchema {
    pub npol: usize,
    pub nchan: usize,
    pub nrows: u64,
}

impl MsLikeSchema {
    pub fn data_cell_bytes(&self) -> u64 {
        (self.npol * self.nchan * ElementType::Complex64.width()) as u64
    }

    pub fn desc(&self, manager: ManagerId) -> TableDesc {
        let pc = vec![self.npol, self.nchan];
        TableDesc::new(
            vec![
                ColumnDesc::scalar("TIME", ElementType::Float64, manager),
                ColumnDesc::scalar("ANTENNA1", ElementType::Int32, manager),
                ColumnDesc::scalar("ANTENNA2", ElementType::Int32, manager),
                ColumnDesc::new("UVW", ElementType::Float64, ShapePolicy::FixedArray(vec![3]), manager),
                ColumnDesc::new("FLAG", ElementType::Bool, ShapePolicy::FixedArray(pc.clone()), manager),
                ColumnDesc::new("DATA", ElementType::Complex64, ShapePolicy::FixedArray(pc), manager),
            ],
            self.nrows,
        )
    }
}

/// Decoded content of one generated row.
#[derive(Clone, Debug, PartialEq)]
pub struct MsRow {
    pub time: f64,
    pub antenna1: i32,
    pub antenna2: i32,
    pub uvw: [f64; 3],
    /// `[npol][nchan]`, row-major.
    pub flag: Vec<bool>,
    pub data: Vec<Complex64>,
}

pub fn row_rng(seed: u64, row: u64) -> SplitMix64 {
    SplitMix64::seed_from_u64(seed ^ row.wrapping_mul(ROW_STRIDE))
}

/// 24 bits starting at `shift`, mapped exactly onto `[-1, 1)`.
fn unit24(bits: u64, shift: u32) -> f32 {
    ((bits >> shift) & 0xFF_FFFF) as f32 * (2.0 / 16_777_216.0) - 1.0
}

pub fn ms_row(schema: &MsLikeSchema, seed: u64, row: u64) -> MsRow {
    let mut rng = row_rng(seed, row);
    let antenna1 = (rng.next_u64() >> 58) as i32;
    let antenna2 = (rng.next_u64() >> 58) as i32;
    let uvw = [(); 3].map(|_| (rng.next_u64() >> 11) as f64 * (2000.0 / 9_007_199_254_740_992.0) - 1000.0);
    let n = schema.npol * schema.nchan;
    let mut flag = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n);
    for _ in 0..n {
        let d = rng.next_u64();
        data.push(Complex64::new(unit24(d, 40), unit24(d, 16)));
        flag.push(d & 0xF == 0);
    }
    MsRow {
        time: TIME_ORIGIN + TIME_STEP * row as f64,
        antenna1,
        antenna2,
        uvw,
        flag,
        data,
    }
}

/// Cells of one row in column order of [`MsLikeSchema::desc`].
pub fn ms_cells(schema: &MsLikeSchema, seed: u64, row: u64) -> Vec<(&'static str, CellValue)> {
    let r = ms_row(schema, seed, row);
    let pc = vec![schema.npol, schema.nchan];
    vec![
        ("TIME", CellValue::scalar(r.time)),
        ("ANTENNA1", CellValue::scalar(r.antenna1)),
        ("ANTENNA2", CellValue::scalar(r.antenna2)),
        ("UVW", CellValue::array(vec![3], &r.uvw).expect("3 values")),
        ("FLAG", CellValue::array(pc.clone(), &r.flag).expect("npol*nchan values")),
        ("DATA", CellValue::array(pc, &r.data).expect("npol*nchan values")),
    ]
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct GenSummary {
    pub rows: u64,
    pub data_cell_bytes: u64,
}

/// Writes a generated table from this process alone, plus its checksum
/// manifest.
pub fn gen_table(path: &Path, schema: &MsLikeSchema, manager: ManagerId, seed: u64) -> psm_core::Result<GenSummary> {
    let desc = schema.desc(manager);
    let opts = CreateOptions {
        comm: Some(Communicator::solo()),
        ..CreateOptions::default()
    };
    let mut table = Table::create_with(path, &desc, opts)?;
    let mut sums: BTreeMap<String, crc32fast::Hasher> = BTreeMap::new();
    for row in 0..schema.nrows {
        for (name, cell) in ms_cells(schema, seed, row) {
            sums.entry(name.to_string()).or_default().update(cell.as_bytes());
            table.put_cell(name, row, &cell)?;
        }
    }
    table.finalize()?;
    let columns = desc
        .columns
        .iter()
        .map(|c| (c.name.clone(), sums.remove(&c.name).unwrap_or_default().finalize()))
        .collect();
    Manifest { columns }.write(path)?;
    Ok(GenSummary {
        rows: schema.nrows,
        data_cell_bytes: schema.data_cell_bytes(),
    })
}
