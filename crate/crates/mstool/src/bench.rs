use psm_core::{CellValue, ColumnDesc, ElementType, ManagerId, ShapePolicy, TableDesc};
use rand_xoshiro::rand_core::RngCore;
use serde::{Deserialize, Serialize};

use crate::ms::row_rng;

pub const BENCH_COLUMN: &str = "DATA";
pub const BENCH_SEED: u64 = 0xBE7C_4000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub mode: String,
    pub procs: usize,
    pub rows: u64,
    pub cell_bytes: u64,
    pub wall_seconds: f64,
    pub throughput_mb_s: f64,
    pub per_rank_seconds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_rank_backend_reads: Vec<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checksum: Option<String>,
}

/// MiB per second; zero for an empty or instantaneous run.
pub fn throughput_mb_s(rows: u64, cell_bytes: u64, wall_seconds: f64) -> f64 {
    if wall_seconds > 0.0 {
        rows as f64 * cell_bytes as f64 / wall_seconds / 1_048_576.0
    } else {
        0.0
    }
}

impl BenchReport {
    pub fn new(mode: &str, procs: usize, rows: u64, cell_bytes: u64, wall_seconds: f64) -> Self {
        BenchReport {
            mode: mode.to_string(),
            procs,
            rows,
            cell_bytes,
            wall_seconds,
            throughput_mb_s: throughput_mb_s(rows, cell_bytes, wall_seconds),
            per_rank_seconds: Vec::new(),
            per_rank_backend_reads: Vec::new(),
            checksum: None,
        }
    }

    /// Holds up to the precision lost in a JSON round trip.
    pub fn throughput_holds(&self) -> bool {
        let expect = throughput_mb_s(self.rows, self.cell_bytes, self.wall_seconds);
        (self.throughput_mb_s - expect).abs() <= THROUGHPUT_RTOL * expect.abs()
    }
}

pub const THROUGHPUT_RTOL: f64 = 1e-12;

/// What each benchmark child prints on stdout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankResult {
    pub rank: usize,
    pub seconds: f64,
    #[serde(default)]
    pub checksum: Option<u32>,
    #[serde(default)]
    pub backend_reads: Option<u64>,
}

pub fn bench_desc(rows: u64, cell_bytes: u64) -> TableDesc {
    TableDesc::new(
        vec![ColumnDesc::new(
            BENCH_COLUMN,
            ElementType::Float32,
            ShapePolicy::FixedArray(vec![(cell_bytes / 4) as usize]),
            ManagerId::Pseg,
        )],
        rows,
    )
}

/// Deterministic f32 cell for one benchmark row.
pub fn bench_cell(row: u64, cell_bytes: u64) -> CellValue {
    let mut rng = row_rng(BENCH_SEED, row);
    let mut bytes = vec![0u8; cell_bytes as usize];
    rng.fill_bytes(&mut bytes);
    CellValue::from_bytes(ElementType::Float32, vec![bytes.len() / 4], bytes).expect("f32 accepts any bits")
}
