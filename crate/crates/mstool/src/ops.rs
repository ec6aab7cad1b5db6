use std::fmt;
use std::ops::Range;
use std::path::Path;

use psm_core::{
    CellValue, Communicator, CreateOptions, Error, ManagerId, Mode, OpenOptions, ShapePolicy, Table, TableDesc,
};
use serde::Serialize;

/// Bad invocation; maps to exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Opens an existing table for reading; a missing or unparsable table is a
/// usage error.
pub fn open_input(path: &Path, opts: &OpenOptions) -> anyhow::Result<Table> {
    match Table::open_with(path, Mode::Read, opts) {
        Ok(t) => Ok(t),
        Err(e @ (Error::NotATable(_) | Error::CorruptDescriptor(_))) => Err(usage(format!("{}: {e}", path.display()))),
        Err(e) => Err(e.into()),
    }
}

pub fn require_absent(path: &Path) -> anyhow::Result<()> {
    if path.exists() {
        return Err(usage(format!("{} already exists", path.display())));
    }
    Ok(())
}

/// Rows owned by `rank` when `nrows` are split in blocks of `ceil(nrows/size)`.
pub fn block_range(nrows: u64, size: usize, rank: usize) -> Range<u64> {
    let per = nrows.div_ceil(size as u64);
    let begin = (rank as u64 * per).min(nrows);
    begin..((rank as u64 + 1) * per).min(nrows)
}

/// Shape every cell of a column has: the declared one, or the first cell's
/// for variable columns. `None` for an empty variable column.
pub fn effective_shape(table: &mut Table, ordinal: usize) -> psm_core::Result<Option<Vec<usize>>> {
    let col = &table.desc().columns[ordinal];
    match &col.shape {
        ShapePolicy::Scalar => Ok(Some(Vec::new())),
        ShapePolicy::FixedArray(s) => Ok(Some(s.clone())),
        ShapePolicy::VariableArray { .. } if table.nrows() == 0 => Ok(None),
        ShapePolicy::VariableArray { .. } => {
            let name = col.name.clone();
            Ok(Some(table.get_cell(&name, 0)?.shape().to_vec()))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Mismatch {
    pub column: String,
    pub row: u64,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Verdict {
    Match,
    Schema(String),
    Cell(Mismatch),
}

fn schema_diff(a: &mut Table, b: &mut Table) -> psm_core::Result<Option<String>> {
    let (da, db) = (a.desc().clone(), b.desc().clone());
    if da.nrows != db.nrows {
        return Ok(Some(format!("nrows {} vs {}", da.nrows, db.nrows)));
    }
    if da.columns.len() != db.columns.len() {
        return Ok(Some(format!("{} vs {} columns", da.columns.len(), db.columns.len())));
    }
    for (i, (ca, cb)) in da.columns.iter().zip(&db.columns).enumerate() {
        if ca.name != cb.name || ca.etype != cb.etype {
            return Ok(Some(format!(
                "column {i}: {} {} vs {} {}",
                ca.name, ca.etype, cb.name, cb.etype
            )));
        }
        if ca.shape.ndim() != cb.shape.ndim() {
            return Ok(Some(format!("column {}: rank {} vs {}", ca.name, ca.shape.ndim(), cb.shape.ndim())));
        }
        let (sa, sb) = (effective_shape(a, i)?, effective_shape(b, i)?);
        if da.nrows > 0 && sa != sb {
            return Ok(Some(format!("column {}: shape {sa:?} vs {sb:?}", ca.name)));
        }
    }
    Ok(None)
}

/// Row-by-row, bit-exact comparison of two tables.
pub fn verify(a: &Path, b: &Path) -> anyhow::Result<Verdict> {
    let mut ta = open_input(a, &OpenOptions::default())?;
    let mut tb = open_input(b, &OpenOptions::default())?;
    if let Some(diff) = schema_diff(&mut ta, &mut tb)? {
        return Ok(Verdict::Schema(diff));
    }
    let names: Vec<String> = ta.desc().columns.iter().map(|c| c.name.clone()).collect();
    for row in 0..ta.nrows() {
        for name in &names {
            if ta.get_cell(name, row)? != tb.get_cell(name, row)? {
                return Ok(Verdict::Cell(Mismatch {
                    column: name.clone(),
                    row,
                }));
            }
        }
    }
    Ok(Verdict::Match)
}

/// Copies `rows` of every column, column by column.
pub fn copy_rows(input: &mut Table, output: &mut Table, rows: Range<u64>) -> psm_core::Result<()> {
    let names: Vec<String> = input.desc().columns.iter().map(|c| c.name.clone()).collect();
    for name in &names {
        for row in rows.clone() {
            output.put_cell(name, row, &input.get_cell(name, row)?)?;
        }
    }
    Ok(())
}

const SPLIT_COLUMNS: [&str; 2] = ["DATA", "FLAG"];

/// Copies `input` into a new table keeping only channels `c0..c1` of the
/// DATA and FLAG columns. Reads one row at a time.
pub fn split(input: &Path, output: &Path, c0: usize, c1: usize) -> anyhow::Result<()> {
    let mut src = open_input(input, &OpenOptions::default())?;
    require_absent(output)?;
    let data = src
        .desc()
        .column_index("DATA")
        .map_err(|_| usage(format!("{} has no DATA column", input.display())))?;
    if src.desc().columns[data].shape.ndim() == 0 {
        return Err(usage("DATA column is scalar"));
    }
    let nchan = effective_shape(&mut src, data)?.and_then(|s| s.last().copied());
    if c0 >= c1 || nchan.is_some_and(|n| c1 > n) {
        return Err(usage(format!("channel range {c0}..{c1} outside 0..{}", nchan.unwrap_or(0))));
    }

    let mut desc: TableDesc = src.desc().clone();
    let mut sliced = vec![false; desc.columns.len()];
    for (i, col) in desc.columns.iter_mut().enumerate() {
        if !SPLIT_COLUMNS.contains(&col.name.as_str()) || col.shape.ndim() == 0 {
            continue;
        }
        sliced[i] = true;
        if let ShapePolicy::FixedArray(shape) = &mut col.shape {
            let last = shape.len() - 1;
            if c1 > shape[last] {
                return Err(usage(format!("column {} has only {} channels", col.name, shape[last])));
            }
            shape[last] = c1 - c0;
        }
    }
    let opts = CreateOptions {
        comm: Some(Communicator::solo()),
        ..CreateOptions::default()
    };
    let mut dst = Table::create_with(output, &desc, opts)?;
    for row in 0..desc.nrows {
        for (col, &slice) in desc.columns.iter().zip(&sliced) {
            let cell = src.get_cell(&col.name, row)?;
            let cell = if slice {
                cell.slice_axis(cell.shape().len() - 1, c0, c1)?
            } else {
                cell
            };
            dst.put_cell(&col.name, row, &cell)?;
        }
    }
    dst.finalize()?;
    Ok(())
}

/// Column with the largest cells, by effective shape.
pub fn largest_column(table: &mut Table) -> psm_core::Result<Option<(String, u64)>> {
    let mut best: Option<(String, u64)> = None;
    for i in 0..table.desc().columns.len() {
        let col = table.desc().columns[i].clone();
        let elems: usize = effective_shape(table, i)?.map_or(0, |s| s.iter().product());
        let bytes = (elems * col.etype.width()) as u64;
        if best.as_ref().is_none_or(|(_, b)| bytes > *b) {
            best = Some((col.name, bytes));
        }
    }
    Ok(best)
}

/// CRC32 of a column's cell bytes in row order, read one row at a time.
pub fn column_checksum(table: &mut Table, column: &str) -> psm_core::Result<u32> {
    let mut h = crc32fast::Hasher::new();
    for row in 0..table.nrows() {
        h.update(table.get_cell(column, row)?.as_bytes());
    }
    Ok(h.finalize())
}

pub fn parse_manager(s: &str) -> Result<ManagerId, String> {
    s.parse().map_err(|_| format!("unknown manager '{s}' (expected tiled or pseg)"))
}

/// JSON view of a cell's values; complex elements become `[re, im]`.
pub fn cell_json(cell: &CellValue) -> serde_json::Value {
    use psm_core::{Complex128, Complex64, ElementType as E};
    use serde_json::json;
    let values: Vec<serde_json::Value> = match cell.etype() {
        E::Bool => cell.to_vec::<bool>().unwrap_or_default().into_iter().map(|v| json!(v)).collect(),
        E::Int32 => cell.to_vec::<i32>().unwrap_or_default().into_iter().map(|v| json!(v)).collect(),
        E::Int64 => cell.to_vec::<i64>().unwrap_or_default().into_iter().map(|v| json!(v)).collect(),
        E::Float32 => cell.to_vec::<f32>().unwrap_or_default().into_iter().map(|v| json!(v)).collect(),
        E::Float64 => cell.to_vec::<f64>().unwrap_or_default().into_iter().map(|v| json!(v)).collect(),
        E::Complex64 => cell
            .to_vec::<Complex64>()
            .unwrap_or_default()
            .into_iter()
            .map(|v| json!([v.re, v.im]))
            .collect(),
        E::Complex128 => cell
            .to_vec::<Complex128>()
            .unwrap_or_default()
            .into_iter()
            .map(|v| json!([v.re, v.im]))
            .collect(),
    };
    json!({
        "etype": cell.etype().token(),
        "shape": cell.shape(),
        "values": values,
    })
}
