use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::cell::CellValue;
use crate::comm::Communicator;
use crate::element::ElementType;
use crate::error::{Error, Result};
use crate::schema::{ManagerId, ShapePolicy, TableDesc};
use crate::stman::{Capabilities, StorageManager};

use super::index::{self, decode_shape, encode_shape, Cursor, VarRecord};
use super::{agree, audit_records, decode_outcome, encode_outcome, AggregationPlan, PsegOptions};

/// A buffered run of contiguous rows of one column, not yet on disk.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PendingRecord {
    pub column_id: u32,
    pub row_begin: u64,
    pub row_count: u64,
    pub shape: Vec<usize>,
}

#[derive(Debug)]
struct Run {
    column_id: u32,
    row_begin: u64,
    row_count: u64,
    shape: Vec<usize>,
    payload: Vec<u8>,
}

#[derive(Debug)]
struct ColumnState {
    name: String,
    etype: ElementType,
    declared: ShapePolicy,
    fixed: Option<Vec<usize>>,
    written: Vec<u64>,
    runs: Vec<Run>,
}

impl ColumnState {
    fn is_written(&self, row: u64) -> bool {
        self.written[(row / 64) as usize] & (1 << (row % 64)) != 0
    }

    fn mark(&mut self, row: u64) {
        self.written[(row / 64) as usize] |= 1 << (row % 64);
    }
}

/// Write side of the parallel manager for one rank.
#[derive(Debug)]
pub struct PsegWriter {
    comm: Communicator,
    plan: AggregationPlan,
    desc: TableDesc,
    ordinals: Vec<usize>,
    columns: BTreeMap<usize, ColumnState>,
    data_dir: PathBuf,
    scratch_table: Option<PathBuf>,
    scratch_root: PathBuf,
    finalized: bool,
}

impl PsegWriter {
    /// Rejects pseg columns this configuration cannot store.
    pub fn check_columns(desc: &TableDesc, opts: &PsegOptions) -> Result<()> {
        opts.validate()?;
        for col in &desc.columns {
            if col.manager == ManagerId::Pseg
                && matches!(col.shape, ShapePolicy::VariableArray { .. })
                && !opts.force_direct_array
            {
                return Err(Error::UnsupportedOperation(format!(
                    "variable-shape array column {} without forced direct arrays",
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub(crate) fn new(
        comm: Communicator,
        plan: AggregationPlan,
        desc: &TableDesc,
        data_dir: PathBuf,
        scratch_table: Option<PathBuf>,
        opts: &PsegOptions,
    ) -> Self {
        let words = desc.nrows.div_ceil(64) as usize;
        let mut ordinals = Vec::new();
        let mut columns = BTreeMap::new();
        for (ordinal, col) in desc.columns.iter().enumerate() {
            if col.manager != ManagerId::Pseg {
                continue;
            }
            ordinals.push(ordinal);
            columns.insert(
                ordinal,
                ColumnState {
                    name: col.name.clone(),
                    etype: col.etype,
                    declared: col.shape.clone(),
                    fixed: col.shape.fixed_shape().map(<[usize]>::to_vec),
                    written: vec![0; words],
                    runs: Vec::new(),
                },
            );
        }
        PsegWriter {
            comm,
            plan,
            desc: desc.clone(),
            ordinals,
            columns,
            data_dir,
            scratch_table,
            scratch_root: opts.scratch_dir.join(super::SCRATCH_ROOT),
            finalized: false,
        }
    }

    pub fn rank(&self) -> usize {
        self.comm.rank()
    }

    pub fn size(&self) -> usize {
        self.comm.size()
    }

    pub fn plan(&self) -> &AggregationPlan {
        &self.plan
    }

    /// Shape a column is pinned to on this rank, if any.
    pub fn fixed_shape(&self, ordinal: usize) -> Option<&[usize]> {
        self.columns.get(&ordinal)?.fixed.as_deref()
    }

    pub fn pending_records(&self) -> Vec<PendingRecord> {
        self.columns
            .values()
            .flat_map(|c| c.runs.iter())
            .map(|r| PendingRecord {
                column_id: r.column_id,
                row_begin: r.row_begin,
                row_count: r.row_count,
                shape: r.shape.clone(),
            })
            .collect()
    }

    pub fn put(&mut self, ordinal: usize, row: u64, value: &CellValue) -> Result<()> {
        if self.finalized {
            return Err(Error::UnsupportedOperation("rewrite".into()));
        }
        let nrows = self.desc.nrows;
        let state = self
            .columns
            .get_mut(&ordinal)
            .ok_or_else(|| Error::UnknownColumn(format!("#{ordinal}")))?;
        if row >= nrows {
            return Err(Error::RowOutOfRange { row, nrows });
        }
        if value.etype() != state.etype {
            return Err(Error::TypeMismatch {
                column: state.name.clone(),
                expected: state.etype,
                found: value.etype(),
            });
        }
        let shape_ok = match &state.fixed {
            Some(fixed) => fixed.as_slice() == value.shape(),
            None => state.declared.accepts(value.shape()),
        };
        if !shape_ok {
            return Err(Error::ShapeMismatch {
                column: state.name.clone(),
                expected: match &state.fixed {
                    Some(f) => format!("{f:?}"),
                    None => state.declared.to_string(),
                },
                found: value.shape().to_vec(),
            });
        }
        if state.is_written(row) {
            return Err(Error::RewriteUnsupported {
                column: state.name.clone(),
                row,
            });
        }
        if state.fixed.is_none() {
            state.fixed = Some(value.shape().to_vec());
        }
        state.mark(row);
        match state.runs.last_mut() {
            Some(run) if run.row_begin + run.row_count == row => {
                run.row_count += 1;
                run.payload.extend_from_slice(value.as_bytes());
            }
            _ => state.runs.push(Run {
                column_id: ordinal as u32,
                row_begin: row,
                row_count: 1,
                shape: value.shape().to_vec(),
                payload: value.as_bytes().to_vec(),
            }),
        }
        Ok(())
    }

    /// Collective flush: every rank of the communicator must call this.
    pub fn finalize(&mut self) -> Result<()> {
        if self.finalized {
            return Ok(());
        }
        self.finalized = true;
        let result = self.flush_collective();
        let comm = std::mem::replace(&mut self.comm, Communicator::solo());
        let teardown = comm.finalize();
        result?;
        teardown.map_err(Error::from)
    }

    fn flush_collective(&mut self) -> Result<()> {
        let runs: Vec<Run> = self
            .columns
            .values_mut()
            .flat_map(|c| std::mem::take(&mut c.runs))
            .collect();
        let rank = self.comm.rank();
        let group = self.plan.group_of(rank);
        let leader = self.plan.leader_of(group);
        let flushed = if rank == leader {
            self.write_segment(group, runs)
        } else {
            self.comm
                .send(leader, &encode_outcome(&Ok(encode_runs(&runs))))
                .map(|_| Vec::new())
                .map_err(Error::from)
        };
        let contribution = flushed.map(|records| encode_records(&records));
        let desc = &self.desc;
        let data_dir = &self.data_dir;
        agree(&self.comm, &contribution, |all| {
            let mut records = Vec::new();
            for part in all {
                records.extend(decode_records(&part?)?);
            }
            records.sort_by_key(|r| (r.column_id, r.row_begin));
            audit_records(desc, &records)?;
            write_index(data_dir, &records)?;
            Ok(Vec::new())
        })?;
        if let Some(scratch) = self.scratch_table.take() {
            fs::remove_dir_all(&scratch)?;
            if let Some(rank_dir) = scratch.parent() {
                let _ = fs::remove_dir(rank_dir);
            }
            let _ = fs::remove_dir(&self.scratch_root);
        }
        self.comm.barrier()?;
        if self.comm.size() > 1 {
            let _ = fs::remove_dir(&self.scratch_root);
        }
        Ok(())
    }

    /// Leader side of the two-layer flush: collect the group's runs and
    /// append them to this group's segment file.
    fn write_segment(&mut self, group: usize, own: Vec<Run>) -> Result<Vec<VarRecord>> {
        let mut runs = own;
        let mut failure = None;
        for member in self.plan.members(group) {
            if member == self.comm.rank() {
                continue;
            }
            let received = self
                .comm
                .recv(member)
                .map_err(Error::from)
                .and_then(|bytes| decode_outcome(&bytes))
                .and_then(|bytes| decode_runs(&bytes));
            match received {
                Ok(mut r) => runs.append(&mut r),
                Err(e) => {
                    failure.get_or_insert(e);
                }
            }
        }
        if let Some(e) = failure {
            return Err(e);
        }
        let segment_id = group as u32;
        let mut file = File::create(index::segment_path(&self.data_dir, segment_id))?;
        file.write_all(&index::segment_header(segment_id))?;
        let mut records = Vec::with_capacity(runs.len());
        let mut offset = 0u64;
        for run in runs {
            file.write_all(&run.payload)?;
            let etype = self.desc.columns[run.column_id as usize].etype;
            records.push(VarRecord {
                column_id: run.column_id,
                row_begin: run.row_begin,
                row_count: run.row_count,
                etype,
                shape: run.shape,
                segment_id,
                offset,
                length: run.payload.len() as u64,
                crc32: crc32fast::hash(&run.payload),
            });
            offset += run.payload.len() as u64;
        }
        file.sync_all()?;
        Ok(records)
    }
}

fn write_index(data_dir: &Path, records: &[VarRecord]) -> Result<()> {
    let tmp = data_dir.join(format!("{}.tmp", index::INDEX_FILE));
    let mut file = File::create(&tmp)?;
    file.write_all(&index::encode_index(records))?;
    file.sync_all()?;
    fs::rename(&tmp, data_dir.join(index::INDEX_FILE))?;
    Ok(())
}

fn encode_runs(runs: &[Run]) -> Vec<u8> {
    let total: usize = runs.iter().map(|r| r.payload.len() + 64).sum();
    let mut out = Vec::with_capacity(total + 4);
    out.extend_from_slice(&(runs.len() as u32).to_le_bytes());
    for r in runs {
        out.extend_from_slice(&r.column_id.to_le_bytes());
        out.extend_from_slice(&r.row_begin.to_le_bytes());
        out.extend_from_slice(&r.row_count.to_le_bytes());
        encode_shape(&r.shape, &mut out);
        out.extend_from_slice(&(r.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&r.payload);
    }
    out
}

fn decode_runs(bytes: &[u8]) -> Result<Vec<Run>> {
    let mut cur = Cursor::new(bytes);
    let parse = |cur: &mut Cursor<'_>| -> Option<Vec<Run>> {
        let n = cur.u32()?;
        let mut runs = Vec::with_capacity(n as usize);
        for _ in 0..n {
            let column_id = cur.u32()?;
            let row_begin = cur.u64()?;
            let row_count = cur.u64()?;
            let shape = decode_shape(cur)?;
            let len = cur.u64()? as usize;
            let payload = cur.bytes(len)?.to_vec();
            runs.push(Run {
                column_id,
                row_begin,
                row_count,
                shape,
                payload,
            });
        }
        cur.is_empty().then_some(runs)
    };
    parse(&mut cur).ok_or_else(|| Error::Remote("malformed run bundle from group member".into()))
}

fn encode_records(records: &[VarRecord]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&(records.len() as u32).to_le_bytes());
    for r in records {
        r.encode_into(&mut out);
    }
    out
}

fn decode_records(bytes: &[u8]) -> Result<Vec<VarRecord>> {
    let mut cur = Cursor::new(bytes);
    let parsed = (|| {
        let n = cur.u32()?;
        let recs = (0..n)
            .map(|_| VarRecord::decode_from(&mut cur))
            .collect::<Option<Vec<_>>>()?;
        cur.is_empty().then_some(recs)
    })();
    parsed.ok_or_else(|| Error::Remote("malformed record list from leader".into()))
}

impl StorageManager for PsegWriter {
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

    fn put_cell(&mut self, column: usize, row: u64, value: &CellValue) -> Result<()> {
        self.put(column, row, value)
    }

    fn get_cell(&mut self, _column: usize, _row: u64) -> Result<CellValue> {
        Err(Error::WrongMode("writing"))
    }

    fn finalize(&mut self) -> Result<()> {
        PsegWriter::finalize(self)
    }
}
