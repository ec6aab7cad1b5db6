//! Table handles: descriptor files, locking, and routing of cell I/O to the
//! storage manager bound to each column.

use std::fmt;
use std::fs::{self, File, OpenOptions as FsOpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use crate::cell::CellValue;
use crate::comm::Communicator;
use crate::error::{Error, Result};
use crate::pseg::{
    self, agree, AggregationPlan, PsegOptions, PsegReader, PsegWriter, SCRATCH_ROOT,
};
use crate::schema::{ColumnDesc, ManagerId, TableDesc};
use crate::stman::StorageManager;
use crate::tiled::{TiledColumn, TiledManager, DEFAULT_ROWS_PER_TILE};

pub const DESC_FILE: &str = "table.desc";
pub const LOCK_FILE: &str = "table.lock";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Read,
    Write,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    Serial,
    ParallelMaster,
    ParallelWorker,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Serial => "serial",
            Role::ParallelMaster => "parallel-master",
            Role::ParallelWorker => "parallel-worker",
        })
    }
}

#[derive(Debug)]
pub struct CreateOptions {
    /// Process group for tables with pseg columns. `None` uses
    /// [`Communicator::world`].
    pub comm: Option<Communicator>,
    pub pseg: PsegOptions,
    pub rows_per_tile: u16,
}

impl Default for CreateOptions {
    fn default() -> Self {
        CreateOptions {
            comm: None,
            pseg: PsegOptions::default(),
            rows_per_tile: DEFAULT_ROWS_PER_TILE,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OpenOptions {
    pub pseg: PsegOptions,
}

/// Exclusive `table.lock`, removed on drop.
#[derive(Debug)]
struct LockFile {
    path: PathBuf,
}

impl LockFile {
    fn acquire(table: &Path) -> Result<LockFile> {
        let path = table.join(LOCK_FILE);
        match FsOpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "{}", std::process::id());
                Ok(LockFile { path })
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(Error::LockHeld(path)),
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for LockFile {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

pub struct Table {
    path: PathBuf,
    mode: Mode,
    role: Role,
    desc: TableDesc,
    managers: Vec<Box<dyn StorageManager>>,
    /// Column ordinal to index into `managers`.
    binding: Vec<usize>,
    lock: Option<LockFile>,
    finalized: bool,
}

impl fmt::Debug for Table {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Table")
            .field("path", &self.path)
            .field("mode", &self.mode)
            .field("role", &self.role)
            .field("nrows", &self.desc.nrows)
            .field("finalized", &self.finalized)
            .finish()
    }
}

fn write_desc(dir: &Path, desc: &TableDesc) -> Result<()> {
    let mut f = File::create(dir.join(DESC_FILE))?;
    f.write_all(desc.to_text().as_bytes())?;
    f.sync_all()?;
    Ok(())
}

fn make_table_dir(path: &Path) -> Result<()> {
    match fs::create_dir(path) {
        Ok(()) => Ok(()),
        Err(e) if e.kind() == io::ErrorKind::AlreadyExists => {
            Err(Error::AlreadyExists(path.to_path_buf()))
        }
        Err(e) => Err(e.into()),
    }
}

impl Table {
    pub fn create(path: impl AsRef<Path>, desc: &TableDesc) -> Result<Table> {
        Self::create_with(path, desc, CreateOptions::default())
    }

    /// Creates a table. When any column is bound to the parallel manager this
    /// is a collective call over the communicator in `opts`.
    pub fn create_with(path: impl AsRef<Path>, desc: &TableDesc, opts: CreateOptions) -> Result<Table> {
        let path = path.as_ref();
        if desc.uses_manager(ManagerId::Pseg) {
            return Self::create_parallel(path, desc, opts);
        }
        desc.validate()?;
        make_table_dir(path)?;
        let lock = LockFile::acquire(path)?;
        write_desc(path, desc)?;
        let mut table = Table::assemble(path, Mode::Write, Role::Serial, desc, Some(lock));
        table.add_tiled(opts.rows_per_tile, true)?;
        Ok(table)
    }

    fn create_parallel(path: &Path, desc: &TableDesc, opts: CreateOptions) -> Result<Table> {
        let comm = match opts.comm {
            Some(c) => c,
            None => Communicator::world()?,
        };
        let size = comm.size();
        let rank = comm.rank();
        let local = desc
            .validate()
            .and_then(|_| PsegWriter::check_columns(desc, &opts.pseg))
            .map(|_| {
                let mut bytes = (opts.pseg.aggregators.resolve(size) as u64).to_le_bytes().to_vec();
                bytes.extend_from_slice(desc.to_text().as_bytes());
                bytes
            });
        let mut master_lock = None;
        let groups = agree(&comm, &local, |all| {
            let mut parts = Vec::with_capacity(all.len());
            for part in all {
                parts.push(part?);
            }
            let reference = &parts[0];
            for (r, part) in parts.iter().enumerate().skip(1) {
                if part[8..] != reference[8..] {
                    return Err(Error::DescMismatch(format!(
                        "rank {r} bound a different table description than rank 0"
                    )));
                }
                if part[..8] != reference[..8] {
                    return Err(Error::InvalidOptions(format!(
                        "rank {r} resolved a different aggregator count than rank 0"
                    )));
                }
            }
            let groups = u64::from_le_bytes(reference[..8].try_into().expect("8 bytes")) as usize;
            AggregationPlan::new(size, groups)?;
            if size > 1 && desc.uses_manager(ManagerId::Tiled) {
                return Err(Error::UnsupportedOperation(
                    "tiled columns in a table bound by several processes".into(),
                ));
            }
            make_table_dir(path)?;
            let lock = LockFile::acquire(path)?;
            write_desc(path, desc)?;
            fs::create_dir(pseg::data_dir(path))?;
            master_lock = Some(lock);
            Ok(groups.to_le_bytes().to_vec())
        })?;
        let groups = u64::from_le_bytes(groups[..].try_into().map_err(|_| {
            Error::Remote("malformed create verdict".into())
        })?) as usize;
        let plan = AggregationPlan::new(size, groups)?;

        let role = match (size, rank) {
            (1, _) => Role::Serial,
            (_, 0) => Role::ParallelMaster,
            _ => Role::ParallelWorker,
        };
        let data_dir = pseg::data_dir(path);
        let scratch = if role == Role::ParallelWorker {
            Some(Self::scratch_table(path, desc, &opts.pseg, rank))
        } else {
            None
        };
        let scratch_ok = match &scratch {
            Some(Err(e)) => Err(Error::Remote(format!("rank {rank}: {e}"))),
            _ => Ok(Vec::new()),
        };
        agree(&comm, &scratch_ok, |all| {
            all.into_iter().try_for_each(|r| r.map(drop))?;
            Ok(Vec::new())
        })?;
        let scratch = scratch.transpose().expect("checked by agreement");

        let writer = PsegWriter::new(comm, plan, desc, data_dir, scratch, &opts.pseg);
        let mut table = Table::assemble(path, Mode::Write, role, desc, master_lock);
        let idx = table.managers.len();
        for &ordinal in writer.columns() {
            table.binding[ordinal] = idx;
        }
        table.managers.push(Box::new(writer));
        table.add_tiled(opts.rows_per_tile, true)?;
        Ok(table)
    }

    /// Worker-side throwaway copy of the descriptor.
    fn scratch_table(path: &Path, desc: &TableDesc, opts: &PsegOptions, rank: usize) -> Result<PathBuf> {
        let name = path
            .file_name()
            .ok_or_else(|| Error::InvalidOptions(format!("table path {} has no name", path.display())))?;
        let dir = opts
            .scratch_dir
            .join(SCRATCH_ROOT)
            .join(format!("rank{rank}"))
            .join(name);
        fs::create_dir_all(&dir)?;
        write_desc(&dir, desc)?;
        Ok(dir)
    }

    pub fn open(path: impl AsRef<Path>, mode: Mode) -> Result<Table> {
        Self::open_with(path, mode, &OpenOptions::default())
    }

    pub fn open_with(path: impl AsRef<Path>, mode: Mode, opts: &OpenOptions) -> Result<Table> {
        let path = path.as_ref();
        let text = match fs::read(path.join(DESC_FILE)) {
            Ok(bytes) => String::from_utf8(bytes)
                .map_err(|_| Error::CorruptDescriptor("descriptor is not UTF-8".into()))?,
            Err(e) if matches!(e.kind(), io::ErrorKind::NotFound | io::ErrorKind::NotADirectory) => {
                return Err(Error::NotATable(path.to_path_buf()))
            }
            Err(e) => return Err(e.into()),
        };
        let desc = TableDesc::parse(&text)?;
        let lock = match mode {
            Mode::Write => Some(LockFile::acquire(path)?),
            Mode::Read => None,
        };
        let mut table = Table::assemble(path, mode, Role::Serial, &desc, lock);
        if desc.uses_manager(ManagerId::Pseg) {
            let mut reader = PsegReader::open(path, &desc, &opts.pseg)?;
            if mode == Mode::Write {
                reader = reader.sealed();
            }
            let idx = table.managers.len();
            for &ordinal in reader.columns() {
                table.binding[ordinal] = idx;
            }
            table.managers.push(Box::new(reader));
        }
        table.add_tiled(0, mode == Mode::Write)?;
        Ok(table)
    }

    fn assemble(path: &Path, mode: Mode, role: Role, desc: &TableDesc, lock: Option<LockFile>) -> Table {
        Table {
            path: path.to_path_buf(),
            mode,
            role,
            desc: desc.clone(),
            managers: Vec::new(),
            binding: vec![usize::MAX; desc.columns.len()],
            lock,
            finalized: false,
        }
    }

    /// Binds every tiled column; `rows_per_tile == 0` opens existing files.
    fn add_tiled(&mut self, rows_per_tile: u16, writable: bool) -> Result<()> {
        for (ordinal, col) in self.desc.columns.iter().enumerate() {
            if col.manager != ManagerId::Tiled {
                continue;
            }
            let column = if rows_per_tile == 0 {
                TiledColumn::open(col, self.desc.nrows, &self.path, writable)?
            } else {
                TiledColumn::create(col, self.desc.nrows, &self.path, rows_per_tile)?
            };
            self.binding[ordinal] = self.managers.len();
            self.managers.push(Box::new(TiledManager::new(ordinal, column)));
        }
        Ok(())
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn desc(&self) -> &TableDesc {
        &self.desc
    }

    pub fn nrows(&self) -> u64 {
        self.desc.nrows
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    fn locate(&self, column: &str, row: u64) -> Result<usize> {
        let ordinal = self.desc.column_index(column)?;
        if row >= self.desc.nrows {
            return Err(Error::RowOutOfRange {
                row,
                nrows: self.desc.nrows,
            });
        }
        Ok(ordinal)
    }

    pub fn put_cell(&mut self, column: &str, row: u64, value: &CellValue) -> Result<()> {
        if self.mode != Mode::Write {
            return Err(Error::WrongMode("table opened for reading"));
        }
        let ordinal = self.locate(column, row)?;
        let col = &self.desc.columns[ordinal];
        col.check_value(value)?;
        if self.finalized {
            return Err(match col.manager {
                ManagerId::Pseg => Error::UnsupportedOperation("rewrite".into()),
                ManagerId::Tiled => Error::WrongMode("table already finalized"),
            });
        }
        self.managers[self.binding[ordinal]].put_cell(ordinal, row, value)
    }

    pub fn get_cell(&mut self, column: &str, row: u64) -> Result<CellValue> {
        if self.mode != Mode::Read {
            return Err(Error::WrongMode("table opened for writing"));
        }
        let ordinal = self.locate(column, row)?;
        self.managers[self.binding[ordinal]].get_cell(ordinal, row)
    }

    /// Cells `begin..end` of one column; the range must be non-empty.
    pub fn get_range(&mut self, column: &str, begin: u64, end: u64) -> Result<Vec<CellValue>> {
        if self.mode != Mode::Read {
            return Err(Error::WrongMode("table opened for writing"));
        }
        let ordinal = self.desc.column_index(column)?;
        if begin >= end || end > self.desc.nrows {
            return Err(Error::RowOutOfRange {
                row: if begin >= end { begin } else { end },
                nrows: self.desc.nrows,
            });
        }
        self.managers[self.binding[ordinal]].get_range(ordinal, begin, end)
    }

    /// Physical data reads issued so far for one column.
    pub fn backend_read_count(&self, column: &str) -> Result<u64> {
        let ordinal = self.desc.column_index(column)?;
        Ok(self.managers[self.binding[ordinal]].backend_read_count(ordinal))
    }

    pub fn add_rows(&mut self, _n: u64) -> Result<()> {
        Err(Error::UnsupportedOperation("add_rows".into()))
    }

    pub fn add_column(&mut self, _column: ColumnDesc) -> Result<()> {
        Err(Error::UnsupportedOperation("add_columns".into()))
    }

    /// Flushes every manager and releases the lock. Collective for tables
    /// created over several processes. Calling it again is a no-op.
    pub fn finalize(&mut self) -> Result<()> {
        if self.finalized {
            return Ok(());
        }
        self.finalized = true;
        let mut first = None;
        for m in &mut self.managers {
            if let Err(e) = m.finalize() {
                first.get_or_insert(e);
            }
        }
        self.lock = None;
        first.map_or(Ok(()), Err)
    }
}
