//! C ABI over `psm-core` for scripting-language bindings.
//!
//! Fallible calls return a null pointer or a negative status and record the
//! failure for the calling thread; read it back with
//! [`psm_last_error_name`] and [`psm_last_error_message`]. Names are the
//! core error kinds (`WrongMode`, `AlreadyExists`, ...) plus
//! `InvalidArgument` for malformed calls and `Panic`.
//!
//! Everything here is serial: tables are created with a single-process
//! communicator.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{self, AssertUnwindSafe};
use std::ptr;
use std::slice;

use psm_core::{
    copy_table, CellValue, Communicator, CreateOptions, ElementType, Error, ManagerId, Mode, Table, TableDesc,
};

pub const PSM_MODE_READ: c_int = 0;
pub const PSM_MODE_WRITE: c_int = 1;

/// Opaque table handle.
pub struct PsmTable(Table);

/// Opaque cell returned by [`psm_get_cell`].
pub struct PsmCell {
    etype: CString,
    cell: CellValue,
}

struct LastError {
    name: CString,
    message: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<LastError>> = const { RefCell::new(None) };
}

fn set_error(name: &str, message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = Some(LastError {
            name: CString::new(name).expect("names have no nul"),
            message: CString::new(message).expect("nul stripped"),
        })
    });
}

enum Failure {
    Core(Error),
    Argument(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn arg(msg: impl Into<String>) -> Failure {
    Failure::Argument(msg.into())
}

/// Runs `f`, recording any failure or panic; `fallback` is returned then.
fn guard<T>(fallback: T, f: impl FnOnce() -> Result<T, Failure>) -> T {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match panic::catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(v)) => v,
        Ok(Err(Failure::Core(e))) => {
            set_error(e.name(), e.to_string());
            fallback
        }
        Ok(Err(Failure::Argument(m))) => {
            set_error("InvalidArgument", m);
            fallback
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            set_error("Panic", msg);
            fallback
        }
    }
}

fn status(f: impl FnOnce() -> Result<(), Failure>) -> c_int {
    guard(-1, || f().map(|()| 0))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if s.is_null() {
        return Err(arg(format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| arg(format!("{what} is not UTF-8")))
}

unsafe fn table<'a>(t: *mut PsmTable) -> Result<&'a mut Table, Failure> {
    t.as_mut().map(|t| &mut t.0).ok_or_else(|| arg("table handle is null"))
}

fn boxed(t: Table) -> *mut PsmTable {
    Box::into_raw(Box::new(PsmTable(t)))
}

/// Kind of the last failure on this thread, or null.
#[no_mangle]
pub extern "C" fn psm_last_error_name() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.name.as_ptr()))
}

/// Message of the last failure on this thread, or null.
#[no_mangle]
pub extern "C" fn psm_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |e| e.message.as_ptr()))
}

/// # Safety
/// `path` must be a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn psm_open(path: *const c_char, mode: c_int) -> *mut PsmTable {
    guard(ptr::null_mut(), || {
        let mode = match mode {
            PSM_MODE_READ => Mode::Read,
            PSM_MODE_WRITE => Mode::Write,
            m => return Err(arg(format!("mode {m}"))),
        };
        Ok(boxed(Table::open(text(path, "path")?, mode)?))
    })
}

/// Creates a table from descriptor text in the on-disk `table.desc` format.
///
/// # Safety
/// Both arguments must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn psm_create(path: *const c_char, desc: *const c_char) -> *mut PsmTable {
    guard(ptr::null_mut(), || {
        let desc = TableDesc::parse(text(desc, "desc")?)?;
        let opts = CreateOptions {
            comm: Some(Communicator::solo()),
            ..CreateOptions::default()
        };
        Ok(boxed(Table::create_with(text(path, "path")?, &desc, opts)?))
    })
}

/// # Safety
/// `t` must come from [`psm_open`] or [`psm_create`] and not be closed.
#[no_mangle]
pub unsafe extern "C" fn psm_finalize(t: *mut PsmTable) -> c_int {
    status(|| Ok(table(t)?.finalize()?))
}

/// Releases the handle without finalizing. Null is ignored.
///
/// # Safety
/// `t` must be null or a live handle; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn psm_close(t: *mut PsmTable) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn psm_nrows(t: *mut PsmTable) -> u64 {
    guard(0, || Ok(table(t)?.nrows()))
}

/// 1 when the table was opened or created for writing, 0 for reading.
///
/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn psm_mode(t: *mut PsmTable) -> c_int {
    guard(-1, || {
        Ok(match table(t)?.mode() {
            Mode::Read => PSM_MODE_READ,
            Mode::Write => PSM_MODE_WRITE,
        })
    })
}

/// Schema in descriptor text form. Free with [`psm_string_free`].
///
/// # Safety
/// `t` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn psm_desc_text(t: *mut PsmTable) -> *mut c_char {
    guard(ptr::null_mut(), || {
        let text = table(t)?.desc().to_text();
        Ok(CString::new(text).map_err(|_| arg("descriptor has a nul"))?.into_raw())
    })
}

/// # Safety
/// `s` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn psm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `t` must be a live handle, `column` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn psm_get_cell(t: *mut PsmTable, column: *const c_char, row: u64) -> *mut PsmCell {
    guard(ptr::null_mut(), || {
        let cell = table(t)?.get_cell(text(column, "column")?, row)?;
        let etype = CString::new(cell.etype().to_string()).expect("tokens have no nul");
        Ok(Box::into_raw(Box::new(PsmCell { etype, cell })))
    })
}

/// Element type token (`f32`, `c64`, ...).
///
/// # Safety
/// `c` must be a live cell; the string lives as long as it.
#[no_mangle]
pub unsafe extern "C" fn psm_cell_etype(c: *const PsmCell) -> *const c_char {
    c.as_ref().map_or(ptr::null(), |c| c.etype.as_ptr())
}

/// # Safety
/// `c` must be a live cell.
#[no_mangle]
pub unsafe extern "C" fn psm_cell_ndim(c: *const PsmCell) -> usize {
    c.as_ref().map_or(0, |c| c.cell.shape().len())
}

/// Row-major extents, `psm_cell_ndim` of them.
///
/// # Safety
/// `c` must be a live cell.
#[no_mangle]
pub unsafe extern "C" fn psm_cell_shape(c: *const PsmCell) -> *const usize {
    c.as_ref().map_or(ptr::null(), |c| c.cell.shape().as_ptr())
}

/// Little-endian element bytes in row-major order.
///
/// # Safety
/// `c` must be a live cell.
#[no_mangle]
pub unsafe extern "C" fn psm_cell_data(c: *const PsmCell) -> *const u8 {
    c.as_ref().map_or(ptr::null(), |c| c.cell.as_bytes().as_ptr())
}

/// # Safety
/// `c` must be a live cell.
#[no_mangle]
pub unsafe extern "C" fn psm_cell_nbytes(c: *const PsmCell) -> usize {
    c.as_ref().map_or(0, |c| c.cell.as_bytes().len())
}

/// # Safety
/// `c` must be null or a live cell; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn psm_cell_free(c: *mut PsmCell) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Writes one cell given as element type token, shape and little-endian
/// row-major bytes. `ndim` 0 is a scalar.
///
/// # Safety
/// `t` must be a live handle, strings nul-terminated, `shape` valid for
/// `ndim` reads and `data` for `nbytes`.
#[no_mangle]
pub unsafe extern "C" fn psm_put_cell(
    t: *mut PsmTable,
    column: *const c_char,
    row: u64,
    etype: *const c_char,
    ndim: usize,
    shape: *const usize,
    data: *const u8,
    nbytes: usize,
) -> c_int {
    status(|| {
        let etype: ElementType = text(etype, "etype")?.parse()?;
        if (ndim > 0 && shape.is_null()) || (nbytes > 0 && data.is_null()) {
            return Err(arg("shape or data is null"));
        }
        let shape = if ndim == 0 { Vec::new() } else { slice::from_raw_parts(shape, ndim).to_vec() };
        let data = if nbytes == 0 { Vec::new() } else { slice::from_raw_parts(data, nbytes).to_vec() };
        let cell = CellValue::from_bytes(etype, shape, data)?;
        Ok(table(t)?.put_cell(text(column, "column")?, row, &cell)?)
    })
}

/// Copies any finalized table to a new table at `dst` with every column
/// bound to `manager` (`tiled` or `pseg`).
///
/// # Safety
/// All arguments must be nul-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn psm_table_copy(src: *const c_char, dst: *const c_char, manager: *const c_char) -> c_int {
    status(|| {
        let manager: ManagerId = text(manager, "manager")?.parse()?;
        Ok(copy_table(text(src, "src")?, text(dst, "dst")?, manager)?)
    })
}
