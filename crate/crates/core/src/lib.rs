//! Columnar tables whose cell I/O is delegated to pluggable storage managers.
//!
//! Two managers ship with the crate: a serial tiled layout and a parallel
//! segment manager that lets several processes write one table through a
//! small socket communicator.

pub mod cell;
pub mod comm;
pub mod copy;
pub mod element;
pub mod error;
pub mod pseg;
pub mod schema;
pub mod stman;
pub mod table;
pub mod tiled;

pub use cell::CellValue;
pub use comm::{CommConfig, CommError, Communicator};
pub use copy::{copy_desc, copy_table};
pub use element::{Element, ElementType};
pub use error::{Error, Result};
pub use pseg::{Aggregators, PsegOptions, VarRecord};
pub use schema::{ColumnDesc, ManagerId, ShapePolicy, TableDesc};
pub use stman::{Capabilities, StorageManager};
pub use table::{CreateOptions, Mode, OpenOptions, Role, Table};

pub type Complex64 = num_complex::Complex<f32>;
pub type Complex128 = num_complex::Complex<f64>;
