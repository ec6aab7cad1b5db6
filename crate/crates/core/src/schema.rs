//! Table schema and the `table.desc` text format.
//!
//! ```text
//! PSMTABLE 1
//! nrows 3
//! column X f64 0 - tiled
//! column DATA c64 2 2,2048 pseg
//! column FLAGS bool 2 var pseg
//! ```

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::cell::{element_count, CellValue};
use crate::element::ElementType;
use crate::error::{Error, Result};

pub const DESCRIPTOR_MAGIC: &str = "PSMTABLE 1";
pub const MAX_NAME_LEN: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub enum ShapePolicy {
    Scalar,
    FixedArray(Vec<usize>),
    VariableArray { ndim: usize },
}

impl ShapePolicy {
    pub fn ndim(&self) -> usize {
        match self {
            ShapePolicy::Scalar => 0,
            ShapePolicy::FixedArray(shape) => shape.len(),
            ShapePolicy::VariableArray { ndim } => *ndim,
        }
    }

    /// Shape of every cell, when the policy pins one.
    pub fn fixed_shape(&self) -> Option<&[usize]> {
        match self {
            ShapePolicy::Scalar => Some(&[]),
            ShapePolicy::FixedArray(shape) => Some(shape),
            ShapePolicy::VariableArray { .. } => None,
        }
    }

    pub fn accepts(&self, shape: &[usize]) -> bool {
        match self {
            ShapePolicy::Scalar => shape.is_empty(),
            ShapePolicy::FixedArray(fixed) => fixed.as_slice() == shape,
            ShapePolicy::VariableArray { ndim } => {
                shape.len() == *ndim && shape.iter().all(|&e| e >= 1)
            }
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            ShapePolicy::Scalar => Ok(()),
            ShapePolicy::FixedArray(shape) if shape.is_empty() || shape.contains(&0) => Err(
                Error::InvalidDesc(format!("fixed shape {shape:?} needs extents >= 1")),
            ),
            ShapePolicy::VariableArray { ndim: 0 } => {
                Err(Error::InvalidDesc("variable array needs ndim >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ShapePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ShapePolicy::Scalar => f.write_str("scalar"),
            ShapePolicy::FixedArray(shape) => write!(f, "{shape:?}"),
            ShapePolicy::VariableArray { ndim } => write!(f, "var(ndim={ndim})"),
        }
    }
}

/// Storage manager a column is bound to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ManagerId {
    Tiled,
    Pseg,
}

impl ManagerId {
    pub const fn token(self) -> &'static str {
        match self {
            ManagerId::Tiled => "tiled",
            ManagerId::Pseg => "pseg",
        }
    }
}

impl fmt::Display for ManagerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for ManagerId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tiled" => Ok(ManagerId::Tiled),
            "pseg" => Ok(ManagerId::Pseg),
            other => Err(Error::InvalidDesc(format!("unknown storage manager '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct ColumnDesc {
    pub name: String,
    pub etype: ElementType,
    pub shape: ShapePolicy,
    pub manager: ManagerId,
}

impl ColumnDesc {
    pub fn new(name: impl Into<String>, etype: ElementType, shape: ShapePolicy, manager: ManagerId) -> Self {
        ColumnDesc {
            name: name.into(),
            etype,
            shape,
            manager,
        }
    }

    pub fn scalar(name: impl Into<String>, etype: ElementType, manager: ManagerId) -> Self {
        Self::new(name, etype, ShapePolicy::Scalar, manager)
    }

    /// Encoded size of one cell, if the shape policy pins it.
    pub fn cell_bytes(&self) -> Option<u64> {
        self.shape
            .fixed_shape()
            .map(|s| (element_count(s) * self.etype.width()) as u64)
    }

    /// Checks element type and shape of `value` against this column.
    pub fn check_value(&self, value: &CellValue) -> Result<()> {
        if value.etype() != self.etype {
            return Err(Error::TypeMismatch {
                column: self.name.clone(),
                expected: self.etype,
                found: value.etype(),
            });
        }
        if !self.shape.accepts(value.shape()) {
            return Err(Error::ShapeMismatch {
                column: self.name.clone(),
                expected: self.shape.to_string(),
                found: value.shape().to_vec(),
            });
        }
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let n = self.name.len();
        if !(1..=MAX_NAME_LEN).contains(&n)
            || !self.name.bytes().all(|b| b.is_ascii_graphic())
        {
            return Err(Error::InvalidDesc(format!(
                "column name '{}' must be 1..={MAX_NAME_LEN} printable ASCII characters",
                self.name
            )));
        }
        self.shape.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
pub struct TableDesc {
    pub columns: Vec<ColumnDesc>,
    pub nrows: u64,
}

impl TableDesc {
    pub fn new(columns: Vec<ColumnDesc>, nrows: u64) -> Self {
        TableDesc { columns, nrows }
    }

    pub fn validate(&self) -> Result<()> {
        if self.columns.is_empty() {
            return Err(Error::InvalidDesc("table needs at least one column".into()));
        }
        for (i, col) in self.columns.iter().enumerate() {
            col.validate()?;
            if self.columns[..i].iter().any(|c| c.name == col.name) {
                return Err(Error::InvalidDesc(format!("duplicate column name '{}'", col.name)));
            }
        }
        Ok(())
    }

    pub fn column_index(&self, name: &str) -> Result<usize> {
        self.columns
            .iter()
            .position(|c| c.name == name)
            .ok_or_else(|| Error::UnknownColumn(name.to_string()))
    }

    pub fn column(&self, name: &str) -> Result<&ColumnDesc> {
        self.column_index(name).map(|i| &self.columns[i])
    }

    pub fn uses_manager(&self, manager: ManagerId) -> bool {
        self.columns.iter().any(|c| c.manager == manager)
    }

    /// Same schema with every column rebound to `manager`.
    pub fn rebound(&self, manager: ManagerId) -> TableDesc {
        let mut out = self.clone();
        for c in &mut out.columns {
            c.manager = manager;
        }
        out
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{DESCRIPTOR_MAGIC}\nnrows {}\n", self.nrows);
        for c in &self.columns {
            let shape = match &c.shape {
                ShapePolicy::Scalar => "-".to_string(),
                ShapePolicy::FixedArray(s) => s
                    .iter()
                    .map(|e| e.to_string())
                    .collect::<Vec<_>>()
                    .join(","),
                ShapePolicy::VariableArray { .. } => "var".to_string(),
            };
            out.push_str(&format!(
                "column {} {} {} {} {}\n",
                c.name,
                c.etype,
                c.shape.ndim(),
                shape,
                c.manager
            ));
        }
        out
    }

    pub fn parse(text: &str) -> Result<TableDesc> {
        let corrupt = |msg: String| Error::CorruptDescriptor(msg);
        let mut lines = text.split('\n');
        if lines.next() != Some(DESCRIPTOR_MAGIC) {
            return Err(corrupt("missing PSMTABLE 1 header".into()));
        }
        let nrows = lines
            .next()
            .and_then(|l| l.strip_prefix("nrows "))
            .and_then(|n| n.parse::<u64>().ok())
            .ok_or_else(|| corrupt("bad nrows line".into()))?;
        let mut columns = Vec::new();
        let mut saw_end = false;
        for line in lines {
            if saw_end {
                return Err(corrupt("content after final newline".into()));
            }
            if line.is_empty() {
                saw_end = true;
                continue;
            }
            columns.push(parse_column(line).map_err(|e| corrupt(format!("{line:?}: {e}")))?);
        }
        if !saw_end {
            return Err(corrupt("missing final newline".into()));
        }
        let desc = TableDesc { columns, nrows };
        desc.validate().map_err(|e| corrupt(e.to_string()))?;
        Ok(desc)
    }
}

fn parse_column(line: &str) -> std::result::Result<ColumnDesc, String> {
    let fields: Vec<&str> = line.split(' ').collect();
    let [tag, name, etype, ndim, shape, manager] = fields[..] else {
        return Err("expected 6 fields".into());
    };
    if tag != "column" {
        return Err("expected 'column'".into());
    }
    let etype: ElementType = etype.parse().map_err(|e: Error| e.to_string())?;
    let ndim: usize = ndim.parse().map_err(|_| "bad ndim".to_string())?;
    let shape = match (ndim, shape) {
        (0, "-") => ShapePolicy::Scalar,
        (0, _) => return Err("scalar column must use '-' shape".into()),
        (_, "var") => ShapePolicy::VariableArray { ndim },
        (_, s) => {
            let extents = s
                .split(',')
                .map(|e| e.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| "bad shape extents".to_string())?;
            if extents.len() != ndim {
                return Err("shape rank disagrees with ndim".into());
            }
            ShapePolicy::FixedArray(extents)
        }
    };
    let manager: ManagerId = manager.parse().map_err(|e: Error| e.to_string())?;
    Ok(ColumnDesc::new(name, etype, shape, manager))
}
