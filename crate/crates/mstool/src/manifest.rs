use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub const MANIFEST_FILE: &str = "checksums.json";

/// CRC32 of each column's cell bytes concatenated in row order.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub columns: BTreeMap<String, u32>,
}

impl Manifest {
    pub fn write(&self, table: &Path) -> io::Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(io::Error::other)?;
        fs::write(table.join(MANIFEST_FILE), text)
    }

    /// `Ok(None)` when the table has no manifest.
    pub fn read(table: &Path) -> io::Result<Option<Manifest>> {
        match fs::read(table.join(MANIFEST_FILE)) {
            Ok(bytes) => serde_json::from_slice(&bytes).map(Some).map_err(io::Error::other),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }
}
