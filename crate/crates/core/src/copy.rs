use std::path::Path;

use crate::comm::Communicator;
use crate::error::Result;
use crate::schema::{ManagerId, ShapePolicy, TableDesc};
use crate::table::{CreateOptions, Mode, Table};

/// Descriptor for a copy of `table` rebound to `manager`. The tiled manager
/// cannot hold variable shapes, so those columns are pinned to the shape of
/// their first cell.
pub fn copy_desc(table: &mut Table, manager: ManagerId) -> Result<TableDesc> {
    let mut desc = table.desc().rebound(manager);
    if manager == ManagerId::Tiled {
        for col in &mut desc.columns {
            if let ShapePolicy::VariableArray { ndim } = col.shape {
                let shape = if desc.nrows == 0 {
                    vec![1; ndim]
                } else {
                    table.get_cell(&col.name, 0)?.shape().to_vec()
                };
                col.shape = ShapePolicy::FixedArray(shape);
            }
        }
    }
    Ok(desc)
}

/// Copies every cell of any table into a new table at `dst` whose columns
/// are all bound to `manager`. Runs in this process only.
pub fn copy_table(src: impl AsRef<Path>, dst: impl AsRef<Path>, manager: ManagerId) -> Result<()> {
    let mut input = Table::open(src, Mode::Read)?;
    let desc = copy_desc(&mut input, manager)?;
    let opts = CreateOptions {
        comm: Some(Communicator::solo()),
        ..CreateOptions::default()
    };
    let mut output = Table::create_with(dst, &desc, opts)?;
    for col in &desc.columns {
        for row in 0..desc.nrows {
            output.put_cell(&col.name, row, &input.get_cell(&col.name, row)?)?;
        }
    }
    output.finalize()
}
