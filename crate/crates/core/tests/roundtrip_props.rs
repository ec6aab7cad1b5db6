mod common;

use std::collections::HashMap;

use proptest::prelude::*;
use psm_core::{
    CellValue, ColumnDesc, Communicator, CreateOptions, ElementType, ManagerId, Mode, OpenOptions,
    PsegOptions, ShapePolicy, Table, TableDesc,
};

fn etype() -> impl Strategy<Value = ElementType> {
    prop::sample::select(ElementType::ALL.to_vec())
}

fn shape() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 0..=3)
}

fn cell(etype: ElementType, shape: Vec<usize>) -> impl Strategy<Value = CellValue> {
    let n = shape.iter().product::<usize>() * etype.width();
    prop::collection::vec(any::<u8>(), n).prop_map(move |mut bytes| {
        if etype == ElementType::Bool {
            bytes.iter_mut().for_each(|b| *b &= 1);
        }
        CellValue::from_bytes(etype, shape.clone(), bytes).unwrap()
    })
}

/// One column of `nrows` cells of a single type and shape.
fn column() -> impl Strategy<Value = (ElementType, Vec<usize>, Vec<CellValue>)> {
    (etype(), shape(), 1u64..40).prop_flat_map(|(e, s, n)| {
        prop::collection::vec(cell(e, s.clone()), n as usize).prop_map(move |cells| (e, s.clone(), cells))
    })
}

fn policy(shape: &[usize], variable: bool) -> ShapePolicy {
    match (shape.len(), variable) {
        (0, _) => ShapePolicy::Scalar,
        (n, true) => ShapePolicy::VariableArray { ndim: n },
        (_, false) => ShapePolicy::FixedArray(shape.to_vec()),
    }
}

fn write(path: &std::path::Path, desc: &TableDesc, cells: &[CellValue]) {
    let opts = CreateOptions {
        comm: Some(Communicator::solo()),
        ..CreateOptions::default()
    };
    let mut t = Table::create_with(path, desc, opts).unwrap();
    for (r, c) in cells.iter().enumerate() {
        t.put_cell("C", r as u64, c).unwrap();
    }
    t.finalize().unwrap();
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn every_manager_returns_what_was_written((e, s, cells) in column(), variable in any::<bool>(), rpt in 1u16..20) {
        let dir = tempfile::tempdir().unwrap();
        let nrows = cells.len() as u64;
        let tiled = TableDesc::new(vec![ColumnDesc::new("C", e, policy(&s, false), ManagerId::Tiled)], nrows);
        let pseg = TableDesc::new(vec![ColumnDesc::new("C", e, policy(&s, variable), ManagerId::Pseg)], nrows);

        let opts = CreateOptions { rows_per_tile: rpt, ..CreateOptions::default() };
        let mut t = Table::create_with(dir.path().join("t"), &tiled, opts).unwrap();
        for (r, c) in cells.iter().enumerate() {
            t.put_cell("C", r as u64, c).unwrap();
        }
        t.finalize().unwrap();
        write(&dir.path().join("p"), &pseg, &cells);

        let mut a = Table::open(dir.path().join("t"), Mode::Read).unwrap();
        let mut b = Table::open(dir.path().join("p"), Mode::Read).unwrap();
        for (r, c) in cells.iter().enumerate() {
            let x = a.get_cell("C", r as u64).unwrap();
            prop_assert_eq!(&x, c);
            let y = b.get_cell("C", r as u64).unwrap();
            prop_assert_eq!(x.as_bytes(), y.as_bytes());
        }
        prop_assert_eq!(b.backend_read_count("C").unwrap() as usize, cells.len().div_ceil(1024));
    }

    #[test]
    fn ranges_equal_row_by_row_gets((e, s, cells) in column(), rpt in 1u16..9, a in any::<prop::sample::Index>(), b in any::<prop::sample::Index>()) {
        let dir = tempfile::tempdir().unwrap();
        let n = cells.len();
        let desc = TableDesc::new(vec![ColumnDesc::new("C", e, policy(&s, false), ManagerId::Tiled)], n as u64);
        let mut t = Table::create_with(dir.path().join("t"), &desc, CreateOptions { rows_per_tile: rpt, ..CreateOptions::default() }).unwrap();
        for (r, c) in cells.iter().enumerate() {
            t.put_cell("C", r as u64, c).unwrap();
        }
        t.finalize().unwrap();
        let (lo, hi) = { let (x, y) = (a.index(n), b.index(n)); (x.min(y), x.max(y) + 1) };
        let mut r = Table::open(dir.path().join("t"), Mode::Read).unwrap();
        let range = r.get_range("C", lo as u64, hi as u64).unwrap();
        prop_assert_eq!(&range[..], &cells[lo..hi]);
        prop_assert!(r.get_range("C", lo as u64, lo as u64).is_err());
    }

    #[test]
    fn tiled_rewrites_keep_the_last_value(puts in prop::collection::vec((0u64..8, any::<i64>()), 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let desc = TableDesc::new(vec![ColumnDesc::scalar("C", ElementType::Int64, ManagerId::Tiled)], 8);
        let mut t = Table::create(dir.path().join("t"), &desc).unwrap();
        let mut oracle = HashMap::new();
        for (row, v) in &puts {
            t.put_cell("C", *row, &CellValue::scalar(*v)).unwrap();
            oracle.insert(*row, *v);
        }
        t.finalize().unwrap();
        let mut r = Table::open(dir.path().join("t"), Mode::Read).unwrap();
        for row in 0..8 {
            match oracle.get(&row) {
                Some(v) => prop_assert_eq!(r.get_cell("C", row).unwrap().get_scalar::<i64>(), Some(*v)),
                None => prop_assert!(r.get_cell("C", row).is_err()),
            }
        }
    }

    #[test]
    fn prefetch_never_changes_results((e, s, cells) in column(), window in 1usize..50,
                                      accesses in prop::collection::vec((any::<bool>(), any::<prop::sample::Index>()), 1..80)) {
        let dir = tempfile::tempdir().unwrap();
        let n = cells.len();
        let desc = TableDesc::new(vec![ColumnDesc::new("C", e, policy(&s, false), ManagerId::Pseg)], n as u64);
        let path = dir.path().join("p");
        write(&path, &desc, &cells);
        let open = |rows| Table::open_with(&path, Mode::Read, &OpenOptions { pseg: PsegOptions { prefetch_rows: rows, ..PsegOptions::default() } }).unwrap();
        let (mut a, mut b) = (open(window), open(1));
        let mut row = 0;
        for (step, idx) in accesses {
            row = if step { (row + 1) % n } else { idx.index(n) };
            let got = a.get_cell("C", row as u64).unwrap();
            prop_assert_eq!(&got, &b.get_cell("C", row as u64).unwrap());
            prop_assert_eq!(&got, &cells[row]);
        }
        prop_assert!(a.backend_read_count("C").unwrap() <= b.backend_read_count("C").unwrap());
    }
}
