mod common;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use common::{audit_table, random_cell, run_ranks, run_ranks_timeout};
use psm_core::pseg::{self, read_index, Aggregators};
use psm_core::{
    copy_table, CellValue, ColumnDesc, CreateOptions, ElementType, Error, ManagerId, Mode,
    OpenOptions, PsegOptions, Role, ShapePolicy, Table, TableDesc,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Clone)]
struct Content {
    desc: TableDesc,
    cells: Vec<Vec<CellValue>>,
}

fn random_content(rng: &mut ChaCha8Rng, manager: ManagerId) -> Content {
    let ncols = rng.random_range(1..=5);
    let nrows = rng.random_range(1..=64);
    let mut columns = Vec::new();
    let mut shapes = Vec::new();
    for c in 0..ncols {
        let etype = ElementType::ALL[rng.random_range(0..ElementType::ALL.len())];
        let ndim = rng.random_range(0..=3);
        let max_elems = 4096 / etype.width();
        let mut shape: Vec<usize> = (0..ndim).map(|_| rng.random_range(1..=6)).collect();
        while shape.iter().product::<usize>() > max_elems {
            shape[0] = 1;
        }
        let policy = match (ndim, rng.random_bool(0.5)) {
            (0, _) => ShapePolicy::Scalar,
            (_, true) => ShapePolicy::FixedArray(shape.clone()),
            (n, false) => ShapePolicy::VariableArray { ndim: n },
        };
        columns.push(ColumnDesc::new(format!("C{c}"), etype, policy, manager));
        shapes.push(shape);
    }
    let desc = TableDesc::new(columns, nrows);
    let cells = desc
        .columns
        .iter()
        .zip(&shapes)
        .map(|(col, shape)| (0..nrows).map(|_| random_cell(rng, col.etype, shape)).collect())
        .collect();
    Content { desc, cells }
}

fn pseg_opts(scratch: &Path) -> PsegOptions {
    PsegOptions {
        scratch_dir: scratch.to_path_buf(),
        ..PsegOptions::default()
    }
}

/// Writes `content` with one rank per distinct value of `owner[row]`.
fn write_parallel(
    path: &Path,
    scratch: &Path,
    content: &Content,
    size: usize,
    owner: Vec<usize>,
    aggregators: Aggregators,
) -> Vec<Result<(), Error>> {
    let path = path.to_path_buf();
    let opts = PsegOptions {
        aggregators,
        ..pseg_opts(scratch)
    };
    let content = Arc::new(content.clone());
    run_ranks(size, move |comm| {
        let rank = comm.rank();
        let mut table = Table::create_with(
            &path,
            &content.desc,
            CreateOptions {
                comm: Some(comm),
                pseg: opts.clone(),
                ..CreateOptions::default()
            },
        )?;
        for (row, _) in owner.iter().enumerate().filter(|(_, &o)| o == rank) {
            for (col, cells) in content.desc.columns.iter().zip(&content.cells) {
                table.put_cell(&col.name, row as u64, &cells[row])?;
            }
        }
        table.finalize()
    })
}

fn read_all(path: &Path, opts: &OpenOptions) -> Vec<Vec<CellValue>> {
    let mut t = Table::open_with(path, Mode::Read, opts).unwrap();
    let desc = t.desc().clone();
    desc.columns
        .iter()
        .map(|c| (0..desc.nrows).map(|r| t.get_cell(&c.name, r).unwrap()).collect())
        .collect()
}

fn block_owner(nrows: u64, size: usize) -> Vec<usize> {
    let per = (nrows as usize).div_ceil(size).max(1);
    (0..nrows as usize).map(|r| r / per).collect()
}

fn two_col_desc(nrows: u64) -> TableDesc {
    TableDesc::new(
        vec![
            ColumnDesc::scalar("TIME", ElementType::Float64, ManagerId::Pseg),
            ColumnDesc::new(
                "DATA",
                ElementType::Complex64,
                ShapePolicy::VariableArray { ndim: 2 },
                ManagerId::Pseg,
            ),
        ],
        nrows,
    )
}

fn two_col_content(nrows: u64, seed: u64) -> Content {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let desc = two_col_desc(nrows);
    let cells = vec![
        (0..nrows).map(|_| random_cell(&mut rng, ElementType::Float64, &[])).collect(),
        (0..nrows)
            .map(|_| random_cell(&mut rng, ElementType::Complex64, &[2, 4]))
            .collect(),
    ];
    Content { desc, cells }
}

#[test]
fn four_ranks_two_groups_produce_two_segments() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t");
    let content = two_col_content(40, 1);
    let results = write_parallel(&path, dir.path(), &content, 4, block_owner(40, 4), Aggregators::Fixed(2));
    assert!(results.iter().all(Result::is_ok), "{results:?}");

    let mut names: Vec<String> = fs::read_dir(pseg::data_dir(&path))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(names, ["index", "seg.0", "seg.1"]);

    let records = read_index(&path).unwrap();
    assert!(records.len() >= 8, "{} records", records.len());
    for r in &records {
        assert!(pseg::segment_path(&pseg::data_dir(&path), r.segment_id).exists());
    }
    assert_eq!(audit_table(&path, &content.desc), Ok(records.len()));
    assert_eq!(read_all(&path, &OpenOptions::default()), content.cells);
}

#[test]
fn roles_and_scratch_descriptors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("roles");
    let scratch = dir.path().join("scratch");
    fs::create_dir(&scratch).unwrap();
    let (p, s) = (path.clone(), scratch.clone());
    let seen = run_ranks(3, move |comm| {
        let rank = comm.rank();
        let mut t = Table::create_with(
            &p,
            &two_col_desc(3),
            CreateOptions {
                comm: Some(comm),
                pseg: pseg_opts(&s),
                ..CreateOptions::default()
            },
        )
        .unwrap();
        let copy = s.join("psm_scratch").join(format!("rank{rank}")).join("roles").join("table.desc");
        let seen = (t.role(), copy.exists().then(|| fs::read(&copy).unwrap()));
        t.put_cell("TIME", rank as u64, &CellValue::scalar(rank as f64)).unwrap();
        t.put_cell("DATA", rank as u64, &CellValue::array(vec![1, 1], &[psm_core::Complex64::new(1.0, 2.0)]).unwrap())
            .unwrap();
        t.finalize().unwrap();
        seen
    });
    let master_desc = fs::read(path.join("table.desc")).unwrap();
    assert_eq!(seen[0], (Role::ParallelMaster, None));
    for s in &seen[1..] {
        assert_eq!(s.0, Role::ParallelWorker);
        assert_eq!(s.1.as_deref(), Some(master_desc.as_slice()));
    }
    assert!(!scratch.join("psm_scratch").exists());
    assert!(!path.join("table.lock").exists());
}

#[test]
fn single_rank_binds_serially_without_scratch() {
    let dir = tempfile::tempdir().unwrap();
    let scratch = dir.path().join("scratch");
    fs::create_dir(&scratch).unwrap();
    let content = two_col_content(5, 2);
    let results = write_parallel(&dir.path().join("t"), &scratch, &content, 1, vec![0; 5], Aggregators::Auto);
    assert!(results[0].is_ok());
    assert_eq!(fs::read_dir(&scratch).unwrap().count(), 0);
    let records = read_index(&dir.path().join("t")).unwrap();
    assert_eq!(records.len(), 2);
    assert_eq!((records[0].row_begin, records[0].row_count), (0, 5));
}

#[test]
fn desc_mismatch_fails_every_rank() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("t");
    let p = path.clone();
    let results = run_ranks(4, move |comm| {
        let mut desc = two_col_desc(8);
        if comm.rank() == 2 {
            desc.columns.push(ColumnDesc::scalar("EXTRA", ElementType::Int32, ManagerId::Pseg));
        }
        Table::create_with(&p, &desc, CreateOptions { comm: Some(comm), ..CreateOptions::default() })
            .map(drop)
    });
    for r in results {
        assert!(matches!(r, Err(Error::DescMismatch(_))), "{r:?}");
    }
    assert!(!path.exists());
}

#[test]
fn bad_aggregators_and_tiled_columns_are_rejected_collectively() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("agg");
    let results = run_ranks(2, move |comm| {
        let opts = CreateOptions {
            comm: Some(comm),
            pseg: PsegOptions { aggregators: Aggregators::Fixed(3), ..PsegOptions::default() },
            ..CreateOptions::default()
        };
        Table::create_with(&p, &two_col_desc(4), opts).map(drop)
    });
    assert!(results.iter().all(|r| matches!(r, Err(Error::InvalidOptions(_)))), "{results:?}");

    let p = dir.path().join("mixed");
    let results = run_ranks(2, move |comm| {
        let mut desc = two_col_desc(4);
        desc.columns.push(ColumnDesc::scalar("T", ElementType::Int32, ManagerId::Tiled));
        Table::create_with(&p, &desc, CreateOptions { comm: Some(comm), ..CreateOptions::default() })
            .map(drop)
    });
    assert!(results.iter().all(|r| matches!(r, Err(Error::UnsupportedOperation(_)))), "{results:?}");
}

#[test]
fn overlapping_rows_fail_finalize() {
    let dir = tempfile::tempdir().unwrap();
    let content = two_col_content(10, 3);
    let path = dir.path().join("t").to_path_buf();
    let c = Arc::new(content);
    let p = path.clone();
    let results = run_ranks(2, move |comm| {
        let rank = comm.rank();
        let mut t = Table::create_with(&p, &c.desc, CreateOptions { comm: Some(comm), ..CreateOptions::default() })?;
        let rows = if rank == 0 { 0..6 } else { 5..10 };
        for row in rows {
            t.put_cell("TIME", row, &c.cells[0][row as usize])?;
            t.put_cell("DATA", row, &c.cells[1][row as usize])?;
        }
        t.finalize()
    });
    for r in results {
        assert!(matches!(&r, Err(Error::OverlapError { column, row: 5 }) if column == "TIME"), "{r:?}");
    }
    assert!(!path.join("table.psegd").join("index").exists());
}

#[test]
fn missing_row_fails_finalize_with_coverage_gap() {
    let dir = tempfile::tempdir().unwrap();
    let c = Arc::new(two_col_content(10, 4));
    let p = dir.path().join("t");
    let results = run_ranks(2, move |comm| {
        let rank = comm.rank();
        let mut t = Table::create_with(&p, &c.desc, CreateOptions { comm: Some(comm), ..CreateOptions::default() })?;
        let rows = if rank == 0 { 0..5 } else { 6..10 };
        for row in rows {
            t.put_cell("TIME", row, &c.cells[0][row as usize])?;
            t.put_cell("DATA", row, &c.cells[1][row as usize])?;
        }
        t.finalize()
    });
    for r in results {
        assert!(matches!(&r, Err(Error::CoverageGap { row: 5, .. })), "{r:?}");
    }
}

#[test]
fn ranks_fixing_different_shapes_conflict() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t");
    let results = run_ranks(2, move |comm| {
        let rank = comm.rank();
        let desc = TableDesc::new(
            vec![ColumnDesc::new("V", ElementType::Int32, ShapePolicy::VariableArray { ndim: 1 }, ManagerId::Pseg)],
            2,
        );
        let mut t = Table::create_with(&p, &desc, CreateOptions { comm: Some(comm), ..CreateOptions::default() })?;
        let n = 2 + rank;
        t.put_cell("V", rank as u64, &CellValue::array(vec![n], &vec![0i32; n]).unwrap())?;
        t.finalize()
    });
    for r in results {
        assert!(matches!(&r, Err(Error::ShapeConflict { first, second, .. }) if first == &[2] && second == &[3]), "{r:?}");
    }
}

#[test]
fn lost_rank_fails_the_others_within_the_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t");
    let start = Instant::now();
    let results = run_ranks_timeout(3, Duration::from_secs(2), move |comm| {
        let rank = comm.rank();
        let mut t = Table::create_with(&p, &two_col_desc(3), CreateOptions { comm: Some(comm), ..CreateOptions::default() })?;
        if rank == 1 {
            // dropped without finalize
            return Ok(());
        }
        t.put_cell("TIME", rank as u64, &CellValue::scalar(0.0f64))?;
        t.finalize()
    });
    assert!(results[0].is_err() && results[2].is_err(), "{results:?}");
    assert!(start.elapsed() < Duration::from_secs(15));
}

#[test]
fn parallel_writes_equal_serial_and_tiled_content() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    for case in 0..6 {
        let content = random_content(&mut rng, ManagerId::Pseg);
        let nrows = content.desc.nrows as usize;

        let tiled_path = dir.path().join(format!("tiled{case}"));
        let mut tiled_desc = content.desc.rebound(ManagerId::Tiled);
        for (col, cells) in tiled_desc.columns.iter_mut().zip(&content.cells) {
            if let ShapePolicy::VariableArray { .. } = col.shape {
                col.shape = ShapePolicy::FixedArray(cells[0].shape().to_vec());
            }
        }
        let mut t = Table::create(&tiled_path, &tiled_desc).unwrap();
        for (col, cells) in tiled_desc.columns.iter().zip(&content.cells) {
            for (row, cell) in cells.iter().enumerate() {
                t.put_cell(&col.name, row as u64, cell).unwrap();
            }
        }
        t.finalize().unwrap();
        let tiled = read_all(&tiled_path, &OpenOptions::default());
        assert_eq!(tiled, content.cells);

        for size in [1, 2, 4, 8] {
            // random, non-contiguous ownership
            let mut owner: Vec<usize> = (0..nrows).map(|r| r % size).collect();
            owner.shuffle(&mut rng);
            let path = dir.path().join(format!("p{case}_{size}"));
            let results = write_parallel(&path, dir.path(), &content, size, owner, Aggregators::Auto);
            assert!(results.iter().all(Result::is_ok), "case {case} size {size}: {results:?}");
            audit_table(&path, &content.desc).unwrap();
            assert_eq!(read_all(&path, &OpenOptions::default()), tiled, "case {case} size {size}");
        }
    }
}

#[test]
fn generic_copy_between_managers() {
    let dir = tempfile::tempdir().unwrap();
    let content = two_col_content(12, 5);
    let src = dir.path().join("src");
    write_parallel(&src, dir.path(), &content, 2, block_owner(12, 2), Aggregators::Auto)
        .into_iter()
        .for_each(|r| r.unwrap());
    let tiled = dir.path().join("tiled");
    copy_table(&src, &tiled, ManagerId::Tiled).unwrap();
    let back = dir.path().join("back");
    copy_table(&tiled, &back, ManagerId::Pseg).unwrap();
    assert_eq!(read_all(&tiled, &OpenOptions::default()), content.cells);
    assert_eq!(read_all(&back, &OpenOptions::default()), content.cells);
    assert!(matches!(copy_table(&src, &tiled, ManagerId::Tiled), Err(Error::AlreadyExists(_))));
}

fn prefetch_table(dir: &Path, nrows: u64, cell_bytes: usize) -> (PathBuf, Vec<CellValue>) {
    let path = dir.join("pf");
    let desc = TableDesc::new(
        vec![ColumnDesc::new("D", ElementType::Float32, ShapePolicy::FixedArray(vec![cell_bytes / 4]), ManagerId::Pseg)],
        nrows,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let cells: Vec<CellValue> = (0..nrows)
        .map(|_| random_cell(&mut rng, ElementType::Float32, &[cell_bytes / 4]))
        .collect();
    let mut t = Table::create_with(&path, &desc, CreateOptions { comm: Some(psm_core::Communicator::solo()), ..CreateOptions::default() }).unwrap();
    for (r, c) in cells.iter().enumerate() {
        t.put_cell("D", r as u64, c).unwrap();
    }
    t.finalize().unwrap();
    (path, cells)
}

fn with_prefetch(rows: usize) -> OpenOptions {
    OpenOptions {
        pseg: PsegOptions { prefetch_rows: rows, ..PsegOptions::default() },
    }
}

#[test]
fn sequential_reads_are_batched() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cells) = prefetch_table(dir.path(), 4096, 8192);
    let mut on = Table::open_with(&path, Mode::Read, &with_prefetch(1024)).unwrap();
    let mut off = Table::open_with(&path, Mode::Read, &with_prefetch(1)).unwrap();
    for (r, cell) in cells.iter().enumerate() {
        assert_eq!(&on.get_cell("D", r as u64).unwrap(), cell);
        assert_eq!(&off.get_cell("D", r as u64).unwrap(), cell);
    }
    assert_eq!(on.backend_read_count("D").unwrap(), 4);
    assert_eq!(off.backend_read_count("D").unwrap(), 4096);
}

#[test]
fn scattered_reads_fetch_one_cell_each() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cells) = prefetch_table(dir.path(), 4096, 64);
    let mut t = Table::open_with(&path, Mode::Read, &with_prefetch(1024)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut rows: Vec<u64> = (1..4096).collect();
    rows.shuffle(&mut rng);
    // no two picked rows adjacent, so every access is a non-sequential miss
    let picked: Vec<u64> = rows.into_iter().filter(|r| r % 2 == 1).take(100).collect();
    for &r in &picked {
        assert_eq!(t.get_cell("D", r).unwrap(), cells[r as usize]);
    }
    assert_eq!(t.backend_read_count("D").unwrap(), 100);
}

#[test]
fn byte_cap_bounds_the_window() {
    let dir = tempfile::tempdir().unwrap();
    let (path, cells) = prefetch_table(dir.path(), 64, 1024);
    let opts = OpenOptions {
        pseg: PsegOptions { prefetch_rows: 1024, prefetch_bytes_cap: 4096, ..PsegOptions::default() },
    };
    let mut t = Table::open_with(&path, Mode::Read, &opts).unwrap();
    for (r, c) in cells.iter().enumerate() {
        assert_eq!(&t.get_cell("D", r as u64).unwrap(), c);
    }
    assert_eq!(t.backend_read_count("D").unwrap(), 16);
}

#[test]
fn cache_is_transparent_for_random_access_patterns() {
    let dir = tempfile::tempdir().unwrap();
    let content = two_col_content(50, 6);
    let path = dir.path().join("t");
    write_parallel(&path, dir.path(), &content, 4, block_owner(50, 4), Aggregators::Auto)
        .into_iter()
        .for_each(|r| r.unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let mut a = Table::open_with(&path, Mode::Read, &with_prefetch(rng.random_range(2..64))).unwrap();
        let mut b = Table::open_with(&path, Mode::Read, &with_prefetch(1)).unwrap();
        let mut row = rng.random_range(0..50u64);
        for _ in 0..100 {
            row = if rng.random_bool(0.7) { (row + 1) % 50 } else { rng.random_range(0..50) };
            let col = if rng.random_bool(0.5) { "TIME" } else { "DATA" };
            let got = a.get_cell(col, row).unwrap();
            assert_eq!(got, b.get_cell(col, row).unwrap());
            assert_eq!(got, content.cells[usize::from(col == "DATA")][row as usize]);
        }
    }
}

#[test]
fn payload_bit_flips_are_detected_before_data_is_returned() {
    let dir = tempfile::tempdir().unwrap();
    let content = two_col_content(16, 7);
    let path = dir.path().join("t");
    write_parallel(&path, dir.path(), &content, 2, block_owner(16, 2), Aggregators::Fixed(2))
        .into_iter()
        .for_each(|r| r.unwrap());
    let records = read_index(&path).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..20 {
        let rec = &records[rng.random_range(0..records.len())];
        let seg = pseg::segment_path(&pseg::data_dir(&path), rec.segment_id);
        let original = fs::read(&seg).unwrap();
        let byte = 8 + rec.offset as usize + rng.random_range(0..rec.length as usize);
        let mut bad = original.clone();
        bad[byte] ^= 1 << rng.random_range(0..8);
        fs::write(&seg, &bad).unwrap();

        let row = rec.row_begin + (byte as u64 - 8 - rec.offset) / (rec.length / rec.row_count);
        let col = &content.desc.columns[rec.column_id as usize].name;
        for prefetch in [1, 1024] {
            let mut t = Table::open_with(&path, Mode::Read, &with_prefetch(prefetch)).unwrap();
            // both the corrupted row and the first row of its record
            for r in [row, rec.row_begin] {
                let got = t.get_cell(col, r);
                assert!(matches!(got, Err(Error::IndexCorrupt(_))), "row {r}: {got:?}");
            }
        }
        fs::write(&seg, &original).unwrap();
    }
    assert_eq!(read_all(&path, &OpenOptions::default()), content.cells);
}

#[test]
fn index_bit_flips_and_bad_segment_headers_are_detected() {
    let dir = tempfile::tempdir().unwrap();
    let content = two_col_content(6, 8);
    let path = dir.path().join("t");
    write_parallel(&path, dir.path(), &content, 1, vec![0; 6], Aggregators::Auto)
        .into_iter()
        .for_each(|r| r.unwrap());
    let index = pseg::data_dir(&path).join("index");
    let original = fs::read(&index).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..20 {
        let mut bad = original.clone();
        let bit = rng.random_range(0..bad.len() * 8);
        bad[bit / 8] ^= 1 << (bit % 8);
        fs::write(&index, &bad).unwrap();
        assert!(matches!(Table::open(&path, Mode::Read), Err(Error::IndexCorrupt(_))));
    }
    fs::write(&index, &original).unwrap();

    let seg = pseg::segment_path(&pseg::data_dir(&path), 0);
    let good = fs::read(&seg).unwrap();
    let mut bad = good.clone();
    bad[4] = 7;
    fs::write(&seg, &bad).unwrap();
    let mut t = Table::open(&path, Mode::Read).unwrap();
    assert!(matches!(t.get_cell("TIME", 0), Err(Error::IndexCorrupt(_))));
    fs::write(&seg, &good[..good.len() - 1]).unwrap();
    let mut t = Table::open(&path, Mode::Read).unwrap();
    assert!(matches!(t.get_cell("DATA", 5), Err(Error::IndexCorrupt(_))));
}

#[test]
fn index_crcs_match_an_independent_crc() {
    let dir = tempfile::tempdir().unwrap();
    let content = two_col_content(9, 10);
    let path = dir.path().join("t");
    write_parallel(&path, dir.path(), &content, 3, block_owner(9, 3), Aggregators::Auto)
        .into_iter()
        .for_each(|r| r.unwrap());
    let bytes = fs::read(pseg::data_dir(&path).join("index")).unwrap();
    let (body, crc) = bytes.split_at(bytes.len() - 4);
    assert_eq!(common::crc32_oracle(body).to_le_bytes(), crc);
    assert_eq!(common::crc32_oracle(b"123456789"), 0xCBF4_3926);
}
