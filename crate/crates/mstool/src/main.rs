use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand};
use mstool::bench::{bench_cell, bench_desc, BenchReport, RankResult, BENCH_COLUMN};
use mstool::manifest::Manifest;
use mstool::ms::{gen_table, MsLikeSchema, DEFAULT_NCHAN, DEFAULT_NPOL};
use mstool::ops::{self, open_input, parse_manager, require_absent, Verdict};
use mstool::procs::{rank_stdouts, spawn_ranks};
use mstool::{usage, UsageError};
use psm_core::pseg::read_index;
use psm_core::{
    copy_table, Aggregators, Communicator, CreateOptions, ManagerId, Mode, OpenOptions, PsegOptions, Table,
};

#[derive(Parser)]
#[command(name = "mstool", version, about = "Generate, convert, split, verify and benchmark tables")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded MeasurementSet-like table
    Gen {
        #[arg(long)]
        rows: u64,
        #[arg(long, default_value_t = DEFAULT_NPOL)]
        pols: usize,
        #[arg(long, default_value_t = DEFAULT_NCHAN)]
        chans: usize,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "tiled", value_parser = parse_manager)]
        manager: ManagerId,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Copy a table into a new one bound to another storage manager
    Convert {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_manager)]
        manager: ManagerId,
        #[arg(long, default_value_t = 1)]
        procs: usize,
        #[arg(long)]
        aggregators: Option<usize>,
        /// Parent of the workers' scratch root
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
    /// Keep a channel range of DATA and FLAG
    Split {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        chan_begin: usize,
        #[arg(long)]
        chan_end: usize,
    },
    /// Compare two tables row by row
    Verify {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
    },
    /// Parallel write and read throughput benchmarks
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Dump the descriptor and index records, or one cell, as JSON
    Inspect {
        table: PathBuf,
        #[arg(long, requires = "row")]
        column: Option<String>,
        #[arg(long, requires = "column")]
        row: Option<u64>,
    },
    #[command(hide = true)]
    ConvertRank {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        aggregators: Option<usize>,
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
    #[command(hide = true)]
    BenchWriteRank {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rows: u64,
        #[arg(long)]
        cell_bytes: u64,
        #[arg(long)]
        aggregators: Option<usize>,
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
    #[command(hide = true)]
    BenchReadRank {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        rank: usize,
        #[arg(long)]
        prefetch_rows: usize,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Parallel write of one f32 array column
    Write {
        #[arg(long, default_value_t = 1)]
        procs: usize,
        #[arg(long)]
        rows: u64,
        #[arg(long)]
        cell_bytes: u64,
        #[arg(long)]
        aggregators: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        scratch: Option<PathBuf>,
    },
    /// Every process reads the largest column sequentially
    Read {
        #[arg(long, default_value_t = 1)]
        procs: usize,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 1024)]
        prefetch_rows: usize,
    },
}

fn pseg_options(aggregators: Option<usize>, scratch: Option<PathBuf>) -> PsegOptions {
    let mut opts = PsegOptions::default();
    if let Some(n) = aggregators {
        opts.aggregators = Aggregators::Fixed(n);
    }
    if let Some(dir) = scratch {
        opts.scratch_dir = dir;
    }
    opts
}

fn check_procs(procs: usize, aggregators: Option<usize>) -> anyhow::Result<()> {
    if procs == 0 {
        return Err(usage("--procs must be at least 1"));
    }
    if let Some(g) = aggregators {
        if g == 0 || g > procs {
            return Err(usage(format!("--aggregators must be in 1..={procs}")));
        }
    }
    Ok(())
}

fn push_opt(args: &mut Vec<OsString>, flag: &str, value: Option<impl Into<OsString>>) {
    if let Some(v) = value {
        args.push(flag.into());
        args.push(v.into());
    }
}

fn report_verdict(verdict: &Verdict) -> u8 {
    match verdict {
        Verdict::Match => {
            println!("MATCH");
            0
        }
        Verdict::Schema(diff) => {
            println!("MISMATCH schema: {diff}");
            1
        }
        Verdict::Cell(m) => {
            println!("MISMATCH {}", serde_json::to_string(m).expect("serializable"));
            1
        }
    }
}

fn convert(
    input: &Path,
    out: &Path,
    manager: ManagerId,
    procs: usize,
    aggregators: Option<usize>,
    scratch: Option<PathBuf>,
) -> anyhow::Result<u8> {
    check_procs(procs, aggregators)?;
    open_input(input, &OpenOptions::default())?;
    require_absent(out)?;
    if procs > 1 && manager != ManagerId::Pseg {
        return Err(usage("only the pseg manager can be written by several processes"));
    }
    if procs == 1 {
        copy_table(input, out, manager)?;
    } else {
        let outputs = spawn_ranks(procs, true, |_| {
            let mut args: Vec<OsString> = vec!["convert-rank".into(), "--in".into(), input.into(), "--out".into(), out.into()];
            push_opt(&mut args, "--aggregators", aggregators.map(|g| g.to_string()));
            push_opt(&mut args, "--scratch", scratch.clone());
            args
        })?;
        rank_stdouts(outputs)?;
    }
    let verdict = ops::verify(input, out)?;
    if verdict != Verdict::Match {
        eprintln!("converted table does not verify against its source");
    }
    Ok(report_verdict(&verdict))
}

fn convert_rank(input: &Path, out: &Path, aggregators: Option<usize>, scratch: Option<PathBuf>) -> anyhow::Result<u8> {
    let mut src = Table::open(input, Mode::Read)?;
    let desc = src.desc().rebound(ManagerId::Pseg);
    let comm = Communicator::world()?;
    let rows = ops::block_range(desc.nrows, comm.size(), comm.rank());
    let opts = CreateOptions {
        comm: Some(comm),
        pseg: pseg_options(aggregators, scratch),
        ..CreateOptions::default()
    };
    let mut dst = Table::create_with(out, &desc, opts)?;
    ops::copy_rows(&mut src, &mut dst, rows)?;
    dst.finalize()?;
    Ok(0)
}

fn write_report(path: &Path, report: &BenchReport) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    std::fs::write(path, &text).with_context(|| format!("writing {}", path.display()))?;
    println!("{text}");
    Ok(())
}

fn parse_results(stdouts: Vec<String>) -> anyhow::Result<Vec<RankResult>> {
    stdouts
        .iter()
        .map(|s| serde_json::from_str(s.trim()).with_context(|| format!("bad rank report {s:?}")))
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn bench_write(
    procs: usize,
    rows: u64,
    cell_bytes: u64,
    aggregators: Option<usize>,
    out: &Path,
    report: &Path,
    scratch: Option<PathBuf>,
) -> anyhow::Result<u8> {
    check_procs(procs, aggregators)?;
    if cell_bytes == 0 || !cell_bytes.is_multiple_of(4) {
        return Err(usage("--cell-bytes must be a positive multiple of 4"));
    }
    require_absent(out)?;
    let start = Instant::now();
    let outputs = spawn_ranks(procs, true, |_| {
        let mut args: Vec<OsString> = vec![
            "bench-write-rank".into(),
            "--out".into(),
            out.into(),
            "--rows".into(),
            rows.to_string().into(),
            "--cell-bytes".into(),
            cell_bytes.to_string().into(),
        ];
        push_opt(&mut args, "--aggregators", aggregators.map(|g| g.to_string()));
        push_opt(&mut args, "--scratch", scratch.clone());
        args
    })?;
    let wall = start.elapsed().as_secs_f64();
    let mut results = parse_results(rank_stdouts(outputs)?)?;
    results.sort_by_key(|r| r.rank);

    // the written table must read back exactly
    let mut table = Table::open(out, Mode::Read)?;
    let mut h = crc32fast::Hasher::new();
    for row in 0..rows {
        let cell = table.get_cell(BENCH_COLUMN, row)?;
        if cell != bench_cell(row, cell_bytes) {
            bail!("row {row} of the benchmark table does not read back");
        }
        h.update(cell.as_bytes());
    }
    let checksum = h.finalize();
    Manifest {
        columns: [(BENCH_COLUMN.to_string(), checksum)].into(),
    }
    .write(out)?;

    let mut rep = BenchReport::new("write", procs, rows, cell_bytes, wall);
    rep.per_rank_seconds = results.iter().map(|r| r.seconds).collect();
    rep.checksum = Some(format!("{checksum:08x}"));
    write_report(report, &rep)?;
    Ok(0)
}

fn bench_write_rank(out: &Path, rows: u64, cell_bytes: u64, aggregators: Option<usize>, scratch: Option<PathBuf>) -> anyhow::Result<u8> {
    let start = Instant::now();
    let comm = Communicator::world()?;
    let rank = comm.rank();
    let mine = ops::block_range(rows, comm.size(), rank);
    let opts = CreateOptions {
        comm: Some(comm),
        pseg: pseg_options(aggregators, scratch),
        ..CreateOptions::default()
    };
    let mut table = Table::create_with(out, &bench_desc(rows, cell_bytes), opts)?;
    for row in mine {
        table.put_cell(BENCH_COLUMN, row, &bench_cell(row, cell_bytes))?;
    }
    table.finalize()?;
    let result = RankResult {
        rank,
        seconds: start.elapsed().as_secs_f64(),
        checksum: None,
        backend_reads: None,
    };
    println!("{}", serde_json::to_string(&result)?);
    Ok(0)
}

fn bench_read(procs: usize, input: &Path, report: &Path, prefetch_rows: usize) -> anyhow::Result<u8> {
    check_procs(procs, None)?;
    if prefetch_rows == 0 {
        return Err(usage("--prefetch-rows must be at least 1"));
    }
    let mut table = open_input(input, &OpenOptions::default())?;
    let (column, cell_bytes) = ops::largest_column(&mut table)?.expect("tables have a column");
    let rows = table.nrows();
    drop(table);

    let start = Instant::now();
    let outputs = spawn_ranks(procs, false, |rank| {
        vec![
            "bench-read-rank".into(),
            "--in".into(),
            input.into(),
            "--rank".into(),
            rank.to_string().into(),
            "--prefetch-rows".into(),
            prefetch_rows.to_string().into(),
        ]
    })?;
    let wall = start.elapsed().as_secs_f64();
    let mut results = parse_results(rank_stdouts(outputs)?)?;
    results.sort_by_key(|r| r.rank);

    let sums: Vec<u32> = results.iter().map(|r| r.checksum.unwrap_or_default()).collect();
    let expected = match Manifest::read(input)?.and_then(|m| m.columns.get(&column).copied()) {
        Some(c) => c,
        None => sums[0],
    };
    let mut rep = BenchReport::new("read", procs, rows, cell_bytes, wall);
    rep.per_rank_seconds = results.iter().map(|r| r.seconds).collect();
    rep.per_rank_backend_reads = results.iter().map(|r| r.backend_reads.unwrap_or_default()).collect();
    rep.checksum = Some(format!("{expected:08x}"));
    write_report(report, &rep)?;
    if let Some(k) = sums.iter().position(|&s| s != expected) {
        eprintln!("rank {k} read checksum {:08x}, expected {expected:08x}", sums[k]);
        return Ok(1);
    }
    Ok(0)
}

fn bench_read_rank(input: &Path, rank: usize, prefetch_rows: usize) -> anyhow::Result<u8> {
    let opts = OpenOptions {
        pseg: PsegOptions {
            prefetch_rows,
            ..PsegOptions::default()
        },
    };
    let start = Instant::now();
    let mut table = Table::open_with(input, Mode::Read, &opts)?;
    let (column, _) = ops::largest_column(&mut table)?.expect("tables have a column");
    let checksum = ops::column_checksum(&mut table, &column)?;
    let result = RankResult {
        rank,
        seconds: start.elapsed().as_secs_f64(),
        checksum: Some(checksum),
        backend_reads: Some(table.backend_read_count(&column)?),
    };
    println!("{}", serde_json::to_string(&result)?);
    Ok(0)
}

fn inspect(path: &Path, cell: Option<(String, u64)>) -> anyhow::Result<u8> {
    let mut table = open_input(path, &OpenOptions::default())?;
    let value = match cell {
        Some((column, row)) => {
            let mut v = ops::cell_json(&table.get_cell(&column, row)?);
            v["column"] = column.into();
            v["row"] = row.into();
            v
        }
        None => {
            let desc = table.desc().clone();
            let columns: Vec<_> = desc
                .columns
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "name": c.name,
                        "etype": c.etype.token(),
                        "shape": c.shape.to_string(),
                        "manager": c.manager.token(),
                    })
                })
                .collect();
            let records = if desc.uses_manager(ManagerId::Pseg) {
                serde_json::to_value(read_index(path)?)?
            } else {
                serde_json::Value::Array(Vec::new())
            };
            serde_json::json!({
                "nrows": desc.nrows,
                "desc": desc.to_text(),
                "columns": columns,
                "records": records,
            })
        }
    };
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(0)
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    match cli.cmd {
        Cmd::Gen {
            rows,
            pols,
            chans,
            out,
            manager,
            seed,
        } => {
            if pols == 0 || chans == 0 {
                return Err(usage("--pols and --chans must be positive"));
            }
            require_absent(&out)?;
            let schema = MsLikeSchema {
                npol: pols,
                nchan: chans,
                nrows: rows,
            };
            let summary = gen_table(&out, &schema, manager, seed)?;
            println!("{}", serde_json::to_string(&summary)?);
            Ok(0)
        }
        Cmd::Convert {
            input,
            out,
            manager,
            procs,
            aggregators,
            scratch,
        } => convert(&input, &out, manager, procs, aggregators, scratch),
        Cmd::Split {
            input,
            out,
            chan_begin,
            chan_end,
        } => {
            ops::split(&input, &out, chan_begin, chan_end)?;
            Ok(0)
        }
        Cmd::Verify { a, b } => Ok(report_verdict(&ops::verify(&a, &b)?)),
        Cmd::Bench(BenchCmd::Write {
            procs,
            rows,
            cell_bytes,
            aggregators,
            out,
            report,
            scratch,
        }) => bench_write(procs, rows, cell_bytes, aggregators, &out, &report, scratch),
        Cmd::Bench(BenchCmd::Read {
            procs,
            input,
            report,
            prefetch_rows,
        }) => bench_read(procs, &input, &report, prefetch_rows),
        Cmd::Inspect { table, column, row } => inspect(&table, column.zip(row)),
        Cmd::ConvertRank {
            input,
            out,
            aggregators,
            scratch,
        } => convert_rank(&input, &out, aggregators, scratch),
        Cmd::BenchWriteRank {
            out,
            rows,
            cell_bytes,
            aggregators,
            scratch,
        } => bench_write_rank(&out, rows, cell_bytes, aggregators, scratch),
        Cmd::BenchReadRank {
            input,
            rank,
            prefetch_rows,
        } => bench_read_rank(&input, rank, prefetch_rows),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) if e.is::<UsageError>() => {
            eprintln!("mstool: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("mstool: {e:#}");
            ExitCode::from(1)
        }
    }
}
