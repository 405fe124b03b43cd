use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xm3d::ext_three_sided::{pst_build, pst_delete, pst_insert, PstParams, DEFAULT_FANOUT_EXP};
use xm3d::oracle_bench::{fit_queries, QueryShape};
use xm3d::range_reporting_3d::{zt_build, zt_delete, zt_insert};
use xm3d::sided_small::{sided_cap, ss_build_shaped, ss_delete, ss_insert, Dir, Shape};
use xm3d::{
    generate, run_scaling, run_verify, BlockStore, Config, Dist, Full3D, Op, Point3, ScalingParams, Workload,
    WorkloadParams,
};

#[derive(Parser)]
#[command(name = "xm3d", version, about = "External-memory 3D range reporting: workloads, verification, I/O scaling")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a seeded workload file.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value = "uniform")]
        dist: Dist,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Mixed operations after the initial inserts; defaults to `n`.
        #[arg(long)]
        mixed: Option<usize>,
        #[arg(long, default_value_t = 10)]
        query_every: usize,
        #[arg(long, default_value_t = 0.001)]
        selectivity: f64,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Replay a workload file and report I/O totals.
    Run {
        #[arg(long)]
        workload: PathBuf,
        #[arg(long, default_value_t = 64)]
        block_size: usize,
        #[arg(long, default_value_t = DEFAULT_FANOUT_EXP)]
        fanout_exp: f64,
        /// Pinned-block budget standing in for main memory.
        #[arg(long)]
        mem_blocks: Option<usize>,
        /// Check every query against the brute-force oracle.
        #[arg(long)]
        verify: bool,
    },
    /// Measure query and update I/O over a grid of (N, B) cells.
    Scaling {
        /// Comma-separated `NxB` cells, e.g. `4096x32,65536x64`.
        #[arg(long, default_value = "4096x32,4096x64,16384x32,16384x64")]
        grid: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        queries: usize,
        #[arg(long, default_value_t = 200)]
        updates: usize,
        #[arg(long, value_enum, default_value_t = ShapeArg::Cube)]
        shape: ShapeArg,
        /// CSV output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Drive one structure with random updates and audit it after each batch.
    Audit {
        #[arg(long, value_enum)]
        structure: Structure,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 5000)]
        ops: usize,
        /// Operations between audits.
        #[arg(long, default_value_t = 250)]
        every: usize,
        #[arg(long, default_value_t = 32)]
        block_size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Cube,
    Slab,
}

#[derive(Clone, Copy, ValueEnum)]
enum Structure {
    /// The full 3D structure.
    Full,
    /// A z-range tree answering (2,1,2)-sided queries.
    Ztree,
    /// A three-sided tree over small integer z.
    Pst,
    /// A (2,1,2)-sided small set.
    Sided,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn output(path: Option<&PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?)),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Generate { n, dist, seed, mixed, query_every, selectivity, out } => {
            let p = WorkloadParams { mixed: mixed.unwrap_or(n), query_every, selectivity, ..WorkloadParams::new(n, dist, seed) };
            let mut w = output(out.as_ref())?;
            generate(p).write_to(&mut w)?;
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { workload, block_size, fanout_exp, mem_blocks, verify } => {
            let text = std::fs::read_to_string(&workload).with_context(|| format!("reading {}", workload.display()))?;
            let w = Workload::parse(&text)?;
            let mut cfg = Config { f: fanout_exp, ..Config::new(block_size) };
            if let Some(m) = mem_blocks {
                cfg.pinned_limit = m;
            }
            replay(&w, cfg, verify)
        }
        Cmd::Scaling { grid, seed, queries, updates, shape, out } => {
            let cells = parse_grid(&grid)?;
            let shape = match shape {
                ShapeArg::Cube => QueryShape::Cube,
                ShapeArg::Slab => QueryShape::Slab,
            };
            let params = ScalingParams { seed, queries, updates, shape, ..ScalingParams::default() };
            let rep = run_scaling(&cells, &params)?;
            let mut w = output(out.as_ref())?;
            rep.write_csv(&mut w)?;
            w.flush()?;
            match fit_queries(rep.query_rows()) {
                Some(f) => eprintln!("fit: k1={:.3} k2={:.3} k3={:.3} r2={:.4}", f.k1, f.k2, f.k3, f.r2),
                None => eprintln!("fit: too few query rows"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Audit { structure, n, ops, every, block_size, seed } => audit(structure, n, ops, every.max(1), block_size, seed),
    }
}

fn parse_grid(s: &str) -> Result<Vec<(usize, usize)>> {
    s.split(',')
        .map(|cell| {
            let (n, b) = cell.trim().split_once('x').with_context(|| format!("grid cell {cell:?} is not NxB"))?;
            Ok((n.parse().with_context(|| format!("N in {cell:?}"))?, b.parse().with_context(|| format!("B in {cell:?}"))?))
        })
        .collect()
}

fn replay(w: &Workload, cfg: Config, verify: bool) -> Result<ExitCode> {
    if verify {
        let rep = run_verify(w, cfg)?;
        print!("{rep}");
        return Ok(if rep.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) });
    }
    let mut t = Full3D::create(cfg)?;
    // Per class: operations, I/Os, points reported.
    let mut tally = [(0u64, 0u64, 0u64); 3];
    for (i, op) in w.ops.iter().enumerate() {
        let before = t.io_stats();
        let (class, k) = match op {
            Op::Insert(p) => (0, t.insert(*p).map(|_| 0)),
            Op::Delete(id) => (1, t.delete(*id).map(|_| 0)),
            Op::Query(q) => (2, t.query(q).map(|v| v.len() as u64)),
        };
        let k = k.with_context(|| format!("operation {i} ({op})"))?;
        let after = t.io_stats();
        let e = &mut tally[class];
        e.0 += 1;
        e.1 += after.reads + after.writes - before.reads - before.writes;
        e.2 += k;
    }
    let s = t.io_stats();
    println!("ops={} live={} reads={} writes={} blocks={}", w.ops.len(), t.len(), s.reads, s.writes, t.blocks());
    for (name, (n, io, k)) in ["insert", "delete", "query"].iter().zip(tally) {
        if n > 0 {
            let extra = if *name == "query" { format!(" mean_k={:.1}", k as f64 / n as f64) } else { String::new() };
            println!("{name}: count={n} mean_io={:.2}{extra}", io as f64 / n as f64);
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// Uniform random point; `z` is drawn from `1..=z_max` when given.
fn random_point(rng: &mut ChaCha8Rng, id: u64, z_max: Option<i64>) -> Point3 {
    let mut c = || rng.gen_range(0..1_000_000i64);
    let (x, y) = (c(), c());
    let z = match z_max {
        Some(m) => rng.gen_range(1..=m),
        None => rng.gen_range(0..1_000_000),
    };
    Point3::new(x, y, z, id)
}

/// Boxed update and audit hooks over one structure and its store.
struct Driven {
    insert: Box<dyn FnMut(Point3) -> xm3d::Result<()>>,
    delete: Box<dyn FnMut(u64) -> xm3d::Result<()>>,
    audit: Box<dyn Fn() -> Vec<String>>,
}

fn drive(structure: Structure, b: usize, pts: &[Point3]) -> Result<Driven> {
    use std::cell::RefCell;
    use std::rc::Rc;
    let pinned = Config::new(b).pinned_limit.max(32);
    Ok(match structure {
        Structure::Full => {
            let t = Rc::new(RefCell::new(Full3D::build(Config::new(b), pts)?));
            let (a, c) = (t.clone(), t.clone());
            Driven {
                insert: Box::new(move |p| a.borrow_mut().insert(p)),
                delete: Box::new(move |id| c.borrow_mut().delete(id).map(|_| ())),
                audit: Box::new(move || t.borrow().audit()),
            }
        }
        Structure::Ztree => {
            let mut s = BlockStore::with_pinned_limit(b, pinned)?;
            let t = zt_build(&mut s, pts, DEFAULT_FANOUT_EXP, Dir::Up)?;
            let st = Rc::new(RefCell::new((s, t)));
            let (a, c) = (st.clone(), st.clone());
            Driven {
                insert: Box::new(move |p| {
                    let (s, t) = &mut *a.borrow_mut();
                    zt_insert(s, t, p)
                }),
                delete: Box::new(move |id| {
                    let (s, t) = &mut *c.borrow_mut();
                    zt_delete(s, t, id).map(|_| ())
                }),
                audit: Box::new(move || {
                    let (s, t) = &*st.borrow();
                    t.audit(s)
                }),
            }
        }
        Structure::Pst => {
            let mut s = BlockStore::with_pinned_limit(b, pinned)?;
            let t = pst_build(&mut s, pts, PstParams::max_slots(b, DEFAULT_FANOUT_EXP), DEFAULT_FANOUT_EXP)?;
            let st = Rc::new(RefCell::new((s, t)));
            let (a, c) = (st.clone(), st.clone());
            Driven {
                insert: Box::new(move |p| {
                    let (s, t) = &mut *a.borrow_mut();
                    pst_insert(s, t, p)
                }),
                delete: Box::new(move |id| {
                    let (s, t) = &mut *c.borrow_mut();
                    pst_delete(s, t, id).map(|_| ())
                }),
                audit: Box::new(move || {
                    let (s, t) = &*st.borrow();
                    t.audit(s)
                }),
            }
        }
        Structure::Sided => {
            let mut s = BlockStore::with_pinned_limit(b, pinned)?;
            let t = ss_build_shaped(&mut s, pts, Shape::new([2, 1, 2]))?;
            let st = Rc::new(RefCell::new((s, t)));
            let (a, c) = (st.clone(), st.clone());
            Driven {
                insert: Box::new(move |p| {
                    let (s, t) = &mut *a.borrow_mut();
                    ss_insert(s, t, p)
                }),
                delete: Box::new(move |id| {
                    let (s, t) = &mut *c.borrow_mut();
                    ss_delete(s, t, id).map(|_| ())
                }),
                audit: Box::new(move || {
                    let (s, t) = &*st.borrow();
                    t.audit(s)
                }),
            }
        }
    })
}

fn audit(structure: Structure, n: usize, ops: usize, every: usize, b: usize, seed: u64) -> Result<ExitCode> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z_max = matches!(structure, Structure::Pst).then(|| PstParams::max_slots(b, DEFAULT_FANOUT_EXP) as i64);
    // A sided set must stay under its cap while inserts outnumber deletes.
    let cap = matches!(structure, Structure::Sided).then(|| sided_cap(b, Shape::new([2, 1, 2])));
    if let Some(c) = cap {
        if n >= c {
            bail!("a sided set at B={b} holds fewer than {c} points; pass a smaller --n");
        }
    }
    let pts: Vec<Point3> = (0..n as u64).map(|i| random_point(&mut rng, i, z_max)).collect();
    let mut d = drive(structure, b, &pts)?;
    let mut ids: Vec<u64> = pts.iter().map(|p| p.id).collect();
    let mut next = n as u64;
    let (mut audits, mut violations) = (0usize, 0usize);
    let mut check = |d: &Driven, done: usize| {
        let bad = d.audit.as_ref()();
        audits += 1;
        for m in bad.iter().take(5) {
            println!("after {done} ops: {m}");
        }
        violations += bad.len();
    };
    check(&d, 0);
    for op in 0..ops {
        let full = cap.is_some_and(|c| ids.len() + 1 >= c);
        if !ids.is_empty() && (full || rng.gen_bool(0.5)) {
            let id = ids.swap_remove(rng.gen_range(0..ids.len()));
            (d.delete)(id).with_context(|| format!("delete {id}"))?;
        } else {
            (d.insert)(random_point(&mut rng, next, z_max)).with_context(|| format!("insert {next}"))?;
            ids.push(next);
            next += 1;
        }
        if (op + 1) % every == 0 || op + 1 == ops {
            check(&d, op + 1);
        }
    }
    println!("operations={ops} audits={audits} violations={violations} live={}", ids.len());
    Ok(if violations == 0 { ExitCode::SUCCESS } else { ExitCode::from(1) })
}
