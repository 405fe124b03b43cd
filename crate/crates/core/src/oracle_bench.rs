//! Ground truth, workloads, lockstep verification and I/O scaling reports.
//!
//! The oracles keep no I/O accounting: they define correctness, not cost.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geom::{Axis, Interval, Point3, QueryBox};
use crate::range_reporting_3d::{Config, Full3D};

/// Linear filter of `live` by `q`, sorted by id.
pub fn oracle_query<'a>(live: impl IntoIterator<Item = &'a Point3>, q: &QueryBox) -> Vec<Point3> {
    let mut out: Vec<Point3> = live.into_iter().filter(|p| q.contains(p)).copied().collect();
    out.sort_unstable_by_key(|p| p.id);
    out
}

/// Independent second oracle: three axis-sorted copies. A query
/// binary-searches each axis, scans the narrowest candidate range and
/// checks the other two axes.
pub struct SortedOracle {
    by: [Vec<Point3>; 3],
}

impl SortedOracle {
    pub fn new(pts: &[Point3]) -> Self {
        let by = Axis::ALL.map(|a| {
            let mut v = pts.to_vec();
            v.sort_unstable_by_key(|p| p.coord(a));
            v
        });
        SortedOracle { by }
    }

    pub fn query(&self, q: &QueryBox) -> Vec<Point3> {
        let ranges = Axis::ALL.map(|a| {
            let v = &self.by[a.index()];
            let iv = q.axis(a);
            let lo = iv.lo.map_or(0, |l| v.partition_point(|p| p.coord(a) < l));
            let hi = iv.hi.map_or(v.len(), |h| v.partition_point(|p| p.coord(a) <= h));
            lo..hi.max(lo)
        });
        let best = (0..3).min_by_key(|&i| ranges[i].len()).expect("three axes");
        let mut out: Vec<Point3> = self.by[best][ranges[best].clone()]
            .iter()
            .filter(|p| Axis::ALL.iter().all(|&a| q.axis(a).contains(p.coord(a))))
            .copied()
            .collect();
        out.sort_unstable_by_key(|p| p.id);
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Op {
    Insert(Point3),
    Delete(u64),
    Query(QueryBox),
}

fn bound(v: Option<i64>) -> String {
    v.map_or_else(|| "*".to_string(), |c| c.to_string())
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Op::Insert(p) => write!(f, "I {} {} {} {}", p.x, p.y, p.z, p.id),
            Op::Delete(id) => write!(f, "D {id}"),
            Op::Query(q) => write!(
                f,
                "Q {} {} {} {} {} {}",
                bound(q.x.lo),
                bound(q.x.hi),
                bound(q.y.lo),
                bound(q.y.hi),
                bound(q.z.lo),
                bound(q.z.hi)
            ),
        }
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let f: Vec<&str> = s.split_whitespace().collect();
        let bad = || Error::Parse(format!("malformed operation {s:?}"));
        let int = |t: &str| t.parse::<i64>().map_err(|e| Error::Parse(format!("{t:?}: {e}")));
        let id = |t: &str| t.parse::<u64>().map_err(|e| Error::Parse(format!("{t:?}: {e}")));
        let side = |t: &str| if t == "*" { Ok(None) } else { int(t).map(Some) };
        match f.as_slice() {
            ["I", x, y, z, i] => Ok(Op::Insert(Point3::new(int(x)?, int(y)?, int(z)?, id(i)?))),
            ["D", i] => Ok(Op::Delete(id(i)?)),
            ["Q", b @ ..] if b.len() == 6 => {
                let iv = |k: usize| -> Result<Interval> { Ok(Interval { lo: side(b[k])?, hi: side(b[k + 1])? }) };
                Ok(Op::Query(QueryBox::new(iv(0)?, iv(2)?, iv(4)?)))
            }
            _ => Err(bad()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dist {
    Uniform,
    /// Gaussian clusters around uniformly placed centres.
    Clustered,
}

impl FromStr for Dist {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Dist::Uniform),
            "clustered" => Ok(Dist::Clustered),
            _ => Err(Error::Parse(format!("unknown distribution {s:?}"))),
        }
    }
}

impl fmt::Display for Dist {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Dist::Uniform => "uniform",
            Dist::Clustered => "clustered",
        })
    }
}

/// Coordinates are drawn from `0..UNIVERSE`.
pub const UNIVERSE: i64 = 1 << 20;

/// Generation parameters; together with the seed they fix the workload.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WorkloadParams {
    /// Points inserted up front.
    pub n: usize,
    pub dist: Dist,
    pub seed: u64,
    /// Interleaved operations after the initial inserts.
    pub mixed: usize,
    /// Every `query_every`-th mixed operation is a query.
    pub query_every: usize,
    /// Target fraction of the live set reported by a query.
    pub selectivity: f64,
}

impl WorkloadParams {
    pub fn new(n: usize, dist: Dist, seed: u64) -> Self {
        WorkloadParams { n, dist, seed, mixed: n, query_every: 10, selectivity: 0.001 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Workload {
    pub params: Option<WorkloadParams>,
    pub ops: Vec<Op>,
}

struct PointGen {
    rng: ChaCha8Rng,
    dist: Dist,
    centres: Vec<[f64; 3]>,
    spread: Normal<f64>,
}

impl PointGen {
    fn new(dist: Dist, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centres = (0..16).map(|_| [0; 3].map(|_: i32| rng.gen_range(0..UNIVERSE) as f64)).collect();
        let spread = Normal::new(0.0, UNIVERSE as f64 / 64.0).expect("positive spread");
        PointGen { rng, dist, centres, spread }
    }

    fn coord(&mut self, centre: f64) -> i64 {
        let v = centre + self.spread.sample(&mut self.rng);
        (v.round() as i64).clamp(0, UNIVERSE - 1)
    }

    fn point(&mut self, id: u64) -> Point3 {
        match self.dist {
            Dist::Uniform => {
                let r = &mut self.rng;
                Point3::new(r.gen_range(0..UNIVERSE), r.gen_range(0..UNIVERSE), r.gen_range(0..UNIVERSE), id)
            }
            Dist::Clustered => {
                let c = self.centres[self.rng.gen_range(0..self.centres.len())];
                Point3::new(self.coord(c[0]), self.coord(c[1]), self.coord(c[2]), id)
            }
        }
    }

    /// A box around a random point whose volume is `frac` of the universe.
    fn query(&mut self, frac: f64) -> QueryBox {
        let side = ((frac.clamp(0.0, 1.0)).cbrt() * UNIVERSE as f64).max(1.0) as i64;
        let c = self.point(0);
        let iv = |v: i64| Interval::closed(v - side / 2, v - side / 2 + side);
        QueryBox::new(iv(c.x), iv(c.y), iv(c.z))
    }

    /// A box spanning half the universe in y, with equal x and z sides
    /// sized so that its volume is `frac` of the universe.
    fn slab(&mut self, frac: f64) -> QueryBox {
        let side = ((2.0 * frac.clamp(0.0, 0.5)).sqrt() * UNIVERSE as f64).max(1.0) as i64;
        let c = self.point(0);
        let iv = |v: i64| Interval::closed(v - side / 2, v - side / 2 + side);
        let y0 = self.rng.gen_range(0..UNIVERSE / 2);
        QueryBox::new(iv(c.x), Interval::closed(y0, y0 + UNIVERSE / 2), iv(c.z))
    }

    fn shaped(&mut self, shape: QueryShape, frac: f64) -> QueryBox {
        match shape {
            QueryShape::Cube => self.query(frac),
            QueryShape::Slab => self.slab(frac),
        }
    }
}

/// Query boxes used by the scaling report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum QueryShape {
    /// Cubes around a random point; small outputs split deep in the y-tree.
    #[default]
    Cube,
    /// Half the universe in y, so the y-split sits near the root.
    Slab,
}

/// Deterministic workload: `n` inserts, then `mixed` operations with a
/// query every `query_every`-th and inserts and deletes equally likely.
pub fn generate(params: WorkloadParams) -> Workload {
    let mut g = PointGen::new(params.dist, params.seed);
    let mut ops = Vec::with_capacity(params.n + params.mixed);
    let mut live: Vec<u64> = Vec::with_capacity(params.n);
    let mut next = 0u64;
    for _ in 0..params.n {
        ops.push(Op::Insert(g.point(next)));
        live.push(next);
        next += 1;
    }
    for i in 0..params.mixed {
        if params.query_every > 0 && i % params.query_every == params.query_every - 1 {
            // Selectivity varies by up to 10x either side of the target.
            let frac = params.selectivity * 10f64.powf(g.rng.gen_range(-1.0..1.0));
            ops.push(Op::Query(g.query(frac)));
        } else if live.is_empty() || g.rng.gen_bool(0.5) {
            ops.push(Op::Insert(g.point(next)));
            live.push(next);
            next += 1;
        } else {
            let k = g.rng.gen_range(0..live.len());
            ops.push(Op::Delete(live.swap_remove(k)));
        }
    }
    Workload { params: Some(params), ops }
}

impl Workload {
    pub fn new(ops: Vec<Op>) -> Self {
        Workload { params: None, ops }
    }

    /// One operation per line; `#` lines carry the generation parameters.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        if let Some(p) = &self.params {
            writeln!(
                w,
                "# n={} dist={} seed={} mixed={} query_every={} selectivity={}",
                p.n, p.dist, p.seed, p.mixed, p.query_every, p.selectivity
            )?;
        }
        for op in &self.ops {
            writeln!(w, "{op}")?;
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }

    /// Parse the text format; blank lines and `#` comments are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut ops = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            ops.push(t.parse().map_err(|e| Error::Parse(format!("line {}: {e}", i + 1)))?);
        }
        Ok(Workload::new(ops))
    }
}

/// Overwrite the stored copy of point `id` after operation `after_op`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Fault {
    pub after_op: usize,
    pub id: u64,
    pub to: Point3,
}

/// First query on which the structure and the oracle disagree.
#[derive(Clone, Debug, PartialEq)]
pub struct Divergence {
    pub op_index: usize,
    pub query: QueryBox,
    pub live: usize,
    /// Expected ids not reported, or reported with other coordinates.
    pub missing: Vec<u64>,
    /// Reported ids not expected, or expected with other coordinates.
    pub extra: Vec<u64>,
    /// Shortest update prefix found that still fails, followed by the
    /// failing query.
    pub shrunk: Vec<Op>,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct VerifyReport {
    pub ops: usize,
    pub updates: usize,
    pub queries: usize,
    pub divergence: Option<Divergence>,
    /// An operation the structure rejected, with its index.
    pub error: Option<(usize, String)>,
}

impl VerifyReport {
    pub fn passed(&self) -> bool {
        self.divergence.is_none() && self.error.is_none()
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let verdict = if self.passed() { "PASS" } else { "FAIL" };
        writeln!(f, "{verdict} ops={} updates={} queries={}", self.ops, self.updates, self.queries)?;
        if let Some((i, e)) = &self.error {
            writeln!(f, "error at op {i}: {e}")?;
        }
        if let Some(d) = &self.divergence {
            writeln!(f, "divergence at op {}: {}", d.op_index, Op::Query(d.query))?;
            writeln!(f, "live={} missing={:?} extra={:?}", d.live, d.missing, d.extra)?;
            writeln!(f, "shrunk reproduction ({} ops):", d.shrunk.len())?;
            for op in &d.shrunk {
                writeln!(f, "  {op}")?;
            }
        }
        Ok(())
    }
}

enum Replay {
    Clean { updates: usize, queries: usize },
    Diverged { at: usize, got: Vec<Point3>, want: Vec<Point3>, live: usize, updates: usize, queries: usize },
    Rejected { at: usize, msg: String, updates: usize, queries: usize },
}

/// Replay `ops` against a fresh structure and the oracle in lockstep,
/// stopping at the first divergence. `fault` fires after its op index, or
/// just before the last op when `fault_last` is set.
fn replay(ops: &[Op], cfg: Config, fault: Option<Fault>, fault_last: bool) -> Result<Replay> {
    let mut t = Full3D::create(cfg)?;
    let mut live: HashMap<u64, Point3> = HashMap::new();
    let (mut updates, mut queries) = (0, 0);
    for (i, op) in ops.iter().enumerate() {
        if let Some(fl) = fault {
            if fault_last && i + 1 == ops.len() && t.contains(fl.id) {
                t.corrupt_point(fl.id, fl.to)?;
            }
        }
        let res = match op {
            Op::Insert(p) => {
                updates += 1;
                t.insert(*p).map(|_| {
                    live.insert(p.id, *p);
                })
            }
            Op::Delete(id) => {
                updates += 1;
                t.delete(*id).map(|_| {
                    live.remove(id);
                })
            }
            Op::Query(q) => {
                queries += 1;
                let got = t.query(q);
                match got {
                    Ok(got) => {
                        let want = oracle_query(live.values(), q);
                        if got != want {
                            return Ok(Replay::Diverged { at: i, got, want, live: live.len(), updates, queries });
                        }
                        Ok(())
                    }
                    Err(e) => Err(e),
                }
            }
        };
        if let Err(e) = res {
            return Ok(Replay::Rejected { at: i, msg: e.to_string(), updates, queries });
        }
        if let Some(fl) = fault {
            if !fault_last && fl.after_op == i && t.contains(fl.id) {
                t.corrupt_point(fl.id, fl.to)?;
            }
        }
    }
    Ok(Replay::Clean { updates, queries })
}

fn id_diff(a: &[Point3], b: &[Point3]) -> Vec<u64> {
    let bm: HashMap<u64, &Point3> = b.iter().map(|p| (p.id, p)).collect();
    a.iter().filter(|p| bm.get(&p.id) != Some(p)).map(|p| p.id).collect()
}

/// Binary-search the shortest update prefix that, followed by the failing
/// query, still diverges.
fn shrink(ops: &[Op], at: usize, cfg: Config, fault: Option<Fault>) -> Result<Vec<Op>> {
    let updates: Vec<Op> = ops[..at].iter().filter(|o| !matches!(o, Op::Query(_))).copied().collect();
    let q = ops[at];
    let fails = |m: usize| -> Result<bool> {
        let mut trial = updates[..m].to_vec();
        trial.push(q);
        Ok(matches!(replay(&trial, cfg, fault, true)?, Replay::Diverged { .. }))
    };
    let (mut lo, mut hi) = (0, updates.len());
    if !fails(hi)? {
        return Ok(ops[..=at].to_vec());
    }
    while lo < hi {
        let mid = (lo + hi) / 2;
        if fails(mid)? {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    let mut out = updates[..hi].to_vec();
    out.push(q);
    Ok(out)
}

/// Replay `w` against [`Full3D`] and the oracle in lockstep.
pub fn run_verify(w: &Workload, cfg: Config) -> Result<VerifyReport> {
    run_verify_with_fault(w, cfg, None)
}

pub fn run_verify_with_fault(w: &Workload, cfg: Config, fault: Option<Fault>) -> Result<VerifyReport> {
    let mut rep = VerifyReport { ops: w.ops.len(), ..VerifyReport::default() };
    match replay(&w.ops, cfg, fault, false)? {
        Replay::Clean { updates, queries } => {
            rep.updates = updates;
            rep.queries = queries;
        }
        Replay::Rejected { at, msg, updates, queries } => {
            rep.updates = updates;
            rep.queries = queries;
            rep.error = Some((at, msg));
        }
        Replay::Diverged { at, got, want, live, updates, queries } => {
            rep.updates = updates;
            rep.queries = queries;
            let Op::Query(query) = w.ops[at] else { unreachable!("divergence only on queries") };
            rep.divergence = Some(Divergence {
                op_index: at,
                query,
                live,
                missing: id_diff(&want, &got),
                extra: id_diff(&got, &want),
                shrunk: shrink(&w.ops, at, cfg, fault)?,
            });
        }
    }
    Ok(rep)
}

/// One row of a scaling report.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingRow {
    pub n: usize,
    pub b: usize,
    pub opclass: String,
    pub median_io: f64,
    pub mean_io: f64,
    pub k_mean: f64,
    /// Model term: `log_B²N + k/B` for queries, `log₂³N` for updates.
    pub fit_term: f64,
    /// `median_io / fit_term` for queries, `mean_io / fit_term` for updates.
    pub fit_kappa: f64,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct ScalingReport {
    pub rows: Vec<ScalingRow>,
}

pub const CSV_HEADER: [&str; 8] = ["n", "b", "opclass", "median_io", "mean_io", "k_mean", "fit_term", "fit_kappa"];

impl ScalingReport {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut c = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(e.into());
        c.write_record(CSV_HEADER).map_err(io)?;
        for r in &self.rows {
            c.write_record([
                r.n.to_string(),
                r.b.to_string(),
                r.opclass.clone(),
                format!("{:.1}", r.median_io),
                format!("{:.3}", r.mean_io),
                format!("{:.3}", r.k_mean),
                format!("{:.4}", r.fit_term),
                format!("{:.4}", r.fit_kappa),
            ])
            .map_err(io)?;
        }
        c.flush().map_err(Error::Io)
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ASCII output")
    }

    pub fn query_rows(&self) -> impl Iterator<Item = &ScalingRow> {
        self.rows.iter().filter(|r| r.opclass.starts_with("query"))
    }
}

/// Scaling run parameters shared by every grid cell.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingParams {
    pub seed: u64,
    pub f: f64,
    /// Queries per output-size class.
    pub queries: usize,
    /// Target output sizes as multiples of `B`; 0 asks for tiny outputs.
    pub k_blocks: Vec<usize>,
    /// Inserts measured, followed by as many deletes.
    pub updates: usize,
    pub shape: QueryShape,
}

impl Default for ScalingParams {
    fn default() -> Self {
        ScalingParams {
            seed: 1,
            f: crate::ext_three_sided::DEFAULT_FANOUT_EXP,
            queries: 100,
            k_blocks: vec![0, 1, 4, 16],
            updates: 200,
            shape: QueryShape::Cube,
        }
    }
}

fn median(v: &mut [f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_unstable_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

pub fn log_b_sq(n: usize, b: usize) -> f64 {
    ((n.max(2) as f64).ln() / (b as f64).ln()).powi(2)
}

pub fn log2_cubed(n: usize) -> f64 {
    (n.max(2) as f64).log2().powi(3)
}

fn row(n: usize, b: usize, opclass: String, ios: &mut [f64], ks: &[f64]) -> ScalingRow {
    let mean_io = ios.iter().sum::<f64>() / ios.len().max(1) as f64;
    let k_mean = ks.iter().sum::<f64>() / ks.len().max(1) as f64;
    let median_io = median(ios);
    let query = opclass.starts_with("query");
    let fit_term = if query { log_b_sq(n, b) + k_mean / b as f64 } else { log2_cubed(n) };
    let fit_kappa = if query { median_io } else { mean_io } / fit_term;
    ScalingRow { n, b, opclass, median_io, mean_io, k_mean, fit_term, fit_kappa }
}

/// Measure one grid cell: query classes by output size, then inserts and
/// deletes. Everything is seeded from `(params.seed, n, b)`.
pub fn scaling_cell(n: usize, b: usize, params: &ScalingParams) -> Result<Vec<ScalingRow>> {
    let seed = params.seed ^ ((n as u64) << 20) ^ b as u64;
    let mut g = PointGen::new(Dist::Uniform, seed);
    let pts: Vec<Point3> = (0..n as u64).map(|i| g.point(i)).collect();
    let cfg = Config { f: params.f, seed, ..Config::new(b) };
    let mut t = Full3D::build(cfg, &pts)?;
    let mut rows = Vec::new();
    for &kb in &params.k_blocks {
        let target = (kb * b).max(1);
        let frac = target as f64 / n as f64;
        let (mut ios, mut ks) = (Vec::new(), Vec::new());
        for _ in 0..params.queries {
            let q = g.shaped(params.shape, frac);
            let s0 = t.io_stats();
            let k = t.query(&q)?.len();
            let s1 = t.io_stats();
            ios.push((s1.reads + s1.writes - s0.reads - s0.writes) as f64);
            ks.push(k as f64);
        }
        let name = match kb {
            0 => "query_k1".to_string(),
            1 => "query_kB".to_string(),
            _ => format!("query_k{kb}B"),
        };
        rows.push(row(n, b, name, &mut ios, &ks));
    }
    let mut next = n as u64;
    let mut ins = Vec::with_capacity(params.updates);
    for _ in 0..params.updates {
        let p = g.point(next);
        next += 1;
        let s0 = t.io_stats();
        t.insert(p)?;
        let s1 = t.io_stats();
        ins.push((s1.reads + s1.writes - s0.reads - s0.writes) as f64);
    }
    rows.push(row(n, b, "insert".into(), &mut ins, &[]));
    let mut del = Vec::with_capacity(params.updates);
    for i in 0..params.updates {
        let id = (i * n / params.updates.max(1)) as u64;
        let s0 = t.io_stats();
        t.delete(id)?;
        let s1 = t.io_stats();
        del.push((s1.reads + s1.writes - s0.reads - s0.writes) as f64);
    }
    rows.push(row(n, b, "delete".into(), &mut del, &[]));
    Ok(rows)
}

/// Run every `(n, b)` cell in order.
pub fn run_scaling(grid: &[(usize, usize)], params: &ScalingParams) -> Result<ScalingReport> {
    let mut rows = Vec::new();
    for &(n, b) in grid {
        rows.extend(scaling_cell(n, b, params)?);
    }
    Ok(ScalingReport { rows })
}

/// Least-squares fit `median_io ≈ k1·log_B²N + k2·k/B + k3`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QueryFit {
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    pub r2: f64,
}

pub fn fit_queries<'a>(rows: impl IntoIterator<Item = &'a ScalingRow>) -> Option<QueryFit> {
    let rows: Vec<&ScalingRow> = rows.into_iter().collect();
    if rows.len() < 3 {
        return None;
    }
    let a = nalgebra::DMatrix::from_fn(rows.len(), 3, |i, j| match j {
        0 => log_b_sq(rows[i].n, rows[i].b),
        1 => rows[i].k_mean / rows[i].b as f64,
        _ => 1.0,
    });
    let y = nalgebra::DVector::from_iterator(rows.len(), rows.iter().map(|r| r.median_io));
    let x = a.clone().svd(true, true).solve(&y, 1e-12).ok()?;
    let pred = &a * &x;
    let mean = y.mean();
    let ss_res: f64 = (&y - &pred).iter().map(|e| e * e).sum();
    let ss_tot: f64 = y.iter().map(|v| (v - mean).powi(2)).sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Some(QueryFit { k1: x[0], k2: x[1], k3: x[2], r2 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::{any, prop_assert_eq, proptest};
    use rand::Rng;

    fn random_box(rng: &mut ChaCha8Rng, range: i64) -> QueryBox {
        let mut iv = || {
            let (a, b) = (rng.gen_range(-5..range + 5), rng.gen_range(-5..range + 5));
            match rng.gen_range(0..4) {
                0 => Interval::at_least(a),
                1 => Interval::at_most(a),
                _ => Interval::closed(a.min(b), a.max(b)),
            }
        };
        QueryBox::new(iv(), iv(), iv())
    }

    #[test]
    fn trivial_oracle_cases() {
        assert!(oracle_query(&[], &QueryBox::ALL).is_empty());
        let g = generate(WorkloadParams { mixed: 0, ..WorkloadParams::new(50, Dist::Uniform, 1) });
        let pts: Vec<Point3> = g.ops.iter().map(|o| if let Op::Insert(p) = o { *p } else { unreachable!() }).collect();
        assert_eq!(oracle_query(&pts, &QueryBox::ALL).len(), 50);
        assert_eq!(SortedOracle::new(&pts).query(&QueryBox::ALL).len(), 50);
    }

    #[test]
    fn oracles_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Point3> = (0..1000)
            .map(|i| Point3::new(rng.gen_range(0..300), rng.gen_range(0..300), rng.gen_range(0..300), i))
            .collect();
        let dual = SortedOracle::new(&pts);
        for _ in 0..50 {
            let q = random_box(&mut rng, 300);
            assert_eq!(oracle_query(&pts, &q), dual.query(&q), "{q:?}");
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for dist in [Dist::Uniform, Dist::Clustered] {
            let p = WorkloadParams::new(300, dist, 7);
            assert_eq!(generate(p), generate(p));
            assert_ne!(generate(p).ops, generate(WorkloadParams { seed: 8, ..p }).ops);
        }
        let w = generate(WorkloadParams::new(100, Dist::Uniform, 3));
        let queries = w.ops.iter().filter(|o| matches!(o, Op::Query(_))).count();
        assert_eq!(queries, 10);
    }

    #[test]
    fn text_format_round_trips() {
        let w = generate(WorkloadParams::new(200, Dist::Clustered, 4));
        assert_eq!(Workload::parse(&w.to_text()).unwrap().ops, w.ops);
        let q: Op = "Q * 5 -3 * 0 0".parse().unwrap();
        assert_eq!(q, Op::Query(QueryBox::new(Interval::at_most(5), Interval::at_least(-3), Interval::closed(0, 0))));
        assert_eq!(q.to_string(), "Q * 5 -3 * 0 0");
        assert!("Q 1 2 3".parse::<Op>().is_err());
        assert!("X 1".parse::<Op>().is_err());
        assert!(Workload::parse("I 1 2 3 4\nD x\n").is_err());
    }

    proptest! {
        #[test]
        fn any_op_round_trips(x in any::<i64>(), y in any::<i64>(), z in any::<i64>(), id in any::<u64>(),
                              lo in proptest::option::of(any::<i64>()), hi in proptest::option::of(any::<i64>())) {
            let ops = [
                Op::Insert(Point3::new(x, y, z, id)),
                Op::Delete(id),
                Op::Query(QueryBox::new(Interval { lo, hi }, Interval { lo: hi, hi: lo }, Interval::OPEN)),
            ];
            for op in ops {
                prop_assert_eq!(op.to_string().parse::<Op>().unwrap(), op);
            }
        }
    }

    #[test]
    fn median_and_fit() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
        let rows: Vec<ScalingRow> = [(4096, 32, 10.0), (65536, 32, 300.0), (4096, 64, 40.0), (65536, 64, 5.0)]
            .into_iter()
            .map(|(n, b, k)| {
                let io = 2.0 * log_b_sq(n, b) + 3.0 * k / b as f64 + 4.0;
                row(n, b, "query_x".into(), &mut [io], &[k])
            })
            .collect();
        let fit = fit_queries(&rows).unwrap();
        assert!((fit.k1 - 2.0).abs() < 1e-6 && (fit.k2 - 3.0).abs() < 1e-6 && (fit.k3 - 4.0).abs() < 1e-6, "{fit:?}");
        assert!(fit.r2 > 0.999);
    }

    #[test]
    fn single_cell_gives_one_row_per_class() {
        let params = ScalingParams { queries: 10, updates: 20, k_blocks: vec![1], ..ScalingParams::default() };
        let rep = run_scaling(&[(2000, 32)], &params).unwrap();
        let classes: Vec<&str> = rep.rows.iter().map(|r| r.opclass.as_str()).collect();
        assert_eq!(classes, ["query_kB", "insert", "delete"]);
        let csv = rep.to_csv();
        assert!(csv.starts_with("n,b,opclass,median_io,mean_io,k_mean,fit_term,fit_kappa\n"));
        assert_eq!(csv.lines().count(), 4);
        assert_eq!(run_scaling(&[(2000, 32)], &params).unwrap(), rep);
    }
}
