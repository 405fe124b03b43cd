//! Acceptance suite. Everything runs inside one test so that the largest
//! scaling cells never share memory with another structure. Each criterion
//! prints one PASS or FAIL line; the test fails if any criterion does.

use std::collections::HashMap;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xm3d::oracle_bench::{
    fit_queries, generate, log2_cubed, run_scaling, run_verify, Dist, ScalingParams, ScalingReport, SortedOracle,
    WorkloadParams, UNIVERSE,
};
use xm3d::range_reporting_3d::{Config, Full3D};
use xm3d::small_dominance::{sd_build, sd_delete, sd_insert, sd_query};
use xm3d::tab_boundary::{build_boundary, build_dominance_lists};
use xm3d::{BlockStore, Interval, Point3, QueryBox};

/// Query fit `(κ1, κ2, κ3)` recorded at the first complete run.
const QUERY_FIT_PIN: [f64; 3] = [11.391, 14.219, -42.367];
const QUERY_FIT_SLACK: f64 = 1.5;
const QUERY_FIT_R2: f64 = 0.9;
/// `sd_query` I/Os ≤ κ·(1 + k/B) at B = 64 on a dynamic ladder of up to
/// `4·B^{4/3}` points: 1.5× the worst ratio of the first run (20.06).
const SD_QUERY_KAPPA: f64 = 30.0;
/// Ladder updates over `B^{4/3}` operations ≤ κ·B^{4/3} at B = 64.
const SD_UPDATE_KAPPA: f64 = 4.0;
/// Per-update I/O over log₂³N stays within this factor of the fitted κ.
const UPDATE_SPREAD: f64 = 2.0;
const GEOMETRY_KAPPA: f64 = 6.0;
const LISTS_KAPPA: f64 = 2.0;

struct Outcome {
    id: usize,
    name: &'static str,
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(id: usize, name: &'static str, pass: bool, detail: String) -> Self {
        Outcome { id, name, pass, detail }
    }
}

fn io(store: &BlockStore) -> u64 {
    store.reads() + store.writes()
}

fn sorted_ids(v: &[Point3]) -> Vec<u64> {
    let mut ids: Vec<u64> = v.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    ids
}

/// Distinct coordinates on every axis, spaced three apart.
fn general_position(n: usize, seed: u64) -> Vec<Point3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut axis = || {
        let mut v: Vec<i64> = (0..n as i64).map(|k| 3 * k + 7).collect();
        v.shuffle(&mut rng);
        v
    };
    let (xs, ys, zs) = (axis(), axis(), axis());
    (0..n).map(|i| Point3::new(xs[i], ys[i], zs[i], i as u64)).collect()
}

fn dominator_count(pts: &[Point3], c: [i64; 3]) -> usize {
    pts.iter().filter(|p| p.x >= c[0] && p.y >= c[1] && p.z >= c[2]).count()
}

fn random_interval(rng: &mut ChaCha8Rng) -> Interval {
    let side = (UNIVERSE as f64 * rng.gen_range(0.02f64..0.6)) as i64;
    let lo = rng.gen_range(-side / 2..UNIVERSE);
    Interval::closed(lo, lo + side)
}

/// Criteria 1 and 10: static oracle equality over 500 boxes, with the
/// per-query instrumentation collected from the same queries.
fn static_queries() -> (Outcome, Outcome) {
    let w = generate(WorkloadParams { mixed: 0, ..WorkloadParams::new(50_000, Dist::Uniform, 101) });
    let pts: Vec<Point3> = w.ops.iter().filter_map(|o| if let xm3d::oracle_bench::Op::Insert(p) = o { Some(*p) } else { None }).collect();
    let t = Full3D::build(Config::new(32), &pts).expect("build");
    let oracle = SortedOracle::new(&pts);
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (mut mismatches, mut reported) = (0usize, 0usize);
    let (mut fact1, mut untiled, mut expanded) = (0usize, 0usize, 0usize);
    for _ in 0..500 {
        let q = QueryBox::new(random_interval(&mut rng), random_interval(&mut rng), random_interval(&mut rng));
        let (got, trace) = t.query_traced(&q).expect("query");
        let want = oracle.query(&q);
        reported += want.len();
        if sorted_ids(&got) != sorted_ids(&want) {
            mismatches += 1;
        }
        fact1 += trace.pst.fact1_violations;
        expanded += trace.pst.expanded;
        untiled += usize::from(!trace.tiled);
    }
    let c1 = Outcome::new(
        1,
        "static oracle equality",
        mismatches == 0,
        format!("500 boxes over N=50000, B=32: {mismatches} mismatches, {reported} points reported"),
    );
    let c10 = Outcome::new(
        10,
        "full-slot condition on expanded nodes",
        fact1 == 0 && untiled == 0,
        format!("{expanded} expanded nodes: {fact1} violations, {untiled} untiled decompositions"),
    );
    (c1, c10)
}

/// Criterion 2: 20000 interleaved operations replayed in lockstep.
fn dynamic_lockstep() -> Outcome {
    let p = WorkloadParams { mixed: 20_000, query_every: 10, selectivity: 0.005, ..WorkloadParams::new(5_000, Dist::Uniform, 201) };
    let rep = run_verify(&generate(p), Config::new(32)).expect("verify");
    let first = rep.divergence.as_ref().map_or("none".to_string(), |d| format!("op {}", d.op_index));
    Outcome::new(
        2,
        "dynamic oracle lockstep",
        rep.passed(),
        format!("5000 preloaded + 20000 mixed ops, {} queries, first divergence: {first}", rep.queries),
    )
}

fn boundary_size(b: usize) -> usize {
    (b as f64).powf(4.0 / 3.0).round() as usize
}

/// Criteria 3, 4 and 8 over `B ∈ {64, 128, 256}`, `|S| = B^{4/3}`, `t = B`.
fn boundaries() -> [Outcome; 3] {
    let (mut bad_count, mut corners) = (0usize, 0usize);
    let (mut bad_probe, mut probes) = (0usize, 0usize);
    let mut cost_lines = Vec::new();
    let mut costs_ok = true;
    for b in [64usize, 128, 256] {
        let n = boundary_size(b);
        let pts = general_position(n, 300 + b as u64);
        let mut s: BlockStore = BlockStore::new(b).expect("store");
        let s0 = io(&s);
        let mut bd = build_boundary(&mut s, &pts, b).expect("boundary");
        let geometry = (io(&s) - s0) as f64;
        let s1 = io(&s);
        build_dominance_lists(&mut s, &mut bd, &pts).expect("lists");
        let lists = (io(&s) - s1) as f64;
        let geo_kappa = geometry / (b as f64).powf(2.0 / 3.0);
        let list_kappa = lists / b as f64;
        costs_ok &= geo_kappa <= GEOMETRY_KAPPA && list_kappa <= LISTS_KAPPA;
        cost_lines.push(format!("B={b}: geometry {geo_kappa:.2}·B^(2/3), lists {list_kappa:.2}·B"));

        let t = bd.t();
        for c in bd.corners() {
            corners += 1;
            let k = dominator_count(&pts, c.position);
            bad_count += usize::from(k < t || k > 3 * t);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(400 + b as u64);
        let hi = 3 * n as i64 + 10;
        for _ in 0..1000 {
            probes += 1;
            let q = [rng.gen_range(0..hi), rng.gen_range(0..hi), rng.gen_range(0..hi)];
            bad_probe += usize::from(bd.dominated_corner(q).is_some() == bd.inside_staircase(q));
        }
    }
    [
        Outcome::new(3, "corner dominator counts in [t, 3t]", bad_count == 0, format!("{corners} corners, {bad_count} violations")),
        Outcome::new(4, "surface separates space", bad_probe == 0, format!("{probes} probes, {bad_probe} violations")),
        Outcome::new(
            8,
            "boundary construction cost",
            costs_ok,
            format!("{} (bounds {GEOMETRY_KAPPA}, {LISTS_KAPPA})", cost_lines.join("; ")),
        ),
    ]
}

/// Criterion 6: 10000 dominance queries on a ladder at B = 64 that keeps
/// changing between queries.
fn small_dominance_queries() -> Outcome {
    let b = 64usize;
    let cap = 4 * boundary_size(b);
    let mut rng = ChaCha8Rng::seed_from_u64(600);
    let coord = |rng: &mut ChaCha8Rng| rng.gen_range(0..100_000i64);
    let mut live: Vec<Point3> =
        (0..cap as u64 * 3 / 4).map(|i| Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), i)).collect();
    let mut next = live.len() as u64;
    let mut s: BlockStore = BlockStore::with_pinned_limit(b, cap / b + 4).expect("store");
    let mut ladder = sd_build(&mut s, &live).expect("ladder");
    let (mut worst, mut wrong) = (0.0f64, 0usize);
    for i in 0..10_000 {
        if i % 4 == 3 {
            if rng.gen_bool(0.5) && live.len() < cap {
                let p = Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), next);
                next += 1;
                sd_insert(&mut s, &mut ladder, p).expect("insert");
                live.push(p);
            } else {
                let p = live.swap_remove(rng.gen_range(0..live.len()));
                sd_delete(&mut s, &mut ladder, p.id).expect("delete");
            }
        }
        let q = Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), 0);
        let s0 = io(&s);
        let got = sd_query(&s, &ladder, &q).expect("query");
        let cost = (io(&s) - s0) as f64;
        worst = worst.max(cost / (1.0 + got.len() as f64 / b as f64));
        let want: Vec<Point3> = live.iter().filter(|p| p.x >= q.x && p.y >= q.y && p.z >= q.z).copied().collect();
        wrong += usize::from(sorted_ids(&got) != sorted_ids(&want));
    }
    Outcome::new(
        6,
        "small-set dominance query cost",
        worst <= SD_QUERY_KAPPA && wrong == 0,
        format!("worst I/O/(1+k/B) = {worst:.2} (bound {SD_QUERY_KAPPA}), {wrong} wrong answers"),
    )
}

/// First half of criterion 7: ladder update cost over `B^{4/3}` updates.
fn small_dominance_updates() -> (bool, String) {
    let b = 64usize;
    let m = boundary_size(b);
    let mut rng = ChaCha8Rng::seed_from_u64(700);
    let coord = |rng: &mut ChaCha8Rng| rng.gen_range(0..100_000i64);
    let mut live: Vec<Point3> =
        (0..2 * m as u64).map(|i| Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), i)).collect();
    let mut next = live.len() as u64;
    let mut s: BlockStore = BlockStore::with_pinned_limit(b, 4 * m / b + 4).expect("store");
    let mut ladder = sd_build(&mut s, &live).expect("ladder");
    let s0 = io(&s);
    for _ in 0..m {
        if rng.gen_bool(0.5) {
            let p = Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), next);
            next += 1;
            sd_insert(&mut s, &mut ladder, p).expect("insert");
            live.push(p);
        } else {
            let p = live.swap_remove(rng.gen_range(0..live.len()));
            sd_delete(&mut s, &mut ladder, p.id).expect("delete");
        }
    }
    let kappa = (io(&s) - s0) as f64 / m as f64;
    (kappa <= SD_UPDATE_KAPPA, format!("ladder {kappa:.2}·B^(4/3) over B^(4/3)={m} updates (bound {SD_UPDATE_KAPPA})"))
}

/// Criterion 5 from the query rows of the scaling report.
fn query_scaling(rep: &ScalingReport) -> Outcome {
    let Some(fit) = fit_queries(rep.query_rows()) else {
        return Outcome::new(5, "query I/O scaling fit", false, "too few rows to fit".into());
    };
    let got = [fit.k1, fit.k2, fit.k3];
    let within = got.iter().zip(QUERY_FIT_PIN).all(|(&g, p)| {
        let r = g / p;
        (1.0 / QUERY_FIT_SLACK..=QUERY_FIT_SLACK).contains(&r)
    });
    Outcome::new(
        5,
        "query I/O scaling fit",
        fit.r2 >= QUERY_FIT_R2 && within,
        format!(
            "R²={:.3} (need {QUERY_FIT_R2}), κ=({:.2}, {:.2}, {:.2}) vs pinned ({}, {}, {})",
            fit.r2, fit.k1, fit.k2, fit.k3, QUERY_FIT_PIN[0], QUERY_FIT_PIN[1], QUERY_FIT_PIN[2]
        ),
    )
}

/// Second half of criterion 7: for each block size and update kind, the
/// least-squares κ of `mean_io ≈ κ·log₂³N`, with every cell within
/// `UPDATE_SPREAD` of it.
fn full_updates(rep: &ScalingReport) -> (bool, String) {
    let mut groups: HashMap<(usize, &str), Vec<(f64, f64)>> = HashMap::new();
    for r in rep.rows.iter().filter(|r| r.opclass == "insert" || r.opclass == "delete") {
        groups.entry((r.b, r.opclass.as_str())).or_default().push((log2_cubed(r.n), r.mean_io));
    }
    let mut keys: Vec<_> = groups.keys().copied().collect();
    keys.sort_unstable();
    let mut ok = !keys.is_empty();
    let mut parts = Vec::new();
    for key in keys {
        let cells = &groups[&key];
        let kappa = cells.iter().map(|(x, y)| x * y).sum::<f64>() / cells.iter().map(|(x, _)| x * x).sum::<f64>();
        let ratios: Vec<f64> = cells.iter().map(|(x, y)| y / x / kappa).collect();
        let lo = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = ratios.iter().copied().fold(0.0, f64::max);
        ok &= lo >= 1.0 / UPDATE_SPREAD && hi <= UPDATE_SPREAD;
        parts.push(format!("B={} {} κ={kappa:.3} cells {lo:.2}..{hi:.2}", key.0, key.1));
    }
    (ok, parts.join("; "))
}

/// Criterion 9: audits after every batch of 500 operations, 10⁵ in total,
/// with every query also checked against the oracle.
fn audits() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(900);
    let coord = |rng: &mut ChaCha8Rng| rng.gen_range(0..1_000_000i64);
    let mut live: HashMap<u64, Point3> = HashMap::new();
    let init: Vec<Point3> = (0..3000u64).map(|i| Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), i)).collect();
    live.extend(init.iter().map(|p| (p.id, *p)));
    let mut ids: Vec<u64> = live.keys().copied().collect();
    let mut next = init.len() as u64;
    let mut t = Full3D::build(Config::new(32), &init).expect("build");
    let (mut violations, mut audited, mut wrong) = (0usize, 0usize, 0usize);
    let mut first = None;
    for op in 0..100_000usize {
        match rng.gen_range(0..10) {
            0 => {
                let a = [0; 3].map(|_| coord(&mut rng));
                let q = QueryBox::closed((a[0], a[0] + 80_000), (a[1], a[1] + 300_000), (a[2], a[2] + 200_000));
                let got = t.query(&q).expect("query");
                let want: Vec<Point3> = live.values().filter(|p| q.contains(p)).copied().collect();
                wrong += usize::from(sorted_ids(&got) != sorted_ids(&want));
            }
            k if k < 6 || ids.is_empty() => {
                let p = Point3::new(coord(&mut rng), coord(&mut rng), coord(&mut rng), next);
                next += 1;
                t.insert(p).expect("insert");
                live.insert(p.id, p);
                ids.push(p.id);
            }
            _ => {
                let id = ids.swap_remove(rng.gen_range(0..ids.len()));
                t.delete(id).expect("delete");
                live.remove(&id);
            }
        }
        if op % 500 == 499 {
            let bad = t.audit();
            audited = op + 1;
            if first.is_none() {
                first = bad.first().cloned();
            }
            violations += bad.len();
        }
    }
    Outcome::new(
        9,
        "structural audits",
        violations == 0 && wrong == 0,
        format!(
            "{audited} operations, {} live at end: {violations} violations{}, {wrong} wrong answers",
            live.len(),
            first.map_or(String::new(), |m| format!(" (first: {m})"))
        ),
    )
}

#[test]
fn acceptance_criteria() {
    let mut out = Vec::new();
    let (c1, c10) = static_queries();
    out.push(c1);
    out.push(dynamic_lockstep());
    out.extend(boundaries());
    out.push(small_dominance_queries());
    out.push(audits());
    out.push(c10);
    // The scaling grid runs last and alone: its largest cell is the
    // biggest allocation of the suite.
    let grid: Vec<(usize, usize)> =
        [12u32, 14, 16, 18].iter().flat_map(|&e| [32usize, 64].map(|b| (1usize << e, b))).collect();
    let rep = run_scaling(&grid, &ScalingParams::default()).expect("scaling");
    out.push(query_scaling(&rep));
    let (sd_ok, sd_detail) = small_dominance_updates();
    let (full_ok, full_detail) = full_updates(&rep);
    out.push(Outcome::new(7, "amortized update cost", sd_ok && full_ok, format!("{sd_detail}; {full_detail}")));
    out.sort_by_key(|o| o.id);
    for o in &out {
        println!("{} criterion {:>2} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.id, o.name, o.detail);
    }
    let failed: Vec<usize> = out.iter().filter(|o| !o.pass).map(|o| o.id).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
