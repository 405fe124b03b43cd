//! Static t-approximate boundaries for small point sets.
//!
//! A boundary is a monotone staircase surface such that every inward corner
//! is dominated by at least `t` and at most `3t` points of the set. It is
//! built by a ridge sweep in descending z. Every inward corner `c` carries a
//! dominance list `Dom(c)`; the lists of the corners with processing index
//! in `[lo(c), index(c)]` together contain every point dominating `c`.
//!
//! Geometry is computed on ranks (the set must have distinct coordinates on
//! every axis). Rank position `r` maps back to the smallest coordinate `v`
//! for which a point with coordinate `v` has rank at least `r`, so dominance
//! tests in the original space agree with rank-space tests.

use std::collections::{BTreeMap, HashMap};

use crate::batch_engine::{batch_query_all, build_batchset, DEFAULT_EXPONENT};
use crate::block_io::{BlockStore, Run};
use crate::error::{Error, Result};
use crate::geom::{Interval, QueryBox, Spatial};

/// Largest set accepted by [`build_boundary`], as a multiple of `B^{4/3}`.
pub const SIZE_ALPHA: f64 = 4.0;

pub fn boundary_cap(b: usize) -> usize {
    (SIZE_ALPHA * (b as f64).powf(4.0 / 3.0)).floor() as usize
}

/// One ridge of the sweep: a staircase in the plane `z = level`.
#[derive(Clone, Debug, PartialEq)]
pub struct Ridge {
    pub index: usize,
    /// Level in original coordinates.
    pub z: i64,
    /// Maximal staircase points, ascending x (descending y).
    pub outer: Vec<(i64, i64)>,
    /// Concave staircase points, ascending x (descending y).
    pub inner: Vec<(i64, i64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InwardCorner {
    pub position: [i64; 3],
    /// Position of the corner's level among the distinct corner levels, ascending z.
    pub level: usize,
    /// Processing index: ascending z, then ascending x.
    pub index: usize,
    pub parent: Option<usize>,
    pub children: Vec<usize>,
    /// Earlier corners whose lists may hold points withheld from this
    /// one: the three preceding same-level neighbours, the descendants, and
    /// the descendants of the three neighbours on either side. Ascending.
    pub covers: Vec<usize>,
    /// Smallest index in `covers`, or `index` when empty.
    pub window_lo: usize,
    rank: [usize; 3],
}

/// Outcome of a boundary probe.
#[derive(Clone, Debug, PartialEq)]
pub enum Located<R> {
    /// The query dominates a corner; all points of the set dominating it.
    Found(Vec<R>),
    /// The query is dominated by the surface, hence by at least `t` points.
    BelowBoundary,
}

pub struct TApproxBoundary<R> {
    t: usize,
    len: usize,
    ridges: Vec<Ridge>,
    corners: Vec<InwardCorner>,
    /// `axis_vals[a][r]`: original coordinate of rank `r` (1-based) on axis `a`.
    /// Only list construction needs it; emptied once the lists exist.
    axis_vals: [Vec<i64>; 3],
    locator: BlockStore<[i64; 4]>,
    locator_run: Run,
    lists: Option<Run>,
    offsets: Vec<usize>,
    _rec: std::marker::PhantomData<R>,
}

impl<R> std::fmt::Debug for TApproxBoundary<R> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TApproxBoundary")
            .field("t", &self.t)
            .field("len", &self.len)
            .field("ridges", &self.ridges.len())
            .field("corners", &self.corners.len())
            .field("lists_built", &self.lists.is_some())
            .finish()
    }
}

// ---------------------------------------------------------------------------
// rank-space sweep

/// Distinct-rank view of the input. Ranks run `1..=n`; position 0 is the
/// coordinate plane and `n + 1` lies beyond every point.
struct Ranks {
    n: usize,
    r: Vec<[usize; 3]>,
    by: [Vec<usize>; 3],
}

impl Ranks {
    fn new<R: Spatial>(points: &[R]) -> Result<(Self, [Vec<i64>; 3])> {
        let n = points.len();
        let mut r = vec![[0usize; 3]; n];
        let mut by: [Vec<usize>; 3] = Default::default();
        let mut vals: [Vec<i64>; 3] = Default::default();
        for a in 0..3 {
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by_key(|&i| points[i].coords()[a]);
            for w in order.windows(2) {
                if points[w[0]].coords()[a] == points[w[1]].coords()[a] {
                    return Err(Error::Precondition(format!(
                        "duplicate coordinate {} on axis {a}",
                        points[w[0]].coords()[a]
                    )));
                }
            }
            by[a] = vec![usize::MAX; n + 2];
            vals[a] = Vec::with_capacity(n);
            for (k, &i) in order.iter().enumerate() {
                r[i][a] = k + 1;
                by[a][k + 1] = i;
                vals[a].push(points[i].coords()[a]);
            }
        }
        Ok((Ranks { n, r, by }, vals))
    }
}

/// Original-space value of rank position `r` on an axis.
fn rank_to_coord(vals: &[i64], r: usize) -> i64 {
    if r <= 1 {
        i64::MIN
    } else {
        vals[r - 2] + 1
    }
}

/// Dominance counter for a planar probe at the current sweep height.
struct Probe<'a> {
    rk: &'a Ranks,
    active: &'a [bool],
    px: usize,
    py: usize,
    cnt: usize,
}

impl<'a> Probe<'a> {
    fn new(rk: &'a Ranks, active: &'a [bool], px: usize, py: usize) -> Self {
        let cnt = (0..rk.n).filter(|&i| active[i] && rk.r[i][0] >= px && rk.r[i][1] >= py).count();
        Probe { rk, active, px, py, cnt }
    }

    fn inc_x(&mut self) {
        if (1..=self.rk.n).contains(&self.px) {
            let s = self.rk.by[0][self.px];
            if self.active[s] && self.rk.r[s][1] >= self.py {
                self.cnt -= 1;
            }
        }
        self.px += 1;
    }

    fn dec_x(&mut self) {
        self.px -= 1;
        if self.px >= 1 && self.px <= self.rk.n {
            let s = self.rk.by[0][self.px];
            if self.active[s] && self.rk.r[s][1] >= self.py {
                self.cnt += 1;
            }
        }
    }

    fn inc_y(&mut self) {
        if (1..=self.rk.n).contains(&self.py) {
            let s = self.rk.by[1][self.py];
            if self.active[s] && self.rk.r[s][0] >= self.px {
                self.cnt -= 1;
            }
        }
        self.py += 1;
    }
}

/// Maximal elements of a planar point set, ascending x.
fn staircase(mut pts: Vec<(usize, usize)>) -> Vec<(usize, usize)> {
    pts.sort_unstable_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)));
    let mut out: Vec<(usize, usize)> = Vec::new();
    for p in pts {
        if out.last().map_or(true, |l| p.1 > l.1) {
            out.push(p);
        }
    }
    out.reverse();
    out
}

/// Concave corners of the down-set of a staircase, ascending x.
fn concave(outer: &[(usize, usize)]) -> Vec<(usize, usize)> {
    let m = outer.len();
    let mut v = Vec::with_capacity(m + 1);
    v.push((0, outer[0].1));
    for k in 1..m {
        v.push((outer[k - 1].0, outer[k].1));
    }
    v.push((outer[m - 1].0, 0));
    v.sort_unstable();
    v.dedup();
    let keep: Vec<bool> = v.iter().map(|p| !v.iter().any(|q| q != p && q.0 <= p.0 && q.1 <= p.1)).collect();
    v.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect()
}

/// Trace a new ridge around `prev` at the current sweep height.
fn trace_ridge(rk: &Ranks, active: &[bool], prev: &[(usize, usize)], t: usize) -> Vec<(usize, usize)> {
    let ext = |py: usize| prev.iter().filter(|o| o.1 >= py).map(|o| o.0).max();
    let top_of = |px: usize| prev.iter().filter(|o| o.0 >= px).map(|o| o.1).max().unwrap_or(0);
    let next_left = |top: usize| prev.iter().filter(|o| o.1 > top).map(|o| o.0).max();

    let x_start = prev.iter().map(|o| o.0).max().unwrap_or(0);
    let mut p = Probe::new(rk, active, x_start, 0);
    while p.cnt > 2 * t {
        p.inc_x();
    }
    let mut outer = Vec::new();
    'ridge: loop {
        // (1) raise y until dominated by at most t points
        while p.cnt > t {
            p.inc_y();
        }
        outer.push((p.px, p.py));
        // (2) lower x until 2t, the previous ridge, or the plane
        loop {
            if ext(p.py) == Some(p.px) {
                // (3) follow the previous ridge
                loop {
                    let top = top_of(p.px);
                    while p.py < top {
                        p.inc_y();
                    }
                    outer.push((p.px, p.py));
                    let target = next_left(top).unwrap_or(0);
                    while p.px > target {
                        p.dec_x();
                        if p.cnt >= 2 * t {
                            continue 'ridge;
                        }
                    }
                    if p.px == 0 {
                        break 'ridge;
                    }
                }
            }
            if p.px == 0 {
                break 'ridge;
            }
            p.dec_x();
            if p.cnt >= 2 * t {
                continue 'ridge;
            }
        }
    }
    outer.extend_from_slice(prev);
    staircase(outer)
}

struct Sweep {
    /// (level rank, staircase) for every ridge, R_0 first.
    ridges: Vec<(usize, Vec<(usize, usize)>)>,
    /// Candidate corners: concave corners of each ridge placed at the next level.
    candidates: Vec<[usize; 3]>,
}

/// Ridge sweep. `order` lists point indices by descending z; `advance`
/// is called once per point pulled from that list.
fn sweep(rk: &Ranks, t: usize, order: &[usize], mut advance: impl FnMut(usize) -> Result<()>) -> Result<Sweep> {
    let n = rk.n;
    let mut active = vec![false; n];
    if n < t {
        return Ok(Sweep { ridges: vec![(0, vec![(0, 0)])], candidates: Vec::new() });
    }
    let mut ridges = vec![(n, vec![(0usize, 0usize)])];
    let mut candidates = Vec::new();
    let mut next = 0usize;
    loop {
        let prev = ridges.last().unwrap().1.clone();
        let corners = concave(&prev);
        let mut cnt: Vec<usize> = corners
            .iter()
            .map(|c| (0..n).filter(|&i| active[i] && rk.r[i][0] >= c.0 && rk.r[i][1] >= c.1).count())
            .collect();
        // lower the previous ridge until a corner reaches 3t
        let mut level = 0usize;
        while next < n {
            let s = order[next];
            advance(next)?;
            next += 1;
            active[s] = true;
            let mut hit = false;
            for (k, c) in corners.iter().enumerate() {
                if rk.r[s][0] >= c.0 && rk.r[s][1] >= c.1 {
                    cnt[k] += 1;
                    hit |= cnt[k] >= 3 * t;
                }
            }
            if hit {
                level = rk.r[s][2];
                break;
            }
        }
        if level == 0 {
            // the plane: every point is active
            while next < n {
                advance(next)?;
                active[order[next]] = true;
                next += 1;
            }
        }
        candidates.extend(corners.iter().map(|c| [c.0, c.1, level]));
        let outer = trace_ridge(rk, &active, &prev, t);
        ridges.push((level, outer));
        if level == 0 {
            break;
        }
    }
    Ok(Sweep { ridges, candidates })
}

/// Minimal elements of a 3D point set.
fn minimal(mut pts: Vec<[usize; 3]>) -> Vec<[usize; 3]> {
    pts.sort_unstable();
    pts.dedup();
    let keep: Vec<bool> = pts
        .iter()
        .map(|p| !pts.iter().any(|q| q != p && q[0] <= p[0] && q[1] <= p[1] && q[2] <= p[2]))
        .collect();
    pts.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect()
}

// ---------------------------------------------------------------------------
// construction

/// Build the boundary geometry and the corner locator. Dominance lists are
/// filled separately by [`build_dominance_lists`].
///
/// The sweep keeps an in-memory mirror of the processed points; the x- and
/// y-sorted groups it consults are charged as one read and one write per
/// group and axis for every ridge.
pub fn build_boundary<R: Spatial>(store: &mut BlockStore<R>, points: &[R], t: usize) -> Result<TApproxBoundary<R>> {
    let b = store.block_capacity();
    if t < b {
        return Err(Error::Parameter(format!("threshold t = {t} is below the block size {b}")));
    }
    let cap = boundary_cap(b);
    if points.len() > cap {
        return Err(Error::Capacity(format!("{} points exceed the boundary cap {cap}", points.len())));
    }
    let (rk, vals) = Ranks::new(points)?;
    let n = rk.n;

    let mut input = store.write_run(points)?;
    let mut by_z = store.external_sort(&input, |a, b| b.coords()[2].cmp(&a.coords()[2]))?;
    store.free_run(&mut input)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_unstable_by(|&a, &b| rk.r[b][2].cmp(&rk.r[a][2]));

    let sw = {
        let store = &*store;
        let mut current = usize::MAX;
        sweep(&rk, t, &order, |k| {
            if k / b != current {
                current = k / b;
                store.read_block(by_z.blocks[current])?;
            }
            Ok(())
        })?
    };
    store.free_run(&mut by_z)?;
    for &(level, _) in sw.ridges.iter().skip(1) {
        let processed = if level == 0 { n } else { n + 1 - level.min(n + 1) };
        let groups = processed.div_ceil(b) as u64;
        store.charge_reads(2 * groups);
        store.charge_writes(2 * groups);
    }

    let to_orig = |a: usize, r: usize| rank_to_coord(&vals[a], r);
    let ridges: Vec<Ridge> = sw
        .ridges
        .iter()
        .enumerate()
        .map(|(index, (level, outer))| Ridge {
            index,
            z: to_orig(2, *level),
            outer: outer.iter().map(|&(x, y)| (to_orig(0, x), to_orig(1, y))).collect(),
            inner: concave(outer).iter().map(|&(x, y)| (to_orig(0, x), to_orig(1, y))).collect(),
        })
        .collect();

    let mut pos = minimal(sw.candidates);
    pos.sort_unstable_by_key(|p| (p[2], p[0]));
    let corners = index_corners(&pos, |p| [to_orig(0, p[0]), to_orig(1, p[1]), to_orig(2, p[2])]);

    let mut locator: BlockStore<[i64; 4]> = store.sibling();
    let recs: Vec<[i64; 4]> = corners
        .iter()
        .map(|c| [c.position[0], c.position[1], c.position[2], c.index as i64])
        .collect();
    let locator_run = locator.write_run(&recs)?;

    Ok(TApproxBoundary {
        t,
        len: n,
        ridges,
        corners,
        axis_vals: vals,
        locator,
        locator_run,
        lists: None,
        offsets: Vec::new(),
        _rec: std::marker::PhantomData,
    })
}

/// Assign indices, parents, children and reporting windows. `pos` must be
/// sorted by (z, x).
fn index_corners(pos: &[[usize; 3]], orig: impl Fn(&[usize; 3]) -> [i64; 3]) -> Vec<InwardCorner> {
    let m = pos.len();
    let mut level = vec![0usize; m];
    for i in 1..m {
        level[i] = level[i - 1] + usize::from(pos[i][2] != pos[i - 1][2]);
    }
    // parent: earliest corner on a higher level whose projection this one dominates
    let parent: Vec<Option<usize>> = (0..m)
        .map(|i| (i + 1..m).find(|&d| pos[d][2] > pos[i][2] && pos[i][0] >= pos[d][0] && pos[i][1] >= pos[d][1]))
        .collect();
    let mut children = vec![Vec::new(); m];
    for (i, p) in parent.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    // children precede parents, so one forward pass settles descendant sets
    let mut desc: Vec<Vec<usize>> = vec![Vec::new(); m];
    for i in 0..m {
        let mut d: Vec<usize> = Vec::new();
        for &ch in &children[i] {
            d.push(ch);
            d.extend_from_slice(&desc[ch]);
        }
        desc[i] = d;
    }
    let mut corners = Vec::with_capacity(m);
    for i in 0..m {
        let mut cov: Vec<usize> = desc[i].clone();
        for d in 1..=3 {
            if i >= d && level[i - d] == level[i] {
                cov.push(i - d);
                cov.extend_from_slice(&desc[i - d]);
            }
            if i + d < m && level[i + d] == level[i] {
                cov.extend_from_slice(&desc[i + d]);
            }
        }
        cov.sort_unstable();
        cov.dedup();
        let lo = cov.first().copied().unwrap_or(i);
        corners.push(InwardCorner {
            position: orig(&pos[i]),
            level: level[i],
            index: i,
            parent: parent[i],
            children: children[i].clone(),
            covers: cov,
            window_lo: lo,
            rank: pos[i],
        });
    }
    corners
}

// ---------------------------------------------------------------------------
// dominance lists

/// A record re-keyed for a batched structure; `key` replaces the
/// coordinates and `item` travels along.
#[derive(Clone, Debug)]
struct Keyed<R> {
    key: [i64; 3],
    item: R,
}

impl<R: Spatial> Spatial for Keyed<R> {
    fn coords(&self) -> [i64; 3] {
        self.key
    }
    fn ident(&self) -> u64 {
        self.item.ident()
    }
}

fn dominates_at<R: Spatial>(p: &R, c: &[i64; 3]) -> bool {
    let pc = p.coords();
    pc[0] >= c[0] && pc[1] >= c[1] && pc[2] >= c[2]
}

/// Concatenated list records: whole blocks in `run`, the tail in `pending`.
struct ListWriter<R> {
    run: Run,
    pending: Vec<R>,
}

impl<R: Spatial> ListWriter<R> {
    fn len(&self, b: usize) -> usize {
        self.run.blocks.len() * b + self.pending.len()
    }

    fn push(&mut self, store: &mut BlockStore<R>, rec: R) -> Result<()> {
        self.pending.push(rec);
        if self.pending.len() == store.block_capacity() {
            let a = store.alloc();
            store.write_block(a, std::mem::take(&mut self.pending))?;
            self.run.blocks.push(a);
            self.run.len += store.block_capacity();
        }
        Ok(())
    }

    fn range(&self, store: &BlockStore<R>, lo: usize, hi: usize) -> Result<Vec<R>> {
        read_range(store, &self.run, &self.pending, lo, hi)
    }
}

/// Records `[lo, hi)` of a concatenated list; each touched stored block
/// costs one read.
fn read_range<R: Spatial>(store: &BlockStore<R>, run: &Run, pending: &[R], lo: usize, hi: usize) -> Result<Vec<R>> {
    let b = store.block_capacity();
    let mut out = Vec::with_capacity(hi.saturating_sub(lo));
    if lo >= hi {
        return Ok(out);
    }
    for blk in lo / b..=(hi - 1) / b {
        let start = blk * b;
        let (from, to) = (lo.max(start) - start, hi.min(start + b) - start);
        if blk < run.blocks.len() {
            store.read_with(run.blocks[blk], |recs| out.extend_from_slice(&recs[from..to]))?;
        } else {
            out.extend_from_slice(&pending[from..to]);
        }
    }
    Ok(out)
}

impl<R: Spatial> TApproxBoundary<R> {
    fn orig(&self, axis: usize, r: usize) -> i64 {
        rank_to_coord(&self.axis_vals[axis], r)
    }

    /// Interval of points with rank in `[lo, hi]` on `axis`; `None` if empty.
    fn rank_interval(&self, axis: usize, lo: usize, hi: Option<usize>) -> Option<Interval> {
        let lo_v = (lo > 1).then(|| self.orig(axis, lo));
        let hi_v = match hi {
            None => None,
            Some(h) if h < lo || h == 0 => return None,
            Some(h) if h >= self.len => None,
            Some(h) => Some(self.axis_vals[axis][h - 1]),
        };
        Some(Interval { lo: lo_v, hi: hi_v })
    }

    /// Boxes covering the points that dominate corner `i` but no corner
    /// processed before it.
    fn fresh_boxes(&self, i: usize) -> Vec<QueryBox> {
        let c = self.corners[i].rank;
        let joins: Vec<(usize, usize)> = self.corners[..i]
            .iter()
            .map(|d| (d.rank[0].max(c[0]), d.rank[1].max(c[1])))
            .collect();
        let mut stair: Vec<(usize, usize)> = joins.clone();
        stair.sort_unstable();
        stair.dedup();
        let keep: Vec<bool> = stair
            .iter()
            .map(|p| !stair.iter().any(|q| q != p && q.0 <= p.0 && q.1 <= p.1))
            .collect();
        let stair: Vec<(usize, usize)> = stair.into_iter().zip(keep).filter_map(|(p, k)| k.then_some(p)).collect();

        let z = self.rank_interval(2, c[2], None);
        let mut out = Vec::new();
        let mut push = |xs: Option<Interval>, ys: Option<Interval>| {
            if let (Some(x), Some(y), Some(z)) = (xs, ys, z) {
                out.push(QueryBox::new(x, y, z));
            }
        };
        if stair.is_empty() {
            push(self.rank_interval(0, c[0], None), self.rank_interval(1, c[1], None));
            return out;
        }
        if stair[0].0 > c[0] {
            push(self.rank_interval(0, c[0], Some(stair[0].0 - 1)), self.rank_interval(1, c[1], None));
        }
        for (k, e) in stair.iter().enumerate() {
            if e.1 > c[1] {
                let x_hi = stair.get(k + 1).map(|n| n.0 - 1);
                push(self.rank_interval(0, e.0, x_hi), self.rank_interval(1, c[1], Some(e.1 - 1)));
            }
        }
        out
    }
}

/// Fill `Dom(c)` for every inward corner.
///
/// Corners are processed by index. A point dominating `c` enters `Dom(c)`
/// iff no list of a corner in `covers(c)` holds it. Fresh points come from
/// staircase boxes on a batched structure over the set. Listed points whose
/// lists all precede `window_lo(c)` on lower levels come from a batched
/// structure keyed `(x, last list index, z)`, rebuilt after each level; the
/// rest are read from the lists between the window start and `c`.
pub fn build_dominance_lists<R: Spatial>(
    store: &mut BlockStore<R>,
    bd: &mut TApproxBoundary<R>,
    points: &[R],
) -> Result<()> {
    if bd.lists.is_some() {
        return Err(Error::State("dominance lists already built".into()));
    }
    if points.len() != bd.len {
        return Err(Error::State(format!(
            "boundary was built over {} points, got {}",
            bd.len,
            points.len()
        )));
    }
    let b = store.block_capacity();
    let m = bd.corners.len();
    let mut lists = ListWriter { run: Run::default(), pending: Vec::new() };
    let mut offsets = vec![0usize];
    if m == 0 {
        bd.lists = Some(lists.run);
        bd.offsets = offsets;
        bd.axis_vals = Default::default();
        return Ok(());
    }
    let x = build_batchset(store, points, DEFAULT_EXPONENT)?;
    let mut vstore: BlockStore<Keyed<R>> = store.sibling();
    let mut vmin = None;
    // id -> (last list index, point) over finished levels
    let mut last: BTreeMap<u64, (usize, R)> = BTreeMap::new();
    // id -> indices of every list holding it
    let mut member: HashMap<u64, Vec<usize>> = HashMap::new();

    let mut gs = 0;
    while gs < m {
        let level = bd.corners[gs].level;
        let ge = (gs..m).find(|&i| bd.corners[i].level != level).unwrap_or(m);

        let mut boxes = Vec::new();
        let mut owner = Vec::new();
        for i in gs..ge {
            for q in bd.fresh_boxes(i) {
                boxes.push(q);
                owner.push(i);
            }
        }
        let fresh = if boxes.is_empty() { Vec::new() } else { batch_query_all(store, &x, &boxes)? };

        let mut earlier: Vec<Vec<Keyed<R>>> = vec![Vec::new(); ge - gs];
        if let Some(v) = &vmin {
            let mut qs = Vec::new();
            let mut who = Vec::new();
            for i in gs..ge {
                let c = &bd.corners[i];
                if c.window_lo > 0 {
                    qs.push(QueryBox::new(
                        Interval::at_least(c.position[0]),
                        Interval::closed(0, c.window_lo as i64 - 1),
                        Interval::at_least(c.position[2]),
                    ));
                    who.push(i - gs);
                }
            }
            if !qs.is_empty() {
                for (k, res) in batch_query_all(&mut vstore, v, &qs)?.into_iter().enumerate() {
                    earlier[who[k]] = res;
                }
            }
        }

        let mut fresh_by_owner: Vec<Vec<R>> = vec![Vec::new(); ge - gs];
        for (k, res) in fresh.into_iter().enumerate() {
            fresh_by_owner[owner[k] - gs].extend(res);
        }
        for i in gs..ge {
            let c = bd.corners[i].clone();
            let lo = c.window_lo;
            let withheld = |id: u64, member: &HashMap<u64, Vec<usize>>| {
                member.get(&id).is_some_and(|ls| ls.iter().any(|l| c.covers.binary_search(l).is_ok()))
            };
            let mut dom: BTreeMap<u64, R> = BTreeMap::new();
            for p in std::mem::take(&mut fresh_by_owner[i - gs]) {
                dom.insert(p.ident(), p);
            }
            // every list of these points precedes the window on lower levels
            for kp in std::mem::take(&mut earlier[i - gs]) {
                let id = kp.item.ident();
                if dominates_at(&kp.item, &c.position) && !withheld(id, &member) {
                    dom.insert(id, kp.item);
                }
            }
            // points whose latest list is in the window or on this level
            for p in lists.range(store, offsets[lo.min(gs)], offsets[i])? {
                let id = p.ident();
                if dominates_at(&p, &c.position) && !withheld(id, &member) {
                    dom.insert(id, p);
                }
            }
            for (id, p) in dom {
                member.entry(id).or_default().push(i);
                lists.push(store, p)?;
            }
            offsets.push(lists.len(b));
        }

        // fold this level into the (id -> last index) map and rebuild V^min
        let level_points = lists.range(store, offsets[gs], offsets[ge])?;
        for p in level_points {
            let id = p.ident();
            let k = *member[&id].last().expect("listed point has a list");
            last.insert(id, (k, p));
        }
        let map_blocks = last.len().div_ceil(b) as u64;
        store.charge_reads(map_blocks);
        store.charge_writes(map_blocks);
        if let Some(v) = vmin.take() {
            let v: crate::batch_engine::BatchSet = v;
            v.destroy(&mut vstore)?;
        }
        let recs: Vec<Keyed<R>> = last
            .values()
            .map(|(k, p)| {
                let pc = p.coords();
                Keyed { key: [pc[0], *k as i64, pc[2]], item: p.clone() }
            })
            .collect();
        vmin = Some(build_batchset(&mut vstore, &recs, DEFAULT_EXPONENT)?);
        gs = ge;
    }
    if let Some(v) = vmin {
        v.destroy(&mut vstore)?;
    }
    x.destroy(store)?;
    if !lists.pending.is_empty() {
        let a = store.alloc();
        lists.run.len += lists.pending.len();
        store.write_block(a, std::mem::take(&mut lists.pending))?;
        lists.run.blocks.push(a);
    }
    bd.lists = Some(lists.run);
    bd.offsets = offsets;
    bd.axis_vals = Default::default();
    Ok(())
}

// ---------------------------------------------------------------------------
// queries and audits

/// Report every point dominating `q`, or [`Located::BelowBoundary`] when
/// `q` dominates no inward corner. A corner's report reads its own list and
/// the lists of its cover set; among dominated corners the one with the
/// shortest report is used.
pub fn locate_and_report<R: Spatial>(
    store: &BlockStore<R>,
    bd: &TApproxBoundary<R>,
    q: [i64; 3],
) -> Result<Located<R>> {
    let run = bd.lists.as_ref().ok_or_else(|| Error::State("dominance lists not built".into()))?;
    let mut best: Option<(usize, usize)> = None;
    for &addr in &bd.locator_run.blocks {
        bd.locator.read_with(addr, |recs| {
            for r in recs {
                if r[0] <= q[0] && r[1] <= q[1] && r[2] <= q[2] {
                    let i = r[3] as usize;
                    let w = bd.report_len(i);
                    if best.map_or(true, |(_, bw)| w < bw) {
                        best = Some((i, w));
                    }
                }
            }
        })?;
    }
    let Some((i, _)) = best else {
        return Ok(Located::BelowBoundary);
    };
    let mut out: Vec<R> = Vec::new();
    for (a, b) in bd.report_runs(i) {
        let recs = read_range(store, run, &[], bd.offsets[a], bd.offsets[b])?;
        out.extend(recs.into_iter().filter(|p| dominates_at(p, &q)));
    }
    out.sort_unstable_by_key(|p| p.ident());
    out.dedup_by_key(|p| p.ident());
    Ok(Located::Found(out))
}

impl<R: Spatial> TApproxBoundary<R> {
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn ridges(&self) -> &[Ridge] {
        &self.ridges
    }

    pub fn corners(&self) -> &[InwardCorner] {
        &self.corners
    }

    pub fn lists_built(&self) -> bool {
        self.lists.is_some()
    }

    /// Records read when reporting through corner `i`.
    pub fn report_len(&self, i: usize) -> usize {
        self.report_runs(i).map(|(a, b)| self.offsets[b] - self.offsets[a]).sum()
    }

    /// Maximal index ranges `[a, b)` of `covers(i) ∪ {i}`.
    fn report_runs(&self, i: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cov = &self.corners[i].covers;
        let mut runs: Vec<(usize, usize)> = Vec::new();
        for &k in cov.iter().chain(std::iter::once(&i)) {
            match runs.last_mut() {
                Some(r) if r.1 == k => r.1 = k + 1,
                _ => runs.push((k, k + 1)),
            }
        }
        runs.into_iter()
    }

    /// Uncounted copy of `Dom(corners[i])`.
    pub fn dom_list(&self, store: &BlockStore<R>, i: usize) -> Vec<R> {
        let Some(run) = &self.lists else { return Vec::new() };
        let all = store.peek_run(run);
        all[self.offsets[i]..self.offsets[i + 1]].to_vec()
    }

    /// Some inward corner dominated by `q`, without I/O.
    pub fn dominated_corner(&self, q: [i64; 3]) -> Option<usize> {
        self.corners
            .iter()
            .find(|c| c.position[0] <= q[0] && c.position[1] <= q[1] && c.position[2] <= q[2])
            .map(|c| c.index)
    }

    /// Whether `q` lies strictly inside the region enclosed by the ridges,
    /// decided from the staircases alone.
    pub fn inside_staircase(&self, q: [i64; 3]) -> bool {
        self.ridges
            .iter()
            .any(|r| q[2] < r.z && r.outer.iter().any(|&(ox, oy)| q[0] < ox && q[1] < oy))
    }

    /// Blocks held by the lists and the locator.
    pub fn blocks(&self) -> usize {
        self.lists.as_ref().map_or(0, |r| r.blocks.len()) + self.locator_run.blocks.len()
    }

    pub fn destroy(mut self, store: &mut BlockStore<R>) -> Result<()> {
        if let Some(mut run) = self.lists.take() {
            store.free_run(&mut run)?;
        }
        self.locator.free_run(&mut self.locator_run)
    }

    /// Geometry as CSV rows `ridge,kind,x,y,z`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["ridge", "kind", "x", "y", "z"]).map_err(csv_err)?;
        for r in &self.ridges {
            for (kind, pts) in [("outer", &r.outer), ("inner", &r.inner)] {
                for &(x, y) in pts {
                    w.serialize((r.index, kind, x, y, r.z)).map_err(csv_err)?;
                }
            }
        }
        for c in &self.corners {
            w.serialize((c.level, "inward", c.position[0], c.position[1], c.position[2])).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Parse(e.to_string()))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Parse(e.to_string())
}
