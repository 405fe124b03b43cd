//! Priority search tree for (2,1,2)-sided queries over small integer z.
//!
//! A weight-balanced tree over x with fan-out `a = max(2, round(B^f))`
//! and leaf parameter `B·a`. Points carry a slot `z ∈ 1..=Z`. Every node
//! `v` holds per slot the (at most `B`) highest points of its subtree not
//! held by an ancestor; leaves hold everything left over. Per node:
//!
//! * `E_v` answers queries on the node's own points,
//! * `D_v` holds the children's points with x replaced by child index,
//! * `D'_v` holds, for every child slot holding exactly `B` points, that
//!   slot's lowest point, again keyed by child index.
//!
//! A query reports from `E_v` along the two boundary paths, from `D_v` for
//! the children strictly between them, and descends below a child only if
//! `D'_v` shows one of its slots lies wholly inside the query.

use std::collections::HashMap;

use crate::block_io::BlockStore;
use crate::error::{Error, Result};
use crate::geom::{Axis, AxisKey, Interval, Point3, QueryBox};
use crate::sided_small::{sided_cap, ss_build_unindexed, ss_insert, ss_query, ss_remove, Shape, SidedSmallSet};

pub const DEFAULT_FANOUT_EXP: f64 = 1.0 / 6.0;

const SHAPE: [u8; 3] = [2, 1, 2];

/// Fan-out `max(2, round(B^f))`.
pub fn fanout(b: usize, f: f64) -> usize {
    ((b as f64).powf(f).round() as usize).max(2)
}

/// Tree parameters derived from the block size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PstParams {
    pub b: usize,
    /// Branching parameter `a`.
    pub fanout: usize,
    /// Leaf parameter `k`; leaves hold fewer than `2k` x-values.
    pub leaf: usize,
    /// Number of z slots `Z`.
    pub slots: usize,
}

impl PstParams {
    pub fn new(b: usize, f: f64, slots: usize) -> Result<Self> {
        if !(0.0..=DEFAULT_FANOUT_EXP + 1e-12).contains(&f) {
            return Err(Error::Parameter(format!("fan-out exponent {f} outside [0, 1/6]")));
        }
        if slots == 0 {
            return Err(Error::Parameter("z-universe must be nonempty".into()));
        }
        let a = fanout(b, f);
        let p = PstParams { b, fanout: a, leaf: b * a, slots };
        let cap = sided_cap(b, Shape::new(SHAPE));
        if p.max_d_size() > cap {
            return Err(Error::Parameter(format!(
                "{slots} slots at B={b} allow D-sets of {} points, over the cap {cap}",
                p.max_d_size()
            )));
        }
        Ok(p)
    }

    /// Largest `D_v`: at most `4a` children, each holding `Z·B` points
    /// (internal) or fewer than `2k` points (leaf).
    pub fn max_d_size(&self) -> usize {
        4 * self.fanout * (self.slots * self.b).max(2 * self.leaf)
    }

    /// Most slots accepted at block size `b`.
    pub fn max_slots(b: usize, f: f64) -> usize {
        let a = fanout(b, f);
        sided_cap(b, Shape::new(SHAPE)) / (4 * a * b)
    }

    /// Target weight `k·a^h` of a level-`h` node.
    pub fn target(&self, level: usize) -> usize {
        self.leaf.saturating_mul(self.fanout.saturating_pow(level as u32))
    }
}

/// `(y, id)`: strict order used for the per-slot heap.
#[inline]
fn ykey(p: &Point3) -> (i64, u64) {
    (p.y, p.id)
}

struct PNode {
    level: usize,
    /// Inclusive upper x-key of the node's range; the lower end is the
    /// previous sibling's `hi` (exclusive).
    hi: AxisKey,
    parent: Option<usize>,
    children: Vec<usize>,
    /// x-values in the subtree, dead ones included.
    weight: usize,
    /// Leaves only: x-values, dead ones included.
    vals: Vec<AxisKey>,
    /// `S_v[j]`, slot `j + 1`.
    slots: Vec<Vec<Point3>>,
    /// Per slot, the point currently recorded in the parent's `D'`.
    wit: Vec<Option<Point3>>,
    e: Option<SidedSmallSet>,
    d: Option<SidedSmallSet>,
    dp: Option<SidedSmallSet>,
}

impl PNode {
    fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }

    fn own_points(&self) -> impl Iterator<Item = &Point3> {
        self.slots.iter().flatten()
    }
}

/// Per-query instrumentation.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct QueryTrace {
    /// Nodes on the two boundary paths.
    pub path_nodes: usize,
    /// Children strictly between the paths, reported through `D_v`.
    pub offpath_roots: usize,
    /// Off-path nodes whose children were searched.
    pub expanded: usize,
    /// Off-path nodes whose points were reported, roots included.
    pub offpath_visited: usize,
    /// Expanded nodes with no slot holding exactly `B` query points.
    pub fact1_violations: usize,
}

/// Update and rebuild counters.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PstStats {
    pub splits: usize,
    pub global_rebuilds: usize,
    /// Points pushed down one node by insertions.
    pub displacements: usize,
    /// Points pulled up one node by deletions.
    pub promotions: usize,
}

pub struct PSTree {
    params: PstParams,
    nodes: Vec<PNode>,
    root: usize,
    /// Id map of standalone trees. Trees owned by another structure leave
    /// it out and are updated through [`pst_remove`] with the stored point.
    index: Option<HashMap<u64, Point3>>,
    len: usize,
    dead: usize,
    stats: PstStats,
}

impl std::fmt::Debug for PSTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PSTree")
            .field("params", &self.params)
            .field("len", &self.len)
            .field("nodes", &self.nodes.len())
            .field("height", &self.height())
            .finish()
    }
}

/// Record stored in a parent's `D` or `D'`: x replaced by child index.
fn indexed(p: &Point3, child: usize) -> Point3 {
    Point3::new(child as i64, p.y, p.z, p.id)
}

fn slot_box(x: Interval, c: Option<i64>, z: Interval) -> QueryBox {
    QueryBox::new(x, Interval { lo: c, hi: None }, z)
}

fn empty_node(level: usize, hi: AxisKey, slots: usize) -> PNode {
    PNode {
        level,
        hi,
        parent: None,
        children: Vec::new(),
        weight: 0,
        vals: Vec::new(),
        slots: vec![Vec::new(); slots],
        wit: vec![None; slots],
        e: None,
        d: None,
        dp: None,
    }
}

/// Split `n` items into `g` consecutive groups of near-equal size.
pub(crate) fn even_groups(n: usize, g: usize) -> Vec<std::ops::Range<usize>> {
    let (q, r) = (n / g, n % g);
    let mut out = Vec::with_capacity(g);
    let mut at = 0;
    for i in 0..g {
        let len = q + usize::from(i < r);
        out.push(at..at + len);
        at += len;
    }
    out
}

/// Weight-balanced topology over sorted x-keys, built bottom-up with
/// near-equal weights per level. Returns the arena and the root.
fn topology(params: &PstParams, keys: &[AxisKey]) -> (Vec<PNode>, usize) {
    let z = params.slots;
    let mut nodes = Vec::new();
    let leaves = ((keys.len() as f64 / params.leaf as f64).round() as usize).max(1);
    let mut level_ids = Vec::with_capacity(leaves);
    for (i, r) in even_groups(keys.len(), leaves).into_iter().enumerate() {
        let hi = if i + 1 == leaves { AxisKey::MAX } else { keys[r.end - 1] };
        let mut n = empty_node(0, hi, z);
        n.vals = keys[r].to_vec();
        n.weight = n.vals.len();
        nodes.push(n);
        level_ids.push(nodes.len() - 1);
    }
    let mut level = 0;
    while level_ids.len() > 1 {
        level += 1;
        let g = ((level_ids.len() as f64 / params.fanout as f64).round() as usize).max(1);
        let mut next = Vec::with_capacity(g);
        for r in even_groups(level_ids.len(), g) {
            let kids = level_ids[r].to_vec();
            let hi = nodes[*kids.last().expect("group nonempty")].hi;
            let id = nodes.len();
            let mut n = empty_node(level, hi, z);
            n.weight = kids.iter().map(|&c| nodes[c].weight).sum();
            for &c in &kids {
                nodes[c].parent = Some(id);
            }
            n.children = kids;
            nodes.push(n);
            next.push(id);
        }
        level_ids = next;
    }
    let root = level_ids[0];
    (nodes, root)
}

impl PSTree {
    pub fn params(&self) -> PstParams {
        self.params
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn stats(&self) -> &PstStats {
        &self.stats
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    /// Stored record with this id. Scans the slots when unindexed.
    pub fn get(&self, id: u64) -> Option<Point3> {
        match &self.index {
            Some(m) => m.get(&id).copied(),
            None => self.nodes.iter().flat_map(PNode::own_points).find(|p| p.id == id).copied(),
        }
    }

    pub fn contains(&self, id: u64) -> bool {
        self.get(id).is_some()
    }

    /// Live points in unspecified order.
    pub fn points(&self) -> Vec<Point3> {
        self.nodes.iter().flat_map(PNode::own_points).copied().collect()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Levels on a root-to-leaf path.
    pub fn height(&self) -> usize {
        self.nodes[self.root].level + 1
    }

    /// Dead x-values awaiting the next global rebuild.
    pub fn dead(&self) -> usize {
        self.dead
    }

    /// Blocks held by all secondary structures.
    pub fn blocks(&self) -> usize {
        self.nodes
            .iter()
            .flat_map(|n| [&n.e, &n.d, &n.dp])
            .filter_map(Option::as_ref)
            .map(SidedSmallSet::blocks)
            .sum()
    }

    /// Points per node and slot at the root, for inspection.
    pub fn root_slot_sizes(&self) -> Vec<usize> {
        self.nodes[self.root].slots.iter().map(Vec::len).collect()
    }

    /// `(level, per-slot sizes)` along the path to the leaf for `x`.
    pub fn slot_sizes_along(&self, x: AxisKey) -> Vec<(usize, Vec<usize>)> {
        let mut v = self.root;
        let mut out = Vec::new();
        loop {
            let n = &self.nodes[v];
            out.push((n.level, n.slots.iter().map(Vec::len).collect()));
            if n.is_leaf() {
                return out;
            }
            v = n.children[self.child_index(v, x)];
        }
    }

    fn child_index(&self, v: usize, key: AxisKey) -> usize {
        let ch = &self.nodes[v].children;
        ch.partition_point(|&c| self.nodes[c].hi < key).min(ch.len() - 1)
    }

    fn index_in_parent(&self, w: usize) -> Option<(usize, usize)> {
        let par = self.nodes[w].parent?;
        let i = self.nodes[par].children.iter().position(|&c| c == w).expect("child listed in parent");
        Some((par, i))
    }

    fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut k = 0;
        while k < out.len() {
            out.extend(self.nodes[out[k]].children.iter().copied());
            k += 1;
        }
        out
    }

    /// Distribute `pts` (the subtree's points not held above `v`) by the
    /// pre-order filling rule.
    fn assign(&mut self, v: usize, pts: Vec<Point3>) {
        let b = self.params.b;
        if self.nodes[v].is_leaf() {
            for p in pts {
                self.nodes[v].slots[(p.z - 1) as usize].push(p);
            }
            return;
        }
        let mut by_slot: Vec<Vec<Point3>> = vec![Vec::new(); self.params.slots];
        for p in pts {
            by_slot[(p.z - 1) as usize].push(p);
        }
        let nk = self.nodes[v].children.len();
        let mut down: Vec<Vec<Point3>> = vec![Vec::new(); nk];
        for (j, mut s) in by_slot.into_iter().enumerate() {
            s.sort_unstable_by_key(|p| std::cmp::Reverse(ykey(p)));
            let rest = if s.len() > b { s.split_off(b) } else { Vec::new() };
            s.shrink_to_fit();
            self.nodes[v].slots[j] = s;
            for p in rest {
                down[self.child_index(v, p.key(Axis::X))].push(p);
            }
        }
        let kids = self.nodes[v].children.clone();
        for (c, pts) in kids.into_iter().zip(down) {
            self.assign(c, pts);
        }
    }

    fn witness(&self, w: usize, j: usize) -> Option<Point3> {
        let n = &self.nodes[w];
        if n.is_leaf() || n.parent.is_none() || n.slots[j].len() != self.params.b {
            return None;
        }
        n.slots[j].iter().min_by_key(|p| ykey(p)).copied()
    }

    fn build_e(&mut self, store: &mut BlockStore, v: usize) -> Result<()> {
        let own: Vec<Point3> = self.nodes[v].slots.iter().flatten().copied().collect();
        self.nodes[v].e = Some(ss_build_unindexed(store, &own, Shape::new(SHAPE))?);
        Ok(())
    }

    /// Build `D_v` and `D'_v`, refreshing the children's witnesses.
    fn build_d(&mut self, store: &mut BlockStore, v: usize) -> Result<()> {
        if self.nodes[v].is_leaf() {
            return Ok(());
        }
        let kids = self.nodes[v].children.clone();
        let mut dv = Vec::new();
        let mut dpv = Vec::new();
        for (i, &c) in kids.iter().enumerate() {
            dv.extend(self.nodes[c].slots.iter().flatten().map(|p| indexed(p, i)));
            let wits: Vec<Option<Point3>> = (0..self.params.slots).map(|j| self.witness(c, j)).collect();
            dpv.extend(wits.iter().flatten().map(|p| indexed(p, i)));
            self.nodes[c].wit = wits;
        }
        self.nodes[v].d = Some(ss_build_unindexed(store, &dv, Shape::new(SHAPE))?);
        self.nodes[v].dp = Some(ss_build_unindexed(store, &dpv, Shape::new(SHAPE))?);
        Ok(())
    }

    fn destroy_secondary(&mut self, store: &mut BlockStore, v: usize, with_e: bool) -> Result<()> {
        let n = &mut self.nodes[v];
        let taken = [if with_e { n.e.take() } else { None }, n.d.take(), n.dp.take()];
        for s in taken.into_iter().flatten() {
            s.destroy(store)?;
        }
        Ok(())
    }

    pub fn destroy(mut self, store: &mut BlockStore) -> Result<()> {
        for v in 0..self.nodes.len() {
            self.destroy_secondary(store, v, true)?;
        }
        Ok(())
    }
}

/// Build over points whose `z` is a slot in `1..=slots`.
pub fn pst_build(store: &mut BlockStore, points: &[Point3], slots: usize, f: f64) -> Result<PSTree> {
    let params = PstParams::new(store.block_capacity(), f, slots)?;
    build_with(store, points, params, true)
}

/// Build without an id map; deletions go through [`pst_remove`].
pub fn pst_build_unindexed(store: &mut BlockStore, points: &[Point3], slots: usize, f: f64) -> Result<PSTree> {
    let params = PstParams::new(store.block_capacity(), f, slots)?;
    build_with(store, points, params, false)
}

fn build_with(store: &mut BlockStore, points: &[Point3], params: PstParams, indexed: bool) -> Result<PSTree> {
    let slots = params.slots;
    if let Some(p) = points.iter().find(|p| p.z < 1 || p.z > slots as i64) {
        return Err(Error::Parameter(format!("slot {} outside 1..={slots}", p.z)));
    }
    let mut ids: Vec<u64> = points.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0]));
    }
    drop(ids);
    let index = indexed.then(|| points.iter().map(|p| (p.id, *p)).collect());
    let mut keys: Vec<AxisKey> = points.iter().map(|p| p.key(Axis::X)).collect();
    keys.sort_unstable();
    let (nodes, root) = topology(&params, &keys);
    let mut t = PSTree {
        params,
        nodes,
        root,
        index,
        len: points.len(),
        dead: 0,
        stats: PstStats::default(),
    };
    t.assign(root, points.to_vec());
    for v in 0..t.nodes.len() {
        t.build_e(store, v)?;
        t.build_d(store, v)?;
    }
    Ok(t)
}

/// Validated query in tree terms.
struct Q {
    ka: AxisKey,
    kb: AxisKey,
    c: Option<i64>,
    /// Slot range, 1-based inclusive.
    d: i64,
    e: i64,
    bx: QueryBox,
}

impl Q {
    fn new(q: &QueryBox, slots: usize) -> Result<Option<Q>> {
        if q.y.hi.is_some() {
            return Err(Error::Parameter("three-sided queries are unbounded above in y".into()));
        }
        let d = q.z.lo.unwrap_or(1).max(1);
        let e = q.z.hi.unwrap_or(slots as i64).min(slots as i64);
        let (a, b) = (q.x.lo_or_min(), q.x.hi_or_max());
        if q.is_empty() || d > e || a > b {
            return Ok(None);
        }
        let bx = QueryBox::new(q.x, q.y, Interval::closed(d, e));
        Ok(Some(Q { ka: AxisKey(a, 0), kb: AxisKey(b, u64::MAX), c: q.y.lo, d, e, bx }))
    }

    fn children_box(&self, lo: usize, hi: usize) -> QueryBox {
        slot_box(Interval::closed(lo as i64, hi as i64), self.c, Interval::closed(self.d, self.e))
    }

    fn in_q(&self, p: &Point3) -> bool {
        self.c.map_or(true, |c| p.y >= c)
    }
}

struct Walk<'a> {
    t: &'a PSTree,
    store: &'a BlockStore,
    q: Q,
    out: Vec<Point3>,
    trace: QueryTrace,
}

impl Walk<'_> {
    fn path_node(&mut self, v: usize) -> Result<()> {
        self.store.charge_reads(1);
        self.trace.path_nodes += 1;
        let e = self.t.nodes[v].e.as_ref().expect("E built");
        self.out.extend(ss_query(self.store, e, &self.q.bx)?);
        Ok(())
    }

    /// Report children `lo..=hi` of `v` and descend where `D'_v` says so.
    fn children(&mut self, v: usize, lo: usize, hi: usize, offpath_parent: bool) -> Result<()> {
        if lo > hi {
            return Ok(());
        }
        let n = &self.t.nodes[v];
        let bx = self.q.children_box(lo, hi);
        let found = ss_query(self.store, n.d.as_ref().expect("D built"), &bx)?;
        self.out.extend(found.iter().map(|r| self.t.original(n.children[r.x as usize], r)));
        let wit = ss_query(self.store, n.dp.as_ref().expect("D' built"), &bx)?;
        let mut expand: Vec<usize> = wit.iter().map(|p| p.x as usize).collect();
        expand.sort_unstable();
        expand.dedup();
        self.trace.offpath_visited += hi - lo + 1;
        if !offpath_parent {
            self.trace.offpath_roots += hi - lo + 1;
        } else {
            self.check_fact1(v, lo, hi);
        }
        for i in expand {
            let w = n.children[i];
            self.trace.expanded += 1;
            let last = self.t.nodes[w].children.len().saturating_sub(1);
            if !self.t.nodes[w].is_leaf() {
                self.children(w, 0, last, true)?;
            }
        }
        Ok(())
    }

    /// `v` is off-path and its children `lo..=hi` were visited: every slot
    /// in which a visited child has query points must hold exactly `B`
    /// query points at `v`.
    fn check_fact1(&mut self, v: usize, lo: usize, hi: usize) {
        let b = self.t.params.b;
        let nv = &self.t.nodes[v];
        let full: Vec<bool> = (self.q.d..=self.q.e)
            .map(|j| nv.slots[(j - 1) as usize].iter().filter(|p| self.q.in_q(p)).count() == b)
            .collect();
        if !full.iter().any(|&f| f) {
            self.trace.fact1_violations += 1;
            return;
        }
        for &c in &nv.children[lo..=hi] {
            for j in self.q.d..=self.q.e {
                let hit = self.t.nodes[c].slots[(j - 1) as usize].iter().any(|p| self.q.in_q(p));
                if hit && !full[(j - self.q.d) as usize] {
                    self.trace.fact1_violations += 1;
                }
            }
        }
    }

    fn run(&mut self) -> Result<()> {
        let t = self.t;
        let mut v = t.root;
        loop {
            self.path_node(v)?;
            if t.nodes[v].is_leaf() {
                return Ok(());
            }
            let ia = t.child_index(v, self.q.ka);
            let ib = t.child_index(v, self.q.kb);
            if ia == ib {
                v = t.nodes[v].children[ia];
                continue;
            }
            self.children(v, ia + 1, ib - 1, false)?;
            let (va, vb) = (t.nodes[v].children[ia], t.nodes[v].children[ib]);
            self.side(va, true)?;
            return self.side(vb, false);
        }
    }

    /// Follow one boundary path below the split node.
    fn side(&mut self, mut v: usize, left: bool) -> Result<()> {
        let t = self.t;
        loop {
            self.path_node(v)?;
            if t.nodes[v].is_leaf() {
                return Ok(());
            }
            let last = t.nodes[v].children.len() - 1;
            if left {
                let i = t.child_index(v, self.q.ka);
                if i < last {
                    self.children(v, i + 1, last, false)?;
                }
                v = t.nodes[v].children[i];
            } else {
                let i = t.child_index(v, self.q.kb);
                if i > 0 {
                    self.children(v, 0, i - 1, false)?;
                }
                v = t.nodes[v].children[i];
            }
        }
    }
}

/// Points inside `[a,b] × [c,∞) × [d,e]`, sorted by id, with the walk's
/// instrumentation.
pub fn pst_query_traced(store: &BlockStore, t: &PSTree, q: &QueryBox) -> Result<(Vec<Point3>, QueryTrace)> {
    let Some(q) = Q::new(q, t.params.slots)? else {
        return Ok((Vec::new(), QueryTrace::default()));
    };
    let mut w = Walk { t, store, q, out: Vec::new(), trace: QueryTrace::default() };
    w.run()?;
    let mut out = w.out;
    out.sort_unstable_by_key(|p| p.id);
    Ok((out, w.trace))
}

pub fn pst_query(store: &BlockStore, t: &PSTree, q: &QueryBox) -> Result<Vec<Point3>> {
    pst_query_traced(store, t, q).map(|(v, _)| v)
}

impl PSTree {
    /// The point behind a `D` record of child `w`, read from its slot.
    fn original(&self, w: usize, r: &Point3) -> Point3 {
        *self.nodes[w].slots[(r.z - 1) as usize].iter().find(|p| p.id == r.id).expect("D record matches a child slot")
    }

    fn add_point(&mut self, store: &mut BlockStore, v: usize, p: Point3) -> Result<()> {
        let j = (p.z - 1) as usize;
        self.nodes[v].slots[j].push(p);
        ss_insert(store, self.nodes[v].e.as_mut().expect("E built"), p)?;
        if let Some((par, i)) = self.index_in_parent(v) {
            ss_insert(store, self.nodes[par].d.as_mut().expect("D built"), indexed(&p, i))?;
        }
        Ok(())
    }

    fn remove_point(&mut self, store: &mut BlockStore, v: usize, p: &Point3) -> Result<()> {
        let s = &mut self.nodes[v].slots[(p.z - 1) as usize];
        let k = s.iter().position(|r| r.id == p.id).ok_or(Error::MissingId(p.id))?;
        let p = s.swap_remove(k);
        ss_remove(store, self.nodes[v].e.as_mut().expect("E built"), &p)?;
        if let Some((par, i)) = self.index_in_parent(v) {
            ss_remove(store, self.nodes[par].d.as_mut().expect("D built"), &indexed(&p, i))?;
        }
        Ok(())
    }

    /// Bring the parent's `D'` record for slot `j` of `v` up to date.
    fn refresh_wit(&mut self, store: &mut BlockStore, v: usize, j: usize) -> Result<()> {
        let new = self.witness(v, j);
        let old = self.nodes[v].wit[j];
        if old == new {
            return Ok(());
        }
        let (par, i) = self.index_in_parent(v).expect("witnesses exist only below the root");
        let dp = self.nodes[par].dp.as_mut().expect("D' built");
        if let Some(o) = old {
            ss_remove(store, dp, &indexed(&o, i))?;
        }
        if let Some(n) = new {
            ss_insert(store, dp, indexed(&n, i))?;
        }
        self.nodes[v].wit[j] = new;
        Ok(())
    }

    /// Insert `p` at the highest node on its path where it belongs, pushing
    /// each displaced slot minimum one level down.
    fn place(&mut self, store: &mut BlockStore, mut p: Point3) -> Result<()> {
        let b = self.params.b;
        let j = (p.z - 1) as usize;
        let mut v = self.root;
        loop {
            store.charge_reads(1);
            if self.nodes[v].is_leaf() || self.nodes[v].slots[j].len() < b {
                self.add_point(store, v, p)?;
                return self.refresh_wit(store, v, j);
            }
            let m = *self.nodes[v].slots[j].iter().min_by_key(|r| ykey(r)).expect("full slot");
            if ykey(&p) > ykey(&m) {
                self.remove_point(store, v, &m)?;
                self.add_point(store, v, p)?;
                self.refresh_wit(store, v, j)?;
                self.stats.displacements += 1;
                p = m;
            }
            v = self.nodes[v].children[self.child_index(v, p.key(Axis::X))];
        }
    }

    /// Slot `j` of `v` just lost a point: pull up the highest slot-`j`
    /// point among the children, repeating below.
    fn refill(&mut self, store: &mut BlockStore, mut v: usize, j: usize) -> Result<()> {
        let b = self.params.b;
        loop {
            self.refresh_wit(store, v, j)?;
            if self.nodes[v].is_leaf() || self.nodes[v].slots[j].len() + 1 != b {
                return Ok(());
            }
            let z = Interval::closed(j as i64 + 1, j as i64 + 1);
            let bx = slot_box(Interval::OPEN, None, z);
            let cand = ss_query(store, self.nodes[v].d.as_ref().expect("D built"), &bx)?;
            let Some(top) = cand.iter().max_by_key(|r| ykey(r)) else {
                return Ok(());
            };
            let w = self.nodes[v].children[top.x as usize];
            let q = self.original(w, top);
            self.remove_point(store, w, &q)?;
            self.add_point(store, v, q)?;
            self.refresh_wit(store, v, j)?;
            self.stats.promotions += 1;
            v = w;
        }
    }
}

impl PSTree {
    /// Split an overweight non-root node in two and refill both halves.
    fn split(&mut self, store: &mut BlockStore, v: usize) -> Result<()> {
        let b = self.params.b;
        let (par, i) = self.index_in_parent(v).expect("root splits rebuild instead");
        let mut pts = Vec::new();
        for u in self.subtree(v) {
            pts.extend(self.nodes[u].own_points().copied());
            self.destroy_secondary(store, u, true)?;
            let n = &mut self.nodes[u];
            n.slots.iter_mut().for_each(Vec::clear);
            n.wit.iter_mut().for_each(|w| *w = None);
        }
        store.charge_reads(pts.len().div_ceil(b) as u64);
        self.destroy_secondary(store, par, false)?;

        let level = self.nodes[v].level;
        let v2 = self.nodes.len();
        let mut n2 = empty_node(level, self.nodes[v].hi, self.params.slots);
        n2.parent = Some(par);
        if self.nodes[v].is_leaf() {
            let mut vals = std::mem::take(&mut self.nodes[v].vals);
            let upper = vals.split_off(vals.len() / 2);
            self.nodes[v].hi = *vals.last().expect("leaf splits hold at least two values");
            self.nodes[v].weight = vals.len();
            self.nodes[v].vals = vals;
            n2.weight = upper.len();
            n2.vals = upper;
        } else {
            let mut ch = std::mem::take(&mut self.nodes[v].children);
            let total = self.nodes[v].weight;
            let mut acc = 0;
            let mut s = ch.len() - 1;
            for (k, &c) in ch.iter().enumerate() {
                acc += self.nodes[c].weight;
                if 2 * acc >= total {
                    s = k + 1;
                    break;
                }
            }
            let s = s.clamp(1, ch.len() - 1);
            let upper = ch.split_off(s);
            self.nodes[v].hi = self.nodes[*ch.last().expect("nonempty")].hi;
            self.nodes[v].weight = ch.iter().map(|&c| self.nodes[c].weight).sum();
            n2.weight = upper.iter().map(|&c| self.nodes[c].weight).sum();
            self.nodes[v].children = ch;
            for &c in &upper {
                self.nodes[c].parent = Some(v2);
            }
            n2.children = upper;
        }
        self.nodes.push(n2);
        self.nodes[par].children.insert(i + 1, v2);

        let cut = self.nodes[v].hi;
        let (lo, hi): (Vec<Point3>, Vec<Point3>) = pts.into_iter().partition(|p| p.key(Axis::X) <= cut);
        self.assign(v, lo);
        self.assign(v2, hi);
        for u in self.subtree(v).into_iter().chain(self.subtree(v2)) {
            self.build_e(store, u)?;
            self.build_d(store, u)?;
        }
        self.build_d(store, par)?;
        self.stats.splits += 1;
        Ok(())
    }

    fn rebuild(&mut self, store: &mut BlockStore) -> Result<()> {
        let b = self.params.b;
        let mut pts = self.points();
        pts.sort_unstable_by_key(|p| p.id);
        store.charge_reads(pts.len().div_ceil(b) as u64);
        for v in 0..self.nodes.len() {
            self.destroy_secondary(store, v, true)?;
        }
        let mut fresh = build_with(store, &pts, self.params, self.index.is_some())?;
        fresh.stats = std::mem::take(&mut self.stats);
        fresh.stats.global_rebuilds += 1;
        *self = fresh;
        Ok(())
    }
}

pub fn pst_insert(store: &mut BlockStore, t: &mut PSTree, p: Point3) -> Result<()> {
    if p.z < 1 || p.z > t.params.slots as i64 {
        return Err(Error::Parameter(format!("slot {} outside 1..={}", p.z, t.params.slots)));
    }
    if let Some(index) = &mut t.index {
        if index.contains_key(&p.id) {
            return Err(Error::DuplicateId(p.id));
        }
        index.insert(p.id, p);
    }
    t.len += 1;
    let key = p.key(Axis::X);
    let mut path = Vec::new();
    let mut v = t.root;
    loop {
        path.push(v);
        t.nodes[v].weight += 1;
        if t.nodes[v].is_leaf() {
            break;
        }
        v = t.nodes[v].children[t.child_index(v, key)];
    }
    // The leaf's value block is rewritten; routing reads are paid in `place`.
    let vals = &mut t.nodes[v].vals;
    let at = vals.partition_point(|k| *k < key);
    vals.insert(at, key);
    store.charge_writes(1);
    t.place(store, p)?;
    for &v in path.iter().rev() {
        if t.nodes[v].weight >= 2 * t.params.target(t.nodes[v].level) {
            if v == t.root {
                return t.rebuild(store);
            }
            t.split(store, v)?;
        }
    }
    Ok(())
}

/// Remove a point by id; needs an indexed tree. Its x-value stays in its
/// leaf as a dead value until dead values reach half of all values.
pub fn pst_delete(store: &mut BlockStore, t: &mut PSTree, id: u64) -> Result<Point3> {
    let index = t.index.as_ref().ok_or_else(|| Error::State("tree has no id index".into()))?;
    let p = *index.get(&id).ok_or(Error::MissingId(id))?;
    pst_remove(store, t, &p)?;
    Ok(p)
}

/// Remove the stored point `p`. It sits in slot `p.z` of some node on the
/// path to `p`'s leaf.
pub fn pst_remove(store: &mut BlockStore, t: &mut PSTree, p: &Point3) -> Result<()> {
    let j = p.z.checked_sub(1).filter(|&j| j >= 0 && j < t.params.slots as i64).ok_or(Error::MissingId(p.id))? as usize;
    let key = p.key(Axis::X);
    let mut v = t.root;
    let mut depth = 1;
    while !t.nodes[v].slots[j].iter().any(|r| r.id == p.id) {
        if t.nodes[v].is_leaf() {
            return Err(Error::MissingId(p.id));
        }
        v = t.nodes[v].children[t.child_index(v, key)];
        depth += 1;
    }
    store.charge_reads(depth);
    t.remove_point(store, v, p)?;
    if let Some(index) = &mut t.index {
        index.remove(&p.id);
    }
    t.len -= 1;
    t.refill(store, v, j)?;
    t.dead += 1;
    if t.dead >= t.len {
        t.rebuild(store)?;
    }
    Ok(())
}

fn ids_of<'a>(it: impl Iterator<Item = &'a Point3>) -> Vec<u64> {
    let mut v: Vec<u64> = it.map(|p| p.id).collect();
    v.sort_unstable();
    v
}

impl PSTree {
    /// Structural violations; empty when every invariant holds.
    pub fn audit(&self, store: &BlockStore) -> Vec<String> {
        let b = self.params.b;
        let a = self.params.fanout;
        let mut out = Vec::new();
        let mut seen = 0;
        let mut dead_vals = 0;
        let mut stack = vec![(self.root, AxisKey(i64::MIN, 0))];
        while let Some((v, lo)) = stack.pop() {
            let n = &self.nodes[v];
            let leaf = n.is_leaf();
            for (j, s) in n.slots.iter().enumerate() {
                if !leaf && s.len() > b {
                    out.push(format!("node {v} slot {} holds {} > B points", j + 1, s.len()));
                }
                for p in s {
                    seen += 1;
                    let k = p.key(Axis::X);
                    if k <= lo && v != self.root || k > n.hi {
                        out.push(format!("point {} outside node {v}'s x-range", p.id));
                    }
                    if p.z != j as i64 + 1 {
                        out.push(format!("point {} in slot {} has z {}", p.id, j + 1, p.z));
                    }
                    if self.index.as_ref().is_some_and(|m| m.get(&p.id) != Some(p)) {
                        out.push(format!("point {} not indexed as stored", p.id));
                    }
                }
                if let Some(par) = n.parent {
                    let ps = &self.nodes[par].slots[j];
                    if !s.is_empty() && ps.len() != b {
                        out.push(format!("node {v} slot {} nonempty under a non-full parent slot", j + 1));
                    }
                    let pmin = ps.iter().map(ykey).min();
                    if let (Some(pm), Some(cm)) = (pmin, s.iter().map(ykey).max()) {
                        if cm > pm {
                            out.push(format!("node {v} slot {} exceeds its parent's minimum", j + 1));
                        }
                    }
                }
                if n.wit[j] != self.witness(v, j) {
                    out.push(format!("node {v} slot {} witness stale", j + 1));
                }
            }
            let e = n.e.as_ref();
            match e {
                None => out.push(format!("node {v} lacks E")),
                Some(e) => {
                    if ids_of(e.points(store).iter()) != ids_of(n.own_points()) {
                        out.push(format!("node {v} E differs from its slots"));
                    }
                    out.extend(e.audit(store).into_iter().map(|m| format!("node {v} E: {m}")));
                }
            }
            if leaf {
                dead_vals += n.vals.len();
                if n.weight != n.vals.len() {
                    out.push(format!("leaf {v} weight {} != {} values", n.weight, n.vals.len()));
                }
                if n.vals.windows(2).any(|w| w[0] > w[1]) || n.vals.iter().any(|k| *k > n.hi || (*k <= lo && v != self.root)) {
                    out.push(format!("leaf {v} values unsorted or out of range"));
                }
                continue;
            }
            let w: usize = n.children.iter().map(|&c| self.nodes[c].weight).sum();
            if w != n.weight {
                out.push(format!("node {v} weight {} != children's {w}", n.weight));
            }
            if n.weight >= 2 * self.params.target(n.level) {
                out.push(format!("node {v} overweight"));
            }
            if v != self.root && (n.children.len() < (a / 4).max(1) || n.children.len() > 4 * a) {
                out.push(format!("node {v} has {} children (a = {a})", n.children.len()));
            }
            let (Some(d), Some(dp)) = (n.d.as_ref(), n.dp.as_ref()) else {
                out.push(format!("node {v} lacks D or D'"));
                continue;
            };
            let mut want_d = Vec::new();
            let mut want_dp = Vec::new();
            let mut clo = lo;
            for (i, &c) in n.children.iter().enumerate() {
                let cn = &self.nodes[c];
                if cn.parent != Some(v) || cn.level + 1 != n.level {
                    out.push(format!("child {c} of {v} has a bad parent link or level"));
                }
                want_d.extend(cn.own_points().map(|p| indexed(p, i)));
                want_dp.extend(cn.wit.iter().flatten().map(|p| indexed(p, i)));
                stack.push((c, clo));
                clo = cn.hi;
            }
            if clo != n.hi {
                out.push(format!("node {v} children end at {clo:?}, not {:?}", n.hi));
            }
            for (name, set, want) in [("D", d, want_d), ("D'", dp, want_dp)] {
                let mut have: Vec<Point3> = set.points(store);
                let mut want = want;
                have.sort_unstable_by_key(|p| p.id);
                want.sort_unstable_by_key(|p| p.id);
                if have != want {
                    out.push(format!("node {v} {name} differs from its children"));
                }
                out.extend(set.audit(store).into_iter().map(|m| format!("node {v} {name}: {m}")));
            }
        }
        if seen != self.len || self.index.as_ref().is_some_and(|m| m.len() != self.len) {
            out.push(format!("{seen} stored points, {} live", self.len));
        }
        if dead_vals != self.len + self.dead {
            out.push(format!("{dead_vals} leaf values != {} live + {} dead", self.len, self.dead));
        }
        out
    }
}
