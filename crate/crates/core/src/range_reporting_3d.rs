//! General 3D orthogonal range reporting.
//!
//! [`ZRangeTree`] answers (2,1,2)-sided queries with arbitrary z. It is a
//! multiway tree over z whose leaves hold runs of about `B` points. An
//! internal node `v` with children `c_1..c_F` keeps one [`PSTree`] `F_v`
//! over its subtree's points, each with z replaced by the index of the
//! child holding it. A z-interval splits into O(height) contiguous child
//! ranges, each answered by one `F_v` query over a slot range, plus at
//! most two leaf runs scanned directly.
//!
//! [`Full3D`] bounds the last side: a binary tree over y whose internal
//! nodes keep a `ZRangeTree` over the left subtree answering `y >= lo`
//! and one over the right subtree answering `y <= hi`.

use std::collections::HashMap;

use crate::block_io::{default_pinned_limit, BlockStore, IoSnapshot, Run};
use crate::error::{Error, Result};
use crate::ext_three_sided::{
    even_groups, fanout, pst_build_unindexed, pst_insert, pst_query_traced, pst_remove, PSTree, PstParams, QueryTrace,
};
use crate::geom::{Axis, AxisKey, Interval, Point3, QueryBox};
use crate::sided_small::Dir;

/// z fan-out: as many slots as a three-sided tree admits at this block
/// size, capped at `4a`.
pub fn z_fanout(b: usize, f: f64) -> usize {
    PstParams::max_slots(b, f).clamp(2, 4 * fanout(b, f))
}

fn face(p: &Point3, dir: Dir) -> Point3 {
    match dir {
        Dir::Up => *p,
        Dir::Down => Point3::new(p.x, -p.y, p.z, p.id),
    }
}

fn slotted(p: &Point3, dir: Dir, child: usize) -> Point3 {
    let f = face(p, dir);
    Point3::new(f.x, f.y, child as i64 + 1, p.id)
}

struct ZNode {
    /// Inclusive upper z-key; the lower end is the previous sibling's `hi`.
    hi: AxisKey,
    parent: Option<usize>,
    children: Vec<usize>,
    /// Live points in the subtree.
    size: usize,
    /// Leaves in the subtree.
    leaves: usize,
    run: Run,
    f: Option<PSTree>,
}

impl ZNode {
    fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

/// One canonical piece of a z-interval: children `lo..=hi` of a node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Piece {
    pub depth: usize,
    pub lo: usize,
    pub hi: usize,
}

/// Per-query instrumentation.
#[derive(Clone, Debug, Default)]
pub struct ZTrace {
    pub pieces: Vec<Piece>,
    /// Leaf runs scanned.
    pub fringes: usize,
    /// Whether the pieces and fringes tile the query's z-interval in order
    /// with no gap or overlap.
    pub tiled: bool,
    /// Sum of the three-sided trees' traces.
    pub pst: QueryTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ZStats {
    pub partial_rebuilds: usize,
    pub global_rebuilds: usize,
}

pub struct ZRangeTree {
    f: f64,
    fan: usize,
    dir: Dir,
    nodes: Vec<ZNode>,
    root: usize,
    /// Id map of standalone trees. Trees owned by a [`Full3D`] leave it out:
    /// the owner routes deletions with the stored point and resolves
    /// reported ids.
    index: Option<HashMap<u64, Point3>>,
    len: usize,
    built: usize,
    since: usize,
    /// Three-sided trees updated by the last insert or delete.
    touched: usize,
    stats: ZStats,
}

impl std::fmt::Debug for ZRangeTree {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ZRangeTree")
            .field("len", &self.len)
            .field("fan", &self.fan)
            .field("height", &self.height())
            .finish()
    }
}

fn new_node(hi: AxisKey) -> ZNode {
    ZNode { hi, parent: None, children: Vec::new(), size: 0, leaves: 1, run: Run::default(), f: None }
}

/// Build a z-tree over `pts`. With `dir = Down` it answers `y <= c`
/// instead of `y >= c`.
pub fn zt_build(store: &mut BlockStore, pts: &[Point3], f: f64, dir: Dir) -> Result<ZRangeTree> {
    build_tree(store, pts, f, dir, true)
}

/// Build without an id map. Deletions go through [`zt_remove`] and
/// queries through [`zt_query_resolved`].
pub fn zt_build_unindexed(store: &mut BlockStore, pts: &[Point3], f: f64, dir: Dir) -> Result<ZRangeTree> {
    build_tree(store, pts, f, dir, false)
}

fn build_tree(store: &mut BlockStore, pts: &[Point3], f: f64, dir: Dir, indexed: bool) -> Result<ZRangeTree> {
    let b = store.block_capacity();
    PstParams::new(b, f, z_fanout(b, f))?;
    let mut ids: Vec<u64> = pts.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0]));
    }
    drop(ids);
    let mut t = ZRangeTree {
        f,
        fan: z_fanout(b, f),
        dir,
        nodes: Vec::new(),
        root: 0,
        index: indexed.then(|| pts.iter().map(|p| (p.id, *p)).collect()),
        len: pts.len(),
        built: pts.len(),
        since: 0,
        touched: 0,
        stats: ZStats::default(),
    };
    let mut sorted = pts.to_vec();
    sorted.sort_unstable_by_key(|p| p.key(Axis::Z));
    t.root = t.build_shape(b, sorted.len());
    t.fill(store, t.root, sorted)?;
    Ok(t)
}

impl ZRangeTree {
    /// Allocate a balanced topology for `n` points; keys are set by `fill`.
    fn build_shape(&mut self, b: usize, n: usize) -> usize {
        let leaves = n.div_ceil(b).max(1);
        let mut level: Vec<usize> = (0..leaves)
            .map(|_| {
                self.nodes.push(new_node(AxisKey::MAX));
                self.nodes.len() - 1
            })
            .collect();
        while level.len() > 1 {
            let g = level.len().div_ceil(self.fan);
            let mut next = Vec::with_capacity(g);
            for r in even_groups(level.len(), g) {
                let kids = level[r].to_vec();
                let id = self.nodes.len();
                let mut n = new_node(AxisKey::MAX);
                n.leaves = kids.iter().map(|&c| self.nodes[c].leaves).sum();
                for &c in &kids {
                    self.nodes[c].parent = Some(id);
                }
                n.children = kids;
                self.nodes.push(n);
                next.push(id);
            }
            level = next;
        }
        level[0]
    }

    /// Spread z-sorted `pts` evenly over the leaves below `v`, set keys and
    /// sizes, and build every run and `F` in the subtree. `v`'s own `hi` is
    /// kept.
    fn fill(&mut self, store: &mut BlockStore, v: usize, pts: Vec<Point3>) -> Result<()> {
        self.nodes[v].size = pts.len();
        if self.nodes[v].is_leaf() {
            self.nodes[v].run = store.write_run(&pts)?;
            return Ok(());
        }
        let kids = self.nodes[v].children.clone();
        let weights: Vec<usize> = kids.iter().map(|&c| self.nodes[c].leaves).collect();
        let total: usize = weights.iter().sum();
        let mut parts = Vec::with_capacity(kids.len());
        let (mut at, mut acc) = (0, 0);
        for (i, w) in weights.iter().enumerate() {
            acc += w;
            let end = if i + 1 == kids.len() { pts.len() } else { pts.len() * acc / total };
            parts.push(at..end);
            at = end;
        }
        let mut slotted_pts = Vec::with_capacity(pts.len());
        for (i, r) in parts.iter().enumerate() {
            slotted_pts.extend(pts[r.clone()].iter().map(|p| slotted(p, self.dir, i)));
        }
        self.nodes[v].f = Some(pst_build_unindexed(store, &slotted_pts, kids.len(), self.f)?);
        let last = kids.len() - 1;
        for (i, (&c, r)) in kids.iter().zip(parts).enumerate() {
            if i < last {
                // Empty parts repeat the previous bound, so routing skips them.
                let hi = match r.end {
                    0 => AxisKey(i64::MIN, 0),
                    e => pts[e - 1].key(Axis::Z),
                };
                self.set_hi_down(c, hi);
            } else {
                let hi = self.nodes[v].hi;
                self.set_hi_down(c, hi);
            }
            self.fill(store, c, pts[r].to_vec())?;
        }
        Ok(())
    }

    /// Set `hi` on `v` and its rightmost descendants.
    fn set_hi_down(&mut self, mut v: usize, hi: AxisKey) {
        loop {
            self.nodes[v].hi = hi;
            match self.nodes[v].children.last() {
                Some(&c) => v = c,
                None => return,
            }
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    /// Live points from the leaf runs, without I/O.
    pub fn points(&self, store: &BlockStore) -> Vec<Point3> {
        self.nodes.iter().filter(|n| n.is_leaf()).flat_map(|n| store.peek_run(&n.run)).collect()
    }

    pub fn stats(&self) -> &ZStats {
        &self.stats
    }

    pub fn fan(&self) -> usize {
        self.fan
    }

    pub fn dir(&self) -> Dir {
        self.dir
    }

    /// Levels on a root-to-leaf path.
    pub fn height(&self) -> usize {
        let mut h = 1;
        let mut v = self.root;
        while let Some(&c) = self.nodes[v].children.first() {
            h += 1;
            v = c;
        }
        h
    }

    /// Internal nodes, each owning one three-sided tree.
    pub fn internal_nodes(&self) -> usize {
        self.nodes.iter().filter(|n| n.f.is_some()).count()
    }

    /// Blocks held by leaf runs and three-sided trees.
    pub fn blocks(&self) -> usize {
        self.nodes.iter().map(|n| n.run.blocks.len() + n.f.as_ref().map_or(0, PSTree::blocks)).sum()
    }

    fn child_index(&self, v: usize, key: AxisKey) -> usize {
        let ch = &self.nodes[v].children;
        ch.partition_point(|&c| self.nodes[c].hi < key).min(ch.len() - 1)
    }

    pub fn destroy(mut self, store: &mut BlockStore) -> Result<()> {
        self.release(store)
    }

    fn release(&mut self, store: &mut BlockStore) -> Result<()> {
        for n in &mut self.nodes {
            store.free_run(&mut n.run)?;
            if let Some(f) = n.f.take() {
                f.destroy(store)?;
            }
        }
        self.nodes.clear();
        Ok(())
    }
}

fn overwrite_in_run(store: &mut BlockStore, run: &Run, to: Point3) -> Result<bool> {
    for &a in &run.blocks {
        let mut blk = store.read_block(a)?;
        if let Some(r) = blk.iter_mut().find(|r| r.id == to.id) {
            *r = to;
            store.write_block(a, blk)?;
            return Ok(true);
        }
    }
    Ok(false)
}

/// Smallest key above `k`.
fn succ(k: AxisKey) -> AxisKey {
    match k.1 {
        u64::MAX => AxisKey(k.0.saturating_add(1), 0),
        id => AxisKey(k.0, id + 1),
    }
}

/// A stretch of z covered by one piece or fringe: `(lo, hi]`, with `None`
/// for an unbounded lower end.
type Span = (Option<AxisKey>, AxisKey);

struct ZWalk<'a> {
    t: &'a ZRangeTree,
    store: &'a BlockStore,
    resolve: &'a dyn Fn(u64) -> Option<Point3>,
    q: QueryBox,
    ka: AxisKey,
    kb: AxisKey,
    out: Vec<Point3>,
    trace: ZTrace,
    spans: Vec<Span>,
}

impl ZWalk<'_> {
    fn lower(&self, v: usize, lo: Option<AxisKey>, i: usize) -> Option<AxisKey> {
        match i {
            0 => lo,
            _ => Some(self.t.nodes[self.t.nodes[v].children[i - 1]].hi),
        }
    }

    /// Every key above `lo` is at least `ka`.
    fn covers_from(&self, lo: Option<AxisKey>) -> bool {
        lo.map_or(self.ka == AxisKey(i64::MIN, 0), |l| succ(l) >= self.ka)
    }

    fn piece(&mut self, v: usize, lo: Option<AxisKey>, depth: usize, a: usize, b: usize) -> Result<()> {
        if a > b {
            return Ok(());
        }
        let t = self.t;
        let ch = &t.nodes[v].children;
        self.spans.push((self.lower(v, lo, a), t.nodes[ch[b]].hi));
        self.trace.pieces.push(Piece { depth, lo: a, hi: b });
        let y = match t.dir {
            Dir::Up => Interval { lo: self.q.y.lo, hi: None },
            Dir::Down => Interval { lo: self.q.y.hi.map(|h| -h), hi: None },
        };
        let bx = QueryBox::new(self.q.x, y, Interval::closed(a as i64 + 1, b as i64 + 1));
        let f = t.nodes[v].f.as_ref().expect("internal nodes own F");
        let (found, tr) = pst_query_traced(self.store, f, &bx)?;
        for p in &found {
            self.out.push((self.resolve)(p.id).ok_or(Error::MissingId(p.id))?);
        }
        let s = &mut self.trace.pst;
        s.path_nodes += tr.path_nodes;
        s.offpath_roots += tr.offpath_roots;
        s.expanded += tr.expanded;
        s.offpath_visited += tr.offpath_visited;
        s.fact1_violations += tr.fact1_violations;
        Ok(())
    }

    fn fringe(&mut self, v: usize, lo: Option<AxisKey>) -> Result<()> {
        let t = self.t;
        self.spans.push((lo, t.nodes[v].hi));
        self.trace.fringes += 1;
        let q = self.q;
        let out = &mut self.out;
        self.store.scan_run(&t.nodes[v].run, |p| {
            if q.contains(p) {
                out.push(*p);
            }
        })
    }

    fn run(&mut self) -> Result<()> {
        let t = self.t;
        let (mut v, mut lo, mut depth) = (t.root, None, 0);
        loop {
            self.store.charge_reads(1);
            if t.nodes[v].is_leaf() {
                return self.fringe(v, lo);
            }
            let ia = t.child_index(v, self.ka);
            let ib = t.child_index(v, self.kb);
            let ch = &t.nodes[v].children;
            let left_in = self.covers_from(self.lower(v, lo, ia));
            let right_in = t.nodes[ch[ib]].hi <= self.kb;
            if ia == ib && !(left_in && right_in) {
                lo = self.lower(v, lo, ia);
                v = ch[ia];
                depth += 1;
                continue;
            }
            let a = if left_in { ia } else { ia + 1 };
            let b = if right_in { ib } else { ib.wrapping_sub(1) };
            self.piece(v, lo, depth, a, b)?;
            if !left_in {
                self.left(ch[ia], self.lower(v, lo, ia), depth + 1)?;
            }
            if !right_in {
                self.right(ch[ib], self.lower(v, lo, ib), depth + 1)?;
            }
            return Ok(());
        }
    }

    fn left(&mut self, mut v: usize, mut lo: Option<AxisKey>, mut depth: usize) -> Result<()> {
        let t = self.t;
        loop {
            self.store.charge_reads(1);
            if t.nodes[v].is_leaf() {
                return self.fringe(v, lo);
            }
            let last = t.nodes[v].children.len() - 1;
            let i = t.child_index(v, self.ka);
            if self.covers_from(self.lower(v, lo, i)) {
                return self.piece(v, lo, depth, i, last);
            }
            self.piece(v, lo, depth, i + 1, last)?;
            lo = self.lower(v, lo, i);
            v = t.nodes[v].children[i];
            depth += 1;
        }
    }

    fn right(&mut self, mut v: usize, mut lo: Option<AxisKey>, mut depth: usize) -> Result<()> {
        let t = self.t;
        loop {
            self.store.charge_reads(1);
            if t.nodes[v].is_leaf() {
                return self.fringe(v, lo);
            }
            let i = t.child_index(v, self.kb);
            let c = t.nodes[v].children[i];
            if t.nodes[c].hi <= self.kb {
                return self.piece(v, lo, depth, 0, i);
            }
            if i > 0 {
                self.piece(v, lo, depth, 0, i - 1)?;
            }
            lo = self.lower(v, lo, i);
            v = c;
            depth += 1;
        }
    }

    /// Spans sorted by upper end must chain and cover `[ka, kb]`.
    fn tiled(&self) -> bool {
        let mut s = self.spans.clone();
        s.sort_by_key(|&(lo, hi)| (hi, lo));
        let Some(first) = s.first() else { return false };
        let Some(last) = s.last() else { return false };
        first.0.map_or(true, |l| succ(l) <= self.ka)
            && last.1 >= self.kb
            && s.windows(2).all(|w| w[1].0 == Some(w[0].1))
    }
}

fn check_sides(dir: Dir, q: &QueryBox) -> Result<()> {
    let bad = match dir {
        Dir::Up => q.y.hi.is_some(),
        Dir::Down => q.y.lo.is_some(),
    };
    if bad {
        return Err(Error::Parameter(format!("z-tree facing {dir:?} takes one y side, got {:?}", q.y)));
    }
    Ok(())
}

/// Points inside a (2,1,2)-sided box, sorted by id, with instrumentation.
/// Needs an indexed tree.
pub fn zt_query_traced(store: &BlockStore, t: &ZRangeTree, q: &QueryBox) -> Result<(Vec<Point3>, ZTrace)> {
    let index = t.index.as_ref().ok_or_else(|| Error::State("tree has no id index".into()))?;
    zt_query_resolved(store, t, q, &|id| index.get(&id).copied())
}

/// As [`zt_query_traced`], mapping ids reported by the three-sided trees
/// back to points through `resolve`.
pub fn zt_query_resolved(
    store: &BlockStore,
    t: &ZRangeTree,
    q: &QueryBox,
    resolve: &dyn Fn(u64) -> Option<Point3>,
) -> Result<(Vec<Point3>, ZTrace)> {
    check_sides(t.dir, q)?;
    let mut trace = ZTrace { tiled: true, ..ZTrace::default() };
    if q.is_empty() || t.nodes.is_empty() {
        return Ok((Vec::new(), trace));
    }
    let ka = q.z.lo.map_or(AxisKey(i64::MIN, 0), |d| AxisKey(d, 0));
    let kb = q.z.hi.map_or(AxisKey::MAX, |e| AxisKey(e, u64::MAX));
    trace.tiled = false;
    let mut w = ZWalk { t, store, resolve, q: *q, ka, kb, out: Vec::new(), trace, spans: Vec::new() };
    w.run()?;
    w.trace.tiled = w.tiled();
    let mut out = w.out;
    out.sort_unstable_by_key(|p| p.id);
    Ok((out, w.trace))
}

pub fn zt_query(store: &BlockStore, t: &ZRangeTree, q: &QueryBox) -> Result<Vec<Point3>> {
    zt_query_traced(store, t, q).map(|(v, _)| v)
}

impl ZRangeTree {
    fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut k = 0;
        while k < out.len() {
            out.extend(self.nodes[out[k]].children.iter().copied());
            k += 1;
        }
        out
    }

    /// Re-spread the points below `u` over its existing leaves.
    fn rebuild_subtree(&mut self, store: &mut BlockStore, u: usize) -> Result<()> {
        let mut pts = Vec::with_capacity(self.nodes[u].size);
        for v in self.subtree(u) {
            let n = &mut self.nodes[v];
            pts.extend(store.read_run(&n.run)?);
            store.free_run(&mut n.run)?;
            if let Some(f) = n.f.take() {
                f.destroy(store)?;
            }
        }
        pts.sort_unstable_by_key(|p| p.key(Axis::Z));
        self.fill(store, u, pts)?;
        self.stats.partial_rebuilds += 1;
        Ok(())
    }

    fn rebuild(&mut self, store: &mut BlockStore) -> Result<()> {
        let b = store.block_capacity();
        let mut pts = self.points(store);
        store.charge_reads(pts.len().div_ceil(b) as u64);
        pts.sort_unstable_by_key(|p| p.key(Axis::Z));
        self.release(store)?;
        self.root = self.build_shape(b, pts.len());
        self.fill(store, self.root, pts)?;
        self.built = self.len;
        self.since = 0;
        self.stats.global_rebuilds += 1;
        Ok(())
    }

    /// Leaf `v` overflowed: re-spread the lowest ancestor with room, or
    /// rebuild everything.
    fn relieve(&mut self, store: &mut BlockStore, v: usize) -> Result<()> {
        let b = store.block_capacity();
        let mut u = self.nodes[v].parent;
        while let Some(w) = u {
            if 2 * self.nodes[w].size <= 3 * b * self.nodes[w].leaves {
                return self.rebuild_subtree(store, w);
            }
            u = self.nodes[w].parent;
        }
        self.rebuild(store)
    }

    fn after_update(&mut self, store: &mut BlockStore, leaf: usize) -> Result<()> {
        let b = store.block_capacity();
        self.since += 1;
        if 2 * self.since >= self.built.max(2 * b) {
            return self.rebuild(store);
        }
        if self.nodes[leaf].run.len > 2 * b {
            return self.relieve(store, leaf);
        }
        Ok(())
    }

    /// Overwrite the leaf record and index entry of `to.id`.
    fn corrupt(&mut self, store: &mut BlockStore, to: Point3) -> Result<bool> {
        if let Some(p) = self.index.as_mut().and_then(|m| m.get_mut(&to.id)) {
            *p = to;
        }
        let mut hit = false;
        for n in &self.nodes {
            hit |= overwrite_in_run(store, &n.run, to)?;
        }
        Ok(hit)
    }

    /// Three-sided trees updated by the last insert or delete.
    pub fn last_touched(&self) -> usize {
        self.touched
    }

    /// Structures holding `id`: one `F` per internal level plus its leaf.
    pub fn memberships(&self, store: &BlockStore, id: u64) -> usize {
        self.nodes
            .iter()
            .filter(|n| match &n.f {
                Some(f) => f.contains(id),
                None => store.peek_run(&n.run).iter().any(|p| p.id == id),
            })
            .count()
    }
}

/// Unindexed trees trust the caller that `p.id` is fresh.
pub fn zt_insert(store: &mut BlockStore, t: &mut ZRangeTree, p: Point3) -> Result<()> {
    if let Some(index) = &mut t.index {
        if index.contains_key(&p.id) {
            return Err(Error::DuplicateId(p.id));
        }
        index.insert(p.id, p);
    }
    t.len += 1;
    let key = p.key(Axis::Z);
    t.touched = 0;
    let mut v = t.root;
    loop {
        store.charge_reads(1);
        t.nodes[v].size += 1;
        if t.nodes[v].is_leaf() {
            store.push_to_run(&mut t.nodes[v].run, p)?;
            break;
        }
        let i = t.child_index(v, key);
        pst_insert(store, t.nodes[v].f.as_mut().expect("F built"), slotted(&p, t.dir, i))?;
        t.touched += 1;
        v = t.nodes[v].children[i];
    }
    t.after_update(store, v)
}

/// Delete by id; needs an indexed tree.
pub fn zt_delete(store: &mut BlockStore, t: &mut ZRangeTree, id: u64) -> Result<Point3> {
    let index = t.index.as_ref().ok_or_else(|| Error::State("tree has no id index".into()))?;
    let p = *index.get(&id).ok_or(Error::MissingId(id))?;
    zt_remove(store, t, &p)?;
    Ok(p)
}

/// Delete the stored point `p`.
pub fn zt_remove(store: &mut BlockStore, t: &mut ZRangeTree, p: &Point3) -> Result<()> {
    let id = p.id;
    let key = p.key(Axis::Z);
    t.touched = 0;
    let mut v = t.root;
    loop {
        store.charge_reads(1);
        t.nodes[v].size -= 1;
        if t.nodes[v].is_leaf() {
            store.remove_from_run(&mut t.nodes[v].run, |r| r.id == id)?.ok_or(Error::MissingId(id))?;
            break;
        }
        let i = t.child_index(v, key);
        pst_remove(store, t.nodes[v].f.as_mut().expect("F built"), &slotted(p, t.dir, i))?;
        t.touched += 1;
        v = t.nodes[v].children[i];
    }
    if let Some(index) = &mut t.index {
        index.remove(&id);
    }
    t.len -= 1;
    t.after_update(store, v)
}

impl ZRangeTree {
    /// Structural violations; empty when consistent.
    pub fn audit(&self, store: &BlockStore) -> Vec<String> {
        let mut out = Vec::new();
        let mut all = Vec::new();
        // (node, exclusive lower key) pairs; returns the subtree's points.
        fn walk(t: &ZRangeTree, store: &BlockStore, v: usize, lo: Option<AxisKey>, out: &mut Vec<String>) -> Vec<Point3> {
            let n = &t.nodes[v];
            if n.is_leaf() {
                let pts = store.peek_run(&n.run);
                if pts.len() != n.run.len || n.size != pts.len() {
                    out.push(format!("leaf {v} size {} vs run {} / {}", n.size, n.run.len, pts.len()));
                }
                for p in &pts {
                    let k = p.key(Axis::Z);
                    if lo.is_some_and(|l| k <= l) || k > n.hi {
                        out.push(format!("point {} outside leaf {v}'s z-range", p.id));
                    }
                }
                return pts;
            }
            let mut pts = Vec::new();
            let mut want = Vec::new();
            let mut clo = lo;
            for (i, &c) in n.children.iter().enumerate() {
                if t.nodes[c].parent != Some(v) {
                    out.push(format!("child {c} of {v} has a bad parent link"));
                }
                let sub = walk(t, store, c, clo, out);
                want.extend(sub.iter().map(|p| slotted(p, t.dir, i)));
                pts.extend(sub);
                clo = Some(t.nodes[c].hi);
            }
            if clo != Some(n.hi) {
                out.push(format!("node {v}'s children end below its upper key"));
            }
            if n.size != pts.len() || n.leaves != n.children.iter().map(|&c| t.nodes[c].leaves).sum::<usize>() {
                out.push(format!("node {v} size or leaf count stale"));
            }
            match &n.f {
                None => out.push(format!("node {v} lacks F")),
                Some(f) => {
                    let mut have: Vec<Point3> = f.points();
                    have.sort_unstable_by_key(|p| p.id);
                    want.sort_unstable_by_key(|p| p.id);
                    if have != want {
                        out.push(format!("node {v} F differs from its subtree"));
                    }
                    out.extend(f.audit(store).into_iter().map(|m| format!("node {v} F: {m}")));
                }
            }
            pts
        }
        if !self.nodes.is_empty() {
            all = walk(self, store, self.root, None, &mut out);
        }
        all.sort_unstable_by_key(|p| p.id);
        if all.len() != self.len {
            out.push(format!("leaves hold {} points, {} live", all.len(), self.len));
        }
        if let Some(index) = &self.index {
            let mut live: Vec<Point3> = index.values().copied().collect();
            live.sort_unstable_by_key(|p| p.id);
            if all != live {
                out.push(format!("leaves differ from the id index ({} indexed)", live.len()));
            }
        }
        out
    }
}

/// Leaves of the y-layer hold up to this many blocks of points.
pub const Y_LEAF_BLOCKS: usize = 8;

/// Parameters of a [`Full3D`] instance.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Config {
    pub b: usize,
    /// Fan-out exponent `f ≤ 1/6` of the three-sided trees.
    pub f: f64,
    pub pinned_limit: usize,
    /// Recorded for reproducibility; the structure itself is deterministic.
    pub seed: u64,
}

impl Config {
    pub fn new(b: usize) -> Self {
        Config { b, f: crate::ext_three_sided::DEFAULT_FANOUT_EXP, pinned_limit: default_pinned_limit(b), seed: 0 }
    }
}

struct YNode {
    split: AxisKey,
    parent: Option<usize>,
    /// `[left, right]`, or empty for a leaf.
    kids: Option<[usize; 2]>,
    size: usize,
    leaves: usize,
    run: Run,
    /// Left subtree facing `y >= lo` and right subtree facing `y <= hi`.
    sides: Option<Box<[ZRangeTree; 2]>>,
}

/// Per-query instrumentation summed over the z-trees asked.
#[derive(Clone, Debug, Default)]
pub struct FullTrace {
    pub y_depth: usize,
    pub z_queries: usize,
    pub pieces: usize,
    pub fringes: usize,
    /// Every z-tree decomposition tiled its interval.
    pub tiled: bool,
    pub pst: QueryTrace,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FullStats {
    pub partial_rebuilds: usize,
    pub global_rebuilds: usize,
}

/// Dynamic 3D orthogonal range reporting over its own block store.
pub struct Full3D {
    cfg: Config,
    store: BlockStore,
    nodes: Vec<YNode>,
    root: usize,
    points: HashMap<u64, Point3>,
    built: usize,
    since: usize,
    stats: FullStats,
}

impl std::fmt::Debug for Full3D {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Full3D").field("cfg", &self.cfg).field("len", &self.points.len()).finish()
    }
}

fn y_leaf(parent: Option<usize>) -> YNode {
    YNode { split: AxisKey::MAX, parent, kids: None, size: 0, leaves: 1, run: Run::default(), sides: None }
}

impl Full3D {
    pub fn create(cfg: Config) -> Result<Self> {
        Self::build(cfg, &[])
    }

    pub fn build(cfg: Config, pts: &[Point3]) -> Result<Self> {
        if cfg.b < 8 {
            return Err(Error::Parameter(format!("block size {} below 8", cfg.b)));
        }
        PstParams::new(cfg.b, cfg.f, z_fanout(cfg.b, cfg.f))?;
        let store = BlockStore::with_pinned_limit(cfg.b, cfg.pinned_limit)?;
        let mut map = HashMap::with_capacity(pts.len());
        for p in pts {
            if !p.in_range() {
                return Err(Error::Parameter(format!("point {p} outside the coordinate range")));
            }
            if map.insert(p.id, *p).is_some() {
                return Err(Error::DuplicateId(p.id));
            }
        }
        let mut t = Full3D { cfg, store, nodes: Vec::new(), root: 0, points: map, built: 0, since: 0, stats: FullStats::default() };
        t.rebuild()?;
        t.stats.global_rebuilds = 0;
        Ok(t)
    }

    fn leaf_cap(&self) -> usize {
        Y_LEAF_BLOCKS * self.cfg.b
    }

    /// Balanced shape with one leaf per `leaf_cap` points.
    fn shape(&mut self, parent: Option<usize>, leaves: usize) -> usize {
        let id = self.nodes.len();
        self.nodes.push(y_leaf(parent));
        if leaves > 1 {
            let l = self.shape(Some(id), leaves / 2);
            let r = self.shape(Some(id), leaves - leaves / 2);
            self.nodes[id].kids = Some([l, r]);
            self.nodes[id].leaves = leaves;
        }
        id
    }

    /// Spread y-sorted `pts` over the leaves below `v` in proportion to
    /// their count and build every run and z-tree there.
    fn fill(&mut self, v: usize, pts: Vec<Point3>) -> Result<()> {
        self.nodes[v].size = pts.len();
        let Some([l, r]) = self.nodes[v].kids else {
            self.nodes[v].run = self.store.write_run(&pts)?;
            return Ok(());
        };
        let cut = pts.len() * self.nodes[l].leaves / self.nodes[v].leaves;
        let mut left = pts;
        let right = left.split_off(cut);
        self.nodes[v].split = left.last().map_or(AxisKey(i64::MIN, 0), |p| p.key(Axis::Y));
        let lo = zt_build_unindexed(&mut self.store, &left, self.cfg.f, Dir::Up)?;
        let hi = zt_build_unindexed(&mut self.store, &right, self.cfg.f, Dir::Down)?;
        self.nodes[v].sides = Some(Box::new([lo, hi]));
        self.fill(l, left)?;
        self.fill(r, right)
    }

    fn subtree(&self, v: usize) -> Vec<usize> {
        let mut out = vec![v];
        let mut k = 0;
        while k < out.len() {
            if let Some(kids) = self.nodes[out[k]].kids {
                out.extend(kids);
            }
            k += 1;
        }
        out
    }

    fn clear(&mut self, v: usize) -> Result<Vec<Point3>> {
        let mut pts = Vec::new();
        for u in self.subtree(v) {
            let n = &mut self.nodes[u];
            pts.extend(self.store.read_run(&n.run)?);
            self.store.free_run(&mut n.run)?;
            if let Some(sides) = n.sides.take() {
                let [lo, hi] = *sides;
                lo.destroy(&mut self.store)?;
                hi.destroy(&mut self.store)?;
            }
        }
        Ok(pts)
    }

    fn rebuild(&mut self) -> Result<()> {
        if !self.nodes.is_empty() {
            self.clear(self.root)?;
        }
        self.nodes.clear();
        let mut pts: Vec<Point3> = self.points.values().copied().collect();
        self.store.charge_reads(pts.len().div_ceil(self.cfg.b) as u64);
        pts.sort_unstable_by_key(|p| p.key(Axis::Y));
        let leaves = pts.len().div_ceil(self.leaf_cap()).max(1);
        self.root = self.shape(None, leaves);
        self.fill(self.root, pts)?;
        self.built = self.points.len();
        self.since = 0;
        self.stats.global_rebuilds += 1;
        Ok(())
    }

    /// Leaf `v` overflowed: re-spread the lowest ancestor with room, or
    /// rebuild everything.
    fn relieve(&mut self, v: usize) -> Result<()> {
        let cap = self.leaf_cap();
        let mut u = self.nodes[v].parent;
        while let Some(w) = u {
            if 2 * self.nodes[w].size <= 3 * cap * self.nodes[w].leaves {
                let mut pts = self.clear(w)?;
                pts.sort_unstable_by_key(|p| p.key(Axis::Y));
                self.fill(w, pts)?;
                self.stats.partial_rebuilds += 1;
                return Ok(());
            }
            u = self.nodes[w].parent;
        }
        self.rebuild()
    }

    fn after_update(&mut self, leaf: usize) -> Result<()> {
        self.since += 1;
        if 2 * self.since >= self.built.max(2 * self.leaf_cap()) {
            return self.rebuild();
        }
        if self.nodes[leaf].run.len > 2 * self.leaf_cap() {
            return self.relieve(leaf);
        }
        Ok(())
    }

    /// The y-layer is a block-resident binary tree: one read per
    /// `log₂B` levels walked.
    fn charge_path(&self, depth: usize) {
        let per_block = (self.cfg.b.ilog2() as usize).max(1);
        self.store.charge_reads(depth.div_ceil(per_block) as u64);
    }

    pub fn insert(&mut self, p: Point3) -> Result<()> {
        if !p.in_range() {
            return Err(Error::Parameter(format!("point {p} outside the coordinate range")));
        }
        if self.points.contains_key(&p.id) {
            return Err(Error::DuplicateId(p.id));
        }
        self.points.insert(p.id, p);
        let key = p.key(Axis::Y);
        let (mut v, mut depth) = (self.root, 1);
        while let Some([l, r]) = self.nodes[v].kids {
            self.nodes[v].size += 1;
            let n = &mut self.nodes[v];
            let sides = n.sides.as_mut().expect("internal nodes own z-trees");
            if key <= n.split {
                zt_insert(&mut self.store, &mut sides[0], p)?;
                v = l;
            } else {
                zt_insert(&mut self.store, &mut sides[1], p)?;
                v = r;
            }
            depth += 1;
        }
        self.charge_path(depth);
        self.nodes[v].size += 1;
        self.store.push_to_run(&mut self.nodes[v].run, p)?;
        self.after_update(v)
    }

    pub fn delete(&mut self, id: u64) -> Result<Point3> {
        let p = self.points.remove(&id).ok_or(Error::MissingId(id))?;
        let key = p.key(Axis::Y);
        let (mut v, mut depth) = (self.root, 1);
        while let Some([l, r]) = self.nodes[v].kids {
            self.nodes[v].size -= 1;
            let n = &mut self.nodes[v];
            let sides = n.sides.as_mut().expect("internal nodes own z-trees");
            if key <= n.split {
                zt_remove(&mut self.store, &mut sides[0], &p)?;
                v = l;
            } else {
                zt_remove(&mut self.store, &mut sides[1], &p)?;
                v = r;
            }
            depth += 1;
        }
        self.charge_path(depth);
        self.nodes[v].size -= 1;
        self.store.remove_from_run(&mut self.nodes[v].run, |r| r.id == id)?.ok_or(Error::MissingId(id))?;
        self.after_update(v)?;
        Ok(p)
    }

    pub fn query(&self, q: &QueryBox) -> Result<Vec<Point3>> {
        self.query_traced(q).map(|(v, _)| v)
    }

    /// Points inside `q`, sorted by id, with instrumentation.
    pub fn query_traced(&self, q: &QueryBox) -> Result<(Vec<Point3>, FullTrace)> {
        let mut tr = FullTrace { tiled: true, ..FullTrace::default() };
        if q.is_empty() {
            return Ok((Vec::new(), tr));
        }
        let ka = q.y.lo.map_or(AxisKey(i64::MIN, 0), |c| AxisKey(c, 0));
        let kb = q.y.hi.map_or(AxisKey::MAX, |c| AxisKey(c, u64::MAX));
        let mut v = self.root;
        let mut out = Vec::new();
        loop {
            tr.y_depth += 1;
            let n = &self.nodes[v];
            let Some([l, r]) = n.kids else {
                self.charge_path(tr.y_depth);
                self.store.scan_run(&n.run, |p| {
                    if q.contains(p) {
                        out.push(*p);
                    }
                })?;
                break;
            };
            if kb <= n.split {
                v = l;
            } else if ka > n.split {
                v = r;
            } else {
                self.charge_path(tr.y_depth);
                let sides = n.sides.as_ref().expect("internal nodes own z-trees");
                let up = QueryBox::new(q.x, Interval { lo: q.y.lo, hi: None }, q.z);
                let down = QueryBox::new(q.x, Interval { lo: None, hi: q.y.hi }, q.z);
                for (zt, bx) in [(&sides[0], up), (&sides[1], down)] {
                    let (found, zr) = zt_query_resolved(&self.store, zt, &bx, &|id| self.points.get(&id).copied())?;
                    out.extend(found);
                    tr.z_queries += 1;
                    tr.pieces += zr.pieces.len();
                    tr.fringes += zr.fringes;
                    tr.tiled &= zr.tiled;
                    tr.pst.path_nodes += zr.pst.path_nodes;
                    tr.pst.offpath_roots += zr.pst.offpath_roots;
                    tr.pst.expanded += zr.pst.expanded;
                    tr.pst.offpath_visited += zr.pst.offpath_visited;
                    tr.pst.fact1_violations += zr.pst.fact1_violations;
                }
                break;
            }
        }
        out.sort_unstable_by_key(|p| p.id);
        Ok((out, tr))
    }

    pub fn config(&self) -> Config {
        self.cfg
    }

    pub fn store(&self) -> &BlockStore {
        &self.store
    }

    pub fn io_stats(&self) -> IoSnapshot {
        self.store.snapshot()
    }

    pub fn stats(&self) -> &FullStats {
        &self.stats
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn contains(&self, id: u64) -> bool {
        self.points.contains_key(&id)
    }

    pub fn points(&self) -> impl Iterator<Item = &Point3> {
        self.points.values()
    }

    /// Levels of the y-layer.
    pub fn height(&self) -> usize {
        fn h(t: &Full3D, v: usize) -> usize {
            t.nodes[v].kids.map_or(1, |[l, r]| 1 + h(t, l).max(h(t, r)))
        }
        h(self, self.root)
    }

    /// Blocks currently allocated.
    pub fn blocks(&self) -> u64 {
        self.store.live_blocks()
    }

    /// Overwrite every stored copy of a point that queries report from:
    /// y-leaf runs, z-tree leaf runs and the id map that resolves
    /// three-sided answers. The three-sided trees keep the original, so the
    /// fault shows up as a wrong or missing answer. Test hook for fault
    /// injection.
    pub fn corrupt_point(&mut self, id: u64, to: Point3) -> Result<bool> {
        let to = Point3 { id, ..to };
        let mut hit = false;
        if let Some(p) = self.points.get_mut(&id) {
            *p = to;
        }
        for v in 0..self.nodes.len() {
            let run = self.nodes[v].run.clone();
            hit |= overwrite_in_run(&mut self.store, &run, to)?;
            if let Some(sides) = self.nodes[v].sides.as_mut() {
                for zt in sides.iter_mut() {
                    hit |= zt.corrupt(&mut self.store, to)?;
                }
            }
        }
        Ok(hit)
    }
}

impl Full3D {
    /// Structural violations across both layers; empty when consistent.
    pub fn audit(&self) -> Vec<String> {
        let mut out = Vec::new();
        let all = self.audit_node(self.root, None, None, &mut out);
        let mut have: Vec<Point3> = all;
        have.sort_unstable_by_key(|p| p.id);
        let mut live: Vec<Point3> = self.points.values().copied().collect();
        live.sort_unstable_by_key(|p| p.id);
        if have != live {
            out.push(format!("y-leaves hold {} points, {} live", have.len(), live.len()));
        }
        out
    }

    /// Checks the subtree of `v`, whose keys lie in `(lo, hi]`, and
    /// returns its points.
    fn audit_node(&self, v: usize, lo: Option<AxisKey>, hi: Option<AxisKey>, out: &mut Vec<String>) -> Vec<Point3> {
        let n = &self.nodes[v];
        let Some([l, r]) = n.kids else {
            let pts = self.store.peek_run(&n.run);
            if pts.len() != n.size || n.run.len != n.size {
                out.push(format!("y-leaf {v} size {} vs run {}", n.size, pts.len()));
            }
            for p in &pts {
                let k = p.key(Axis::Y);
                if lo.is_some_and(|x| k <= x) || hi.is_some_and(|x| k > x) {
                    out.push(format!("point {} outside y-leaf {v}'s range", p.id));
                }
            }
            return pts;
        };
        for c in [l, r] {
            if self.nodes[c].parent != Some(v) {
                out.push(format!("y-node {c} has a bad parent link"));
            }
        }
        let left = self.audit_node(l, lo, Some(n.split), out);
        let right = self.audit_node(r, Some(n.split), hi, out);
        if n.size != left.len() + right.len() || n.leaves != self.nodes[l].leaves + self.nodes[r].leaves {
            out.push(format!("y-node {v} size or leaf count stale"));
        }
        match &n.sides {
            None => out.push(format!("y-node {v} lacks z-trees")),
            Some(sides) => {
                for (k, (zt, want, dir)) in [(&sides[0], &left, Dir::Up), (&sides[1], &right, Dir::Down)].into_iter().enumerate() {
                    let mut have: Vec<u64> = zt.points(&self.store).iter().map(|p| p.id).collect();
                    let mut ids: Vec<u64> = want.iter().map(|p| p.id).collect();
                    have.sort_unstable();
                    ids.sort_unstable();
                    if have != ids || zt.dir() != dir {
                        out.push(format!("y-node {v} side {k} differs from its subtree"));
                    }
                    out.extend(zt.audit(&self.store).into_iter().map(|m| format!("y-node {v} side {k}: {m}")));
                }
            }
        }
        let mut pts = left;
        pts.extend(right);
        pts
    }
}
