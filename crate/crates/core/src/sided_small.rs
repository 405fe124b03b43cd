//! Small sets under (b_x, b_y, b_z)-sided queries.
//!
//! Each axis bounded on both sides gets a balanced binary tree over the
//! points' order on that axis. An internal node keeps two structures with
//! that axis reduced to one side: its left subtree's points answering
//! `coord >= lo`, its right subtree's points answering `coord <= hi`. A
//! query descends to the split node of its interval and asks both. Once
//! every axis is one-sided the base is a [`BoundaryLadder`] over reflected
//! points, so every base query is a dominance query. Subtrees of at most
//! `LEAF_BLOCKS · B` points are stored as plain runs and filtered directly.

use std::collections::HashMap;

use crate::block_io::{BlockStore, Run};
use crate::error::{Error, Result};
use crate::geom::{AxisKey, Axis, Point3, QueryBox};
use crate::small_dominance::{sd_build, sd_delete, sd_insert, sd_query, BoundaryLadder};
use crate::tab_boundary::boundary_cap;

/// Direction of a one-sided axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Dir {
    /// `coord >= bound`
    #[default]
    Up,
    /// `coord <= bound`
    Down,
}

/// Sides per axis (1 or 2) and, for one-sided axes, their direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Shape {
    pub sides: [u8; 3],
    pub dirs: [Dir; 3],
}

impl Shape {
    pub fn new(sides: [u8; 3]) -> Self {
        Shape { sides, dirs: [Dir::Up; 3] }
    }

    /// Doubled axes.
    pub fn m(&self) -> u32 {
        self.sides.iter().map(|&s| u32::from(s) - 1).sum()
    }

    fn doubled(&self) -> Option<usize> {
        self.sides.iter().position(|&s| s == 2)
    }

    fn reduce(&self, axis: usize, dir: Dir) -> Shape {
        let mut s = *self;
        s.sides[axis] = 1;
        s.dirs[axis] = dir;
        s
    }

    /// Whether the box only bounds the sides this shape supports.
    pub fn admits(&self, q: &QueryBox) -> bool {
        Axis::ALL.iter().all(|&a| {
            let iv = q.axis(a);
            match (self.sides[a.index()], self.dirs[a.index()]) {
                (2, _) => true,
                (_, Dir::Up) => iv.hi.is_none(),
                (_, Dir::Down) => iv.lo.is_none(),
            }
        })
    }
}

fn reflect(p: &Point3, dirs: &[Dir; 3]) -> Point3 {
    let mut r = *p;
    for a in Axis::ALL {
        if dirs[a.index()] == Dir::Down {
            r.set_coord(a, -p.coord(a));
        }
    }
    r
}

enum Sub {
    Base(BoundaryLadder),
    Leaf(Run),
    Node(Box<Node>),
}

struct Node {
    axis: Axis,
    /// Largest key in the left subtree at build time; routes updates.
    split: AxisKey,
    lo_side: Sub,
    hi_side: Sub,
    left: Sub,
    right: Sub,
}

/// Counters of the most recent update and of rebuilds.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct SidedStats {
    pub last_base_updates: usize,
    pub max_base_updates: usize,
    pub rebuilds: usize,
}

pub struct SidedSmallSet {
    shape: Shape,
    b: usize,
    root: Sub,
    /// Id map of standalone sets. Sets owned by another structure leave it
    /// out and are updated through [`ss_remove`] with the stored point.
    index: Option<HashMap<u64, Point3>>,
    len: usize,
    built: usize,
    stats: SidedStats,
}

impl std::fmt::Debug for SidedSmallSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SidedSmallSet").field("shape", &self.shape).field("len", &self.len).finish()
    }
}

fn build_sub(store: &mut BlockStore, mut pts: Vec<Point3>, shape: Shape) -> Result<Sub> {
    let b = store.block_capacity();
    let Some(ai) = shape.doubled() else {
        let refl: Vec<Point3> = pts.iter().map(|p| reflect(p, &shape.dirs)).collect();
        return Ok(Sub::Base(sd_build(store, &refl)?));
    };
    if pts.len() <= LEAF_BLOCKS * b {
        return Ok(Sub::Leaf(store.write_run(&pts)?));
    }
    let axis = Axis::ALL[ai];
    pts.sort_unstable_by_key(|p| p.key(axis));
    let right = pts.split_off(pts.len() / 2);
    let split = pts.last().expect("nonempty left half").key(axis);
    Ok(Sub::Node(Box::new(Node {
        axis,
        split,
        lo_side: build_sub(store, pts.clone(), shape.reduce(ai, Dir::Up))?,
        hi_side: build_sub(store, right.clone(), shape.reduce(ai, Dir::Down))?,
        left: build_sub(store, pts, shape)?,
        right: build_sub(store, right, shape)?,
    })))
}

fn query_sub(store: &BlockStore, sub: &Sub, shape: Shape, q: &QueryBox, out: &mut Vec<Point3>) -> Result<()> {
    match sub {
        Sub::Base(l) => {
            let mut probe = Point3::new(0, 0, 0, 0);
            for a in Axis::ALL {
                let iv = q.axis(a);
                let v = match shape.dirs[a.index()] {
                    Dir::Up => iv.lo_or_min(),
                    Dir::Down => iv.hi.map_or(i64::MIN, |h| -h),
                };
                probe.set_coord(a, v);
            }
            out.extend(sd_query(store, l, &probe)?.iter().map(|p| reflect(p, &shape.dirs)));
            Ok(())
        }
        Sub::Leaf(run) => store.scan_run(run, |p| {
            if q.contains(p) {
                out.push(*p);
            }
        }),
        Sub::Node(_) => {
            // Split-node search in the block-resident tree over this axis.
            store.charge_reads(1);
            let mut cur = sub;
            loop {
                match cur {
                    Sub::Node(n) => {
                        let iv = q.axis(n.axis);
                        let c = n.split.0;
                        if iv.lo_or_min() > c {
                            cur = &n.right;
                        } else if iv.hi_or_max() < c {
                            cur = &n.left;
                        } else {
                            let ai = n.axis.index();
                            query_sub(store, &n.lo_side, shape.reduce(ai, Dir::Up), q, out)?;
                            return query_sub(store, &n.hi_side, shape.reduce(ai, Dir::Down), q, out);
                        }
                    }
                    other => return query_sub(store, other, shape, q, out),
                }
            }
        }
    }
}

/// Insert into every structure on `p`'s path. Returns whether a leaf run
/// outgrew twice the leaf cutoff.
fn insert_sub(store: &mut BlockStore, sub: &mut Sub, shape: Shape, p: &Point3, count: &mut usize) -> Result<bool> {
    *count += 1;
    match sub {
        Sub::Base(l) => {
            sd_insert(store, l, reflect(p, &shape.dirs))?;
            Ok(false)
        }
        Sub::Leaf(run) => {
            let b = store.block_capacity();
            if run.len % b == 0 {
                let a = store.alloc();
                store.write_block(a, vec![*p])?;
                run.blocks.push(a);
            } else {
                let a = *run.blocks.last().expect("tail block");
                let mut blk = store.read_block(a)?;
                blk.push(*p);
                store.write_block(a, blk)?;
            }
            run.len += 1;
            Ok(run.len > 2 * LEAF_BLOCKS * b)
        }
        Sub::Node(n) => {
            *count -= 1;
            let ai = n.axis.index();
            if p.key(n.axis) <= n.split {
                let side = insert_sub(store, &mut n.lo_side, shape.reduce(ai, Dir::Up), p, count)?;
                Ok(insert_sub(store, &mut n.left, shape, p, count)? | side)
            } else {
                let side = insert_sub(store, &mut n.hi_side, shape.reduce(ai, Dir::Down), p, count)?;
                Ok(insert_sub(store, &mut n.right, shape, p, count)? | side)
            }
        }
    }
}

fn delete_sub(store: &mut BlockStore, sub: &mut Sub, shape: Shape, p: &Point3, count: &mut usize) -> Result<()> {
    *count += 1;
    match sub {
        Sub::Base(l) => sd_delete(store, l, p.id),
        Sub::Leaf(run) => {
            let mut recs = store.read_run(run)?;
            let k = recs.iter().position(|r| r.id == p.id).ok_or(Error::MissingId(p.id))?;
            recs.swap_remove(k);
            store.free_run(run)?;
            *run = store.write_run(&recs)?;
            Ok(())
        }
        Sub::Node(n) => {
            *count -= 1;
            let ai = n.axis.index();
            if p.key(n.axis) <= n.split {
                delete_sub(store, &mut n.lo_side, shape.reduce(ai, Dir::Up), p, count)?;
                delete_sub(store, &mut n.left, shape, p, count)
            } else {
                delete_sub(store, &mut n.hi_side, shape.reduce(ai, Dir::Down), p, count)?;
                delete_sub(store, &mut n.right, shape, p, count)
            }
        }
    }
}

fn destroy_sub(store: &mut BlockStore, sub: Sub) -> Result<()> {
    match sub {
        Sub::Base(l) => l.destroy(store),
        Sub::Leaf(mut run) => store.free_run(&mut run),
        Sub::Node(n) => {
            let n = *n;
            destroy_sub(store, n.lo_side)?;
            destroy_sub(store, n.hi_side)?;
            destroy_sub(store, n.left)?;
            destroy_sub(store, n.right)
        }
    }
}

fn blocks_sub(sub: &Sub) -> usize {
    match sub {
        Sub::Base(l) => l.blocks(),
        Sub::Leaf(run) => run.blocks.len(),
        Sub::Node(n) => blocks_sub(&n.lo_side) + blocks_sub(&n.hi_side) + blocks_sub(&n.left) + blocks_sub(&n.right),
    }
}

fn height_sub(sub: &Sub) -> usize {
    match sub {
        Sub::Node(n) => 1 + height_sub(&n.left).max(height_sub(&n.right)),
        _ => 1,
    }
}

/// Uncounted content of a substructure, in original coordinates.
fn peek_sub(store: &BlockStore, sub: &Sub, shape: Shape) -> Vec<Point3> {
    match sub {
        Sub::Base(l) => l.peek_live(store).iter().map(|p| reflect(p, &shape.dirs)).collect(),
        Sub::Leaf(run) => store.peek_run(run),
        Sub::Node(n) => {
            let mut v = peek_sub(store, &n.left, shape);
            v.extend(peek_sub(store, &n.right, shape));
            v
        }
    }
}

fn sorted_ids(pts: &[Point3]) -> Vec<u64> {
    let mut v: Vec<u64> = pts.iter().map(|p| p.id).collect();
    v.sort_unstable();
    v
}

/// Check routing order, leaf sizes and that each node's one-sided
/// structures hold exactly its subtrees. Returns the violations found.
fn audit_sub(store: &BlockStore, sub: &Sub, shape: Shape, out: &mut Vec<String>) {
    let b = store.block_capacity();
    match sub {
        Sub::Base(_) => {}
        Sub::Leaf(run) => {
            if run.len > 2 * LEAF_BLOCKS * b {
                out.push(format!("leaf holds {} records, over twice the cutoff", run.len));
            }
        }
        Sub::Node(n) => {
            let ai = n.axis.index();
            let left = peek_sub(store, &n.left, shape);
            let right = peek_sub(store, &n.right, shape);
            if left.iter().any(|p| p.key(n.axis) > n.split) || right.iter().any(|p| p.key(n.axis) <= n.split) {
                out.push(format!("routing order broken at split {:?}", n.split));
            }
            if sorted_ids(&peek_sub(store, &n.lo_side, shape.reduce(ai, Dir::Up))) != sorted_ids(&left) {
                out.push(format!("lower-side structure differs from left subtree at {:?}", n.split));
            }
            if sorted_ids(&peek_sub(store, &n.hi_side, shape.reduce(ai, Dir::Down))) != sorted_ids(&right) {
                out.push(format!("upper-side structure differs from right subtree at {:?}", n.split));
            }
            audit_sub(store, &n.lo_side, shape.reduce(ai, Dir::Up), out);
            audit_sub(store, &n.hi_side, shape.reduce(ai, Dir::Down), out);
            audit_sub(store, &n.left, shape, out);
            audit_sub(store, &n.right, shape, out);
        }
    }
}

impl SidedSmallSet {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn stats(&self) -> &SidedStats {
        &self.stats
    }

    pub fn is_indexed(&self) -> bool {
        self.index.is_some()
    }

    /// Live points in unspecified order, without I/O.
    pub fn points(&self, store: &BlockStore) -> Vec<Point3> {
        peek_sub(store, &self.root, self.shape)
    }

    pub fn blocks(&self) -> usize {
        blocks_sub(&self.root)
    }

    /// Height of the tree over the first doubled axis (1 for a leaf or base).
    pub fn height(&self) -> usize {
        height_sub(&self.root)
    }

    /// Structural violations; empty when consistent with the live set.
    pub fn audit(&self, store: &BlockStore) -> Vec<String> {
        let mut out = Vec::new();
        audit_sub(store, &self.root, self.shape, &mut out);
        let stored = sorted_ids(&peek_sub(store, &self.root, self.shape));
        if stored.len() != self.len {
            out.push(format!("{} stored points, {} live", stored.len(), self.len));
        }
        if let Some(index) = &self.index {
            let mut live: Vec<u64> = index.keys().copied().collect();
            live.sort_unstable();
            if stored != live {
                out.push(format!("stored ids ({}) differ from indexed ids ({})", stored.len(), live.len()));
            }
        }
        out
    }

    pub fn destroy(self, store: &mut BlockStore) -> Result<()> {
        destroy_sub(store, self.root)
    }

    fn rebuild(&mut self, store: &mut BlockStore) -> Result<()> {
        // Collecting the live set is one scan of it.
        let b = store.block_capacity();
        store.charge_reads(self.len.div_ceil(b) as u64);
        let mut pts = peek_sub(store, &self.root, self.shape);
        pts.sort_unstable_by_key(|p| p.id);
        let old = std::mem::replace(&mut self.root, Sub::Leaf(Run::default()));
        destroy_sub(store, old)?;
        self.root = build_sub(store, pts, self.shape)?;
        self.built = self.len;
        self.stats.rebuilds += 1;
        Ok(())
    }

    fn note_updates(&mut self, n: usize) {
        self.stats.last_base_updates = n;
        self.stats.max_base_updates = self.stats.max_base_updates.max(n);
    }
}

/// Subtrees of at most this many blocks of points are stored as plain runs.
pub const LEAF_BLOCKS: usize = 4;

/// Largest set accepted for `shape`. Each doubled axis halves the sets
/// reaching the base, so the largest base ladder stays within the
/// boundary cap.
pub fn sided_cap(b: usize, shape: Shape) -> usize {
    boundary_cap(b) << shape.m()
}

/// Build with every one-sided axis facing up (`coord >= bound`).
pub fn ss_build(store: &mut BlockStore, points: &[Point3], sides: [u8; 3]) -> Result<SidedSmallSet> {
    ss_build_shaped(store, points, Shape::new(sides))
}

pub fn ss_build_shaped(store: &mut BlockStore, points: &[Point3], shape: Shape) -> Result<SidedSmallSet> {
    build_set(store, points, shape, true)
}

/// Build without an id map; deletions go through [`ss_remove`].
pub fn ss_build_unindexed(store: &mut BlockStore, points: &[Point3], shape: Shape) -> Result<SidedSmallSet> {
    build_set(store, points, shape, false)
}

fn build_set(store: &mut BlockStore, points: &[Point3], shape: Shape, indexed: bool) -> Result<SidedSmallSet> {
    if shape.sides.iter().any(|s| !(1..=2).contains(s)) {
        return Err(Error::Parameter(format!("sidedness {:?} outside {{1,2}}^3", shape.sides)));
    }
    let b = store.block_capacity();
    let cap = sided_cap(b, shape);
    if points.len() > cap {
        return Err(Error::Capacity(format!("{} points exceed the small-set cap {cap}", points.len())));
    }
    let mut ids: Vec<u64> = points.iter().map(|p| p.id).collect();
    ids.sort_unstable();
    if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
        return Err(Error::DuplicateId(w[0]));
    }
    let index = indexed.then(|| points.iter().map(|p| (p.id, *p)).collect());
    let root = build_sub(store, points.to_vec(), shape)?;
    Ok(SidedSmallSet { shape, b, root, index, len: points.len(), built: points.len(), stats: SidedStats::default() })
}

/// Live points inside `q`, sorted by id.
pub fn ss_query(store: &BlockStore, sss: &SidedSmallSet, q: &QueryBox) -> Result<Vec<Point3>> {
    if !sss.shape.admits(q) {
        return Err(Error::Parameter(format!(
            "query sides {:?} not supported by shape {:?}",
            q.sidedness(),
            sss.shape
        )));
    }
    let mut out = Vec::new();
    if q.is_empty() {
        return Ok(out);
    }
    query_sub(store, &sss.root, sss.shape, q, &mut out)?;
    out.sort_unstable_by_key(|p| p.id);
    Ok(out)
}

/// Unindexed sets trust the caller that `p.id` is fresh.
pub fn ss_insert(store: &mut BlockStore, sss: &mut SidedSmallSet, p: Point3) -> Result<()> {
    if let Some(index) = &mut sss.index {
        if index.contains_key(&p.id) {
            return Err(Error::DuplicateId(p.id));
        }
        index.insert(p.id, p);
    }
    sss.len += 1;
    let mut count = 0;
    let overflow = insert_sub(store, &mut sss.root, sss.shape, &p, &mut count)?;
    sss.note_updates(count);
    if overflow || sss.len >= 2 * sss.built.max(sss.b) {
        sss.rebuild(store)?;
    }
    Ok(())
}

/// Delete by id; needs an indexed set.
pub fn ss_delete(store: &mut BlockStore, sss: &mut SidedSmallSet, id: u64) -> Result<Point3> {
    let index = sss.index.as_ref().ok_or_else(|| Error::State("set has no id index".into()))?;
    let p = *index.get(&id).ok_or(Error::MissingId(id))?;
    ss_remove(store, sss, &p)?;
    Ok(p)
}

/// Delete the stored point `p`, which must match the inserted record.
pub fn ss_remove(store: &mut BlockStore, sss: &mut SidedSmallSet, p: &Point3) -> Result<()> {
    let mut count = 0;
    delete_sub(store, &mut sss.root, sss.shape, p, &mut count)?;
    if let Some(index) = &mut sss.index {
        index.remove(&p.id);
    }
    sss.len -= 1;
    sss.note_updates(count);
    if sss.built > sss.b && sss.len * 2 <= sss.built {
        sss.rebuild(store)?;
    }
    Ok(())
}
