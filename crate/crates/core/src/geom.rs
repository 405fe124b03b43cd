//! Points, query boxes, dominance and the per-axis total orders shared by
//! every structure in the crate.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Coordinates must stay strictly inside this magnitude so that axis
/// reflection (`-c`) and sentinel arithmetic never overflow.
pub const COORD_LIMIT: i64 = 1 << 61;

/// A point of the input set.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct Point3 {
    pub x: i64,
    pub y: i64,
    pub z: i64,
    pub id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }
}

impl Point3 {
    pub const fn new(x: i64, y: i64, z: i64, id: u64) -> Self {
        Point3 { x, y, z, id }
    }

    #[inline]
    pub fn coord(&self, axis: Axis) -> i64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    #[inline]
    pub fn set_coord(&mut self, axis: Axis, v: i64) {
        match axis {
            Axis::X => self.x = v,
            Axis::Y => self.y = v,
            Axis::Z => self.z = v,
        }
    }

    /// Lexicographic `(coordinate, id)` key; strict and total on one axis.
    #[inline]
    pub fn key(&self, axis: Axis) -> AxisKey {
        AxisKey(self.coord(axis), self.id)
    }

    pub fn coords(&self) -> [i64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn in_range(&self) -> bool {
        self.coords().iter().all(|c| c.abs() < COORD_LIMIT)
    }
}

/// `(coordinate, id)` pair ordering points along one axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AxisKey(pub i64, pub u64);

impl AxisKey {
    pub const MIN: AxisKey = AxisKey(i64::MIN, 0);
    pub const MAX: AxisKey = AxisKey(i64::MAX, u64::MAX);

    /// Smallest key carrying coordinate `c`.
    pub fn lowest(c: i64) -> Self {
        AxisKey(c, 0)
    }

    /// Largest key carrying coordinate `c`.
    pub fn highest(c: i64) -> Self {
        AxisKey(c, u64::MAX)
    }
}

/// `q` dominates `p` iff every coordinate of `q` is at least `p`'s.
#[inline]
pub fn dominates(q: &Point3, p: &Point3) -> bool {
    q.x >= p.x && q.y >= p.y && q.z >= p.z
}

/// Anything stored in a block that has a position in 3-space.
pub trait Spatial: Clone {
    fn coords(&self) -> [i64; 3];
    fn ident(&self) -> u64;
}

impl Spatial for Point3 {
    #[inline]
    fn coords(&self) -> [i64; 3] {
        [self.x, self.y, self.z]
    }
    #[inline]
    fn ident(&self) -> u64 {
        self.id
    }
}

/// One axis of a query box. `None` is an open side.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct Interval {
    pub lo: Option<i64>,
    pub hi: Option<i64>,
}

impl Interval {
    pub const OPEN: Interval = Interval { lo: None, hi: None };

    pub fn closed(lo: i64, hi: i64) -> Self {
        Interval { lo: Some(lo), hi: Some(hi) }
    }

    pub fn at_least(lo: i64) -> Self {
        Interval { lo: Some(lo), hi: None }
    }

    pub fn at_most(hi: i64) -> Self {
        Interval { lo: None, hi: Some(hi) }
    }

    #[inline]
    pub fn contains(&self, v: i64) -> bool {
        self.lo.map_or(true, |lo| v >= lo) && self.hi.map_or(true, |hi| v <= hi)
    }

    pub fn sides(&self) -> u8 {
        self.lo.is_some() as u8 + self.hi.is_some() as u8
    }

    pub fn lo_or_min(&self) -> i64 {
        self.lo.unwrap_or(i64::MIN)
    }

    pub fn hi_or_max(&self) -> i64 {
        self.hi.unwrap_or(i64::MAX)
    }

    pub fn is_empty(&self) -> bool {
        matches!((self.lo, self.hi), (Some(l), Some(h)) if l > h)
    }
}

/// An axis-aligned box with closed finite bounds and open sentinels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub struct QueryBox {
    pub x: Interval,
    pub y: Interval,
    pub z: Interval,
}

impl QueryBox {
    pub const ALL: QueryBox = QueryBox {
        x: Interval::OPEN,
        y: Interval::OPEN,
        z: Interval::OPEN,
    };

    pub fn new(x: Interval, y: Interval, z: Interval) -> Self {
        QueryBox { x, y, z }
    }

    /// `[x0,x1] x [y0,y1] x [z0,z1]`.
    pub fn closed(x: (i64, i64), y: (i64, i64), z: (i64, i64)) -> Self {
        QueryBox::new(
            Interval::closed(x.0, x.1),
            Interval::closed(y.0, y.1),
            Interval::closed(z.0, z.1),
        )
    }

    /// Box of all points dominating `q`.
    pub fn dominance(q: &Point3) -> Self {
        QueryBox::new(
            Interval::at_least(q.x),
            Interval::at_least(q.y),
            Interval::at_least(q.z),
        )
    }

    /// Canonical empty box used to pad query batches.
    pub fn empty() -> Self {
        QueryBox::new(Interval::closed(1, 0), Interval::OPEN, Interval::OPEN)
    }

    pub fn axis(&self, axis: Axis) -> Interval {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn axis_mut(&mut self, axis: Axis) -> &mut Interval {
        match axis {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
            Axis::Z => &mut self.z,
        }
    }

    #[inline]
    pub fn contains(&self, p: &Point3) -> bool {
        self.contains_coords(&p.coords())
    }

    #[inline]
    pub fn contains_coords(&self, c: &[i64; 3]) -> bool {
        self.x.contains(c[0]) && self.y.contains(c[1]) && self.z.contains(c[2])
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty() || self.y.is_empty() || self.z.is_empty()
    }

    /// `(b_x, b_y, b_z)`: finite bounds per axis.
    pub fn sidedness(&self) -> [u8; 3] {
        [self.x.sides(), self.y.sides(), self.z.sides()]
    }

    pub fn well_formed(&self) -> bool {
        Axis::ALL.iter().all(|&a| {
            let iv = self.axis(a);
            match (iv.lo, iv.hi) {
                (Some(l), Some(h)) => l <= h,
                _ => true,
            }
        })
    }
}

/// Order `a` and `b` by their key on `axis`.
pub fn cmp_on(axis: Axis) -> impl Fn(&Point3, &Point3) -> Ordering {
    move |a, b| a.key(axis).cmp(&b.key(axis))
}

/// Per-axis rank tables for a fixed point set. Ranks start at 1 so that
/// coordinate 0 lies strictly below every point.
#[derive(Clone, Debug, Default)]
pub struct RankMap {
    keys: [Vec<AxisKey>; 3],
}

impl RankMap {
    pub fn new(points: &[Point3]) -> Self {
        let mut keys: [Vec<AxisKey>; 3] = Default::default();
        for axis in Axis::ALL {
            let mut k: Vec<AxisKey> = points.iter().map(|p| p.key(axis)).collect();
            k.sort_unstable();
            keys[axis.index()] = k;
        }
        RankMap { keys }
    }

    pub fn len(&self) -> usize {
        self.keys[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Rank of a member point on every axis.
    pub fn rank_point(&self, p: &Point3) -> Point3 {
        let r = |axis: Axis| {
            let k = p.key(axis);
            self.keys[axis.index()].partition_point(|x| *x < k) as i64 + 1
        };
        Point3::new(r(Axis::X), r(Axis::Y), r(Axis::Z), p.id)
    }

    /// Smallest rank `r` such that a member has coordinate `>= c` iff its
    /// rank is `>= r`.
    pub fn lower_rank(&self, axis: Axis, c: i64) -> i64 {
        self.keys[axis.index()].partition_point(|k| k.0 < c) as i64 + 1
    }

    /// Map a dominance query point into rank space.
    pub fn rank_query(&self, q: &Point3) -> Point3 {
        Point3::new(
            self.lower_rank(Axis::X, q.x),
            self.lower_rank(Axis::Y, q.y),
            self.lower_rank(Axis::Z, q.z),
            q.id,
        )
    }

    /// Drop the id tie-breakers; query mapping needs coordinates only.
    pub fn into_coords(self) -> RankCoords {
        RankCoords { coords: self.keys.map(|k| k.into_iter().map(|k| k.0).collect()) }
    }
}

/// Sorted per-axis coordinates of a fixed point set.
#[derive(Clone, Debug, Default)]
pub struct RankCoords {
    coords: [Vec<i64>; 3],
}

impl RankCoords {
    /// Same as [`RankMap::lower_rank`].
    pub fn lower_rank(&self, axis: Axis, c: i64) -> i64 {
        self.coords[axis.index()].partition_point(|&k| k < c) as i64 + 1
    }

    pub fn rank_query(&self, q: &Point3) -> Point3 {
        Point3::new(
            self.lower_rank(Axis::X, q.x),
            self.lower_rank(Axis::Y, q.y),
            self.lower_rank(Axis::Z, q.z),
            q.id,
        )
    }
}

/// Replace every coordinate by its rank under `(coordinate, id)`.
pub fn rank_reduce(points: &[Point3]) -> Vec<Point3> {
    let map = RankMap::new(points);
    points.iter().map(|p| map.rank_point(p)).collect()
}

impl fmt::Display for Point3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.x, self.y, self.z, self.id)
    }
}

impl FromStr for Point3 {
    type Err = Error;

    /// Parses the text point format `x y z id`.
    fn from_str(s: &str) -> Result<Self> {
        let f: Vec<&str> = s.split_whitespace().collect();
        if f.len() != 4 {
            return Err(Error::Parse(format!("expected `x y z id`, got {s:?}")));
        }
        let c = |t: &str| t.parse::<i64>().map_err(|e| Error::Parse(format!("{t:?}: {e}")));
        let id = f[3]
            .parse::<u64>()
            .map_err(|e| Error::Parse(format!("{:?}: {e}", f[3])))?;
        Ok(Point3::new(c(f[0])?, c(f[1])?, c(f[2])?, id))
    }
}

/// Parse a whole text point file, skipping blank lines and `#` comments.
pub fn parse_points(text: &str) -> Result<Vec<Point3>> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::parse)
        .collect()
}
