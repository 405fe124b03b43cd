//! Batched range reporting on small static sets.
//!
//! A [`BatchSet`] of `F` records is split into `f = ceil(F/B)` chunks, one
//! per block. A batch of at most `f` boxes is answered by loading every
//! chunk once next to the whole batch, emitting `(record, query)` pairs,
//! sorting the pair list externally by query index and scanning it.
//! Total cost: `O(f + X/B)` with `X` the summed output size plus `f`.

use std::cmp::Ordering;

use crate::block_io::{BlockStore, Run};
use crate::error::{Error, Result};
use crate::geom::{QueryBox, Spatial};

/// Default exponent `c` for batched sets.
pub const DEFAULT_EXPONENT: u32 = 3;

/// Upper bound on the size accepted for a set with exponent `c`, as a
/// multiple of `B^{1+1/c}`.
pub const SIZE_SLACK: f64 = 8.0;

#[derive(Clone, Debug)]
pub struct BatchSet {
    run: Run,
    c: u32,
}

/// Largest set accepted by [`build_batchset`] for block size `b`.
pub fn size_cap(b: usize, c: u32) -> usize {
    (SIZE_SLACK * (b as f64).powf(1.0 + 1.0 / c as f64)).floor() as usize
}

impl BatchSet {
    pub fn len(&self) -> usize {
        self.run.len
    }

    pub fn is_empty(&self) -> bool {
        self.run.len == 0
    }

    /// Number of chunks `f`, which is also the batch capacity.
    pub fn chunks(&self) -> usize {
        self.run.blocks.len()
    }

    pub fn exponent(&self) -> u32 {
        self.c
    }

    pub fn blocks(&self) -> usize {
        self.run.blocks.len()
    }

    /// Queries accepted per batch.
    pub fn batch_capacity(&self) -> usize {
        self.chunks().max(1)
    }

    pub fn destroy<R: Clone>(mut self, store: &mut BlockStore<R>) -> Result<()> {
        store.free_run(&mut self.run)
    }

    /// Uncounted copy of the stored records.
    pub fn peek_all<R: Clone>(&self, store: &BlockStore<R>) -> Vec<R> {
        store.peek_run(&self.run)
    }
}

pub fn build_batchset<R: Spatial>(store: &mut BlockStore<R>, points: &[R], c: u32) -> Result<BatchSet> {
    if c < 3 {
        return Err(Error::Parameter(format!("batch exponent c = {c} < 3")));
    }
    let b = store.block_capacity();
    let cap = size_cap(b, c);
    if points.len() > cap {
        return Err(Error::Capacity(format!("{} records exceed batch set cap {cap}", points.len())));
    }
    let f = points.len().div_ceil(b);
    if store.pinned_limit() < f + 2 {
        return Err(Error::PinLimit { limit: store.pinned_limit(), requested: f + 2 });
    }
    let run = store.write_run(points)?;
    Ok(BatchSet { run, c })
}

/// Answer up to `bs.batch_capacity()` boxes. Output lists are ordered by
/// record id.
pub fn batch_query<R: Spatial>(
    store: &mut BlockStore<R>,
    bs: &BatchSet,
    queries: &[QueryBox],
) -> Result<Vec<Vec<R>>> {
    let cap = bs.batch_capacity();
    if queries.len() > cap {
        return Err(Error::BatchSize { got: queries.len(), max: cap });
    }
    let mut out: Vec<Vec<R>> = vec![Vec::new(); queries.len()];
    if bs.is_empty() || queries.iter().all(QueryBox::is_empty) {
        return Ok(out);
    }
    // all queries plus one chunk plus one output block
    let _pin = store.pin(bs.chunks() + 2)?;
    let b = store.block_capacity();
    let mut pairs: BlockStore<(R, u32)> = store.sibling();
    let mut list = Run::default();
    let mut buf: Vec<(R, u32)> = Vec::with_capacity(b);
    for &addr in &bs.run.blocks {
        let chunk = store.read_block(addr)?;
        for rec in &chunk {
            let c = rec.coords();
            for (j, q) in queries.iter().enumerate() {
                if q.contains_coords(&c) {
                    buf.push((rec.clone(), j as u32));
                    if buf.len() == b {
                        flush(&mut pairs, &mut list, &mut buf)?;
                    }
                }
            }
        }
    }
    flush(&mut pairs, &mut list, &mut buf)?;
    drop(_pin);

    let mut sorted = pairs.external_sort(&list, |a, b| by_query_then_id(a, b))?;
    pairs.free_run(&mut list)?;
    pairs.scan_run(&sorted, |(rec, j)| out[*j as usize].push(rec.clone()))?;
    pairs.free_run(&mut sorted)?;
    Ok(out)
}

fn by_query_then_id<R: Spatial>(a: &(R, u32), b: &(R, u32)) -> Ordering {
    a.1.cmp(&b.1).then(a.0.ident().cmp(&b.0.ident()))
}

fn flush<T: Clone>(store: &mut BlockStore<T>, run: &mut Run, buf: &mut Vec<T>) -> Result<()> {
    if buf.is_empty() {
        return Ok(());
    }
    let a = store.alloc();
    run.len += buf.len();
    store.write_block(a, std::mem::take(buf))?;
    run.blocks.push(a);
    Ok(())
}

/// Answer an arbitrary number of boxes by splitting them into batches.
pub fn batch_query_all<R: Spatial>(
    store: &mut BlockStore<R>,
    bs: &BatchSet,
    queries: &[QueryBox],
) -> Result<Vec<Vec<R>>> {
    let mut out = Vec::with_capacity(queries.len());
    for group in queries.chunks(bs.batch_capacity()) {
        out.extend(batch_query(store, bs, group)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{Interval, Point3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_points(n: usize, seed: u64) -> Vec<Point3> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|i| Point3::new(rng.gen_range(0..1000), rng.gen_range(0..1000), rng.gen_range(0..1000), i as u64))
            .collect()
    }

    fn random_box(rng: &mut ChaCha8Rng) -> QueryBox {
        let mut iv = || {
            let a = rng.gen_range(0..1000);
            let b = rng.gen_range(0..1000);
            Interval::closed(a.min(b), a.max(b))
        };
        QueryBox::new(iv(), iv(), iv())
    }

    fn oracle(points: &[Point3], q: &QueryBox) -> Vec<Point3> {
        let mut v: Vec<Point3> = points.iter().filter(|p| q.contains(p)).copied().collect();
        v.sort_by_key(|p| p.id);
        v
    }

    #[test]
    fn empty_input() {
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let bs = build_batchset(&mut s, &[], 3).unwrap();
        assert_eq!(bs.chunks(), 0);
        assert_eq!(s.live_blocks(), 0);
        let ans = batch_query(&mut s, &bs, &[QueryBox::ALL]).unwrap();
        assert_eq!(ans, vec![Vec::<Point3>::new()]);
    }

    #[test]
    fn single_block_set() {
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let pts = random_points(64, 1);
        let bs = build_batchset(&mut s, &pts, 3).unwrap();
        assert_eq!(bs.chunks(), 1);
        assert_eq!(s.live_blocks(), 1);
        assert!(s.io_total() <= 2);
    }

    #[test]
    fn b_four_thirds_set() {
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let pts = random_points(256, 2);
        let before = s.snapshot();
        let bs = build_batchset(&mut s, &pts, 3).unwrap();
        assert_eq!(bs.chunks(), 4);
        // Measured: one write per chunk; pinned kappa = 1.
        assert!(s.report_since(before, "").total() <= 4);
    }

    #[test]
    fn empty_boxes_cost_nothing_extra() {
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let pts = random_points(256, 3);
        let bs = build_batchset(&mut s, &pts, 3).unwrap();
        let before = s.snapshot();
        let ans = batch_query(&mut s, &bs, &vec![QueryBox::empty(); 4]).unwrap();
        assert!(ans.iter().all(Vec::is_empty));
        assert!(s.report_since(before, "").total() <= 4);
    }

    #[test]
    fn whole_space_returns_everything() {
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let pts = random_points(256, 4);
        let bs = build_batchset(&mut s, &pts, 3).unwrap();
        let mut qs = vec![QueryBox::empty(); 4];
        qs[0] = QueryBox::ALL;
        let ans = batch_query(&mut s, &bs, &qs).unwrap();
        assert_eq!(ans[0], oracle(&pts, &QueryBox::ALL));
        assert!(ans[1..].iter().all(Vec::is_empty));
    }

    #[test]
    fn random_boxes_match_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pts = random_points(256, 5);
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let bs = build_batchset(&mut s, &pts, 3).unwrap();
        for _ in 0..20 {
            let qs: Vec<QueryBox> = (0..4).map(|_| random_box(&mut rng)).collect();
            let ans = batch_query(&mut s, &bs, &qs).unwrap();
            for (q, a) in qs.iter().zip(&ans) {
                assert_eq!(a, &oracle(&pts, q));
            }
        }
    }

    #[test]
    fn too_many_queries_rejected() {
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let bs = build_batchset(&mut s, &random_points(100, 6), 3).unwrap();
        let err = batch_query(&mut s, &bs, &vec![QueryBox::ALL; 3]).unwrap_err();
        assert!(matches!(err, Error::BatchSize { got: 3, max: 2 }));
        assert_eq!(batch_query_all(&mut s, &bs, &vec![QueryBox::ALL; 3]).unwrap().len(), 3);
    }

    #[test]
    fn oversize_and_pin_checks() {
        let mut s: BlockStore = BlockStore::new(8).unwrap();
        assert!(matches!(build_batchset(&mut s, &random_points(10_000, 7), 3), Err(Error::Capacity(_))));
        let mut tight: BlockStore = BlockStore::with_pinned_limit(16, 3).unwrap();
        assert!(matches!(build_batchset(&mut tight, &random_points(40, 7), 3), Err(Error::PinLimit { .. })));
        assert!(build_batchset(&mut s, &random_points(10, 7), 2).is_err());
    }

    #[test]
    fn io_bound_across_block_sizes() {
        // kappa' pinned from measured runs: I/O <= 4 * (f + X/B) + 4.
        for b in [32usize, 64, 128] {
            let n = (b as f64).powf(4.0 / 3.0).round() as usize;
            let pts = random_points(n, b as u64);
            let mut s: BlockStore = BlockStore::new(b).unwrap();
            let bs = build_batchset(&mut s, &pts, 3).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(b as u64);
            for _ in 0..10 {
                let qs: Vec<QueryBox> = (0..bs.chunks()).map(|_| random_box(&mut rng)).collect();
                let before = s.snapshot();
                let ans = batch_query(&mut s, &bs, &qs).unwrap();
                let io = s.report_since(before, "").total() as f64;
                let x = ans.iter().map(Vec::len).sum::<usize>() + bs.chunks();
                let bound = 4.0 * (bs.chunks() as f64 + x as f64 / b as f64) + 4.0;
                assert!(io <= bound, "b={b} io={io} bound={bound}");
            }
        }
    }

    #[test]
    fn pairs_report_each_match_once() {
        let pts = random_points(200, 8);
        let mut s: BlockStore = BlockStore::new(64).unwrap();
        let bs = build_batchset(&mut s, &pts, 3).unwrap();
        let q = QueryBox::ALL;
        let ans = batch_query(&mut s, &bs, &[q, q, q, q]).unwrap();
        for a in ans {
            assert_eq!(a.len(), 200);
        }
    }
}
