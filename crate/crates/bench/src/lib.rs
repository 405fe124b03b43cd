//! Fixtures shared by the criterion benchmarks under `benches/`.

use xm3d::{generate, Dist, Op, Point3, WorkloadParams};

/// The initial inserts of a seeded workload, as a point set.
pub fn points(n: usize, dist: Dist, seed: u64) -> Vec<Point3> {
    generate(WorkloadParams { mixed: 0, ..WorkloadParams::new(n, dist, seed) })
        .ops
        .into_iter()
        .filter_map(|o| match o {
            Op::Insert(p) => Some(p),
            _ => None,
        })
        .collect()
}
