//! Dynamic three-dimensional orthogonal range reporting in a simulated
//! external-memory (I/O) model.
//!
//! The structures are layered bottom-up:
//!
//! * [`block_io`]: block store with exact read/write accounting.
//! * [`batch_engine`]: static batched range reporting over small sets.
//! * [`tab_boundary`]: t-approximate boundaries and their dominance lists.
//! * [`small_dominance`]: dynamic dominance reporting for small sets.
//! * [`sided_small`]: (b_x, b_y, b_z)-sided queries on small sets.
//! * [`ext_three_sided`]: priority-search-tree variant for (2,1,2)-sided
//!   queries over small integer z.
//! * [`range_reporting_3d`]: z-range tree and the full 3D structure.
//! * [`oracle_bench`]: brute-force oracle, workloads, verification and
//!   I/O scaling reports.

pub mod batch_engine;
pub mod block_io;
pub mod sided_small;
pub mod small_dominance;
pub mod tab_boundary;
pub mod error;
pub mod ext_three_sided;
pub mod geom;
pub mod oracle_bench;
pub mod range_reporting_3d;

pub use batch_engine::{batch_query, build_batchset, BatchSet};
pub use block_io::{BlockAddr, BlockStore, IoReport, IoSnapshot, Run};
pub use error::{Error, Result};
pub use geom::{dominates, Axis, AxisKey, Interval, Point3, QueryBox};
pub use oracle_bench::{
    generate, oracle_query, run_scaling, run_verify, Dist, Op, ScalingParams, ScalingReport, VerifyReport, Workload,
    WorkloadParams,
};
pub use range_reporting_3d::{Config, Full3D};
