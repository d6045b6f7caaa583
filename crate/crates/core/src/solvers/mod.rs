//! Solvers, their parameters and traces.

pub mod multilevel;
pub mod nock;
pub mod params;
pub mod sock;
pub mod steps;
pub mod trace;
pub mod vrscpg;

pub use multilevel::multilevel_sock_solve;
pub use nock::{nock_plan, nock_solve, StagePlan};
pub use params::{
    derive_multilevel_batches, derive_multilevel_params_theoretical,
    derive_nock_stage_batches_heuristic, derive_nock_stage_batches_theoretical,
    derive_sock_params_practical, derive_sock_params_theoretical, nock_mu_schedule,
    nock_stage_count, nock_theoretical_snapshots, MultiLevelParams, NockBatchPolicy, NockConfig,
    NockMode, SockParams, VrscPgParams,
};
pub use sock::{sock_solve, AveragingAudit, SolveOptions};
pub use steps::{coupling_point, gradient_step, mirror_step, snapshot_average, SnapshotAverager};
pub use trace::{SolverTrace, TraceRecord, CSV_HEADER};
pub use vrscpg::vrsc_pg_solve;
