//! Accelerated variance-reduced methods for finite-sum compositional problems
//!
//! `min_x (1/n1) sum_i F_i((1/n2) sum_j G_j(x)) + h(x)`
//!
//! and their multi-level generalization, with exact oracle accounting.

// `!(x > 0.0)` is deliberate: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimators;
pub mod levels;
pub mod problem;
pub mod problems;
pub mod prox;
pub mod rng;
pub mod solvers;
pub mod verify;

pub use error::{Error, Result};
pub use estimators::{BatchSizes, EstimatorOption, MultiLevelSnapshot, Snapshot};
pub use levels::{
    CompositionalLevels, LevelConstants, MeteredLevels, MultiLevelOracle, TwoLevelView,
};
pub use problem::{CompositionalOracle, Metered, OracleCounts, SmoothnessProfile};
pub use rng::{MiniBatch, RandomStream};
