//! Benchmark harness for the compositional solvers: instance and reference
//! files, single runs, and multi-seed sweeps with a checkpoint summary.

pub mod config;
pub mod files;
pub mod run;
pub mod sweep;

pub use config::BenchConfig;
pub use run::{execute, run_stream, Algo, Mode, Problem, RunSpec};
