//! Per-snapshot measurements.

use std::fmt::Write as _;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::problem::OracleCounts;

use super::sock::AveragingAudit;

pub const CSV_HEADER: &str =
    "stage,snapshot,evals_inner_value,evals_inner_jac,evals_outer_grad,evals_prox,objective,gap,elapsed_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    /// Stage of the non-strongly convex reduction, 0 otherwise.
    pub stage: usize,
    /// Snapshot index within the stage; 0 is the starting point.
    pub snapshot: usize,
    pub evals_inner_value: u64,
    pub evals_inner_jac: u64,
    pub evals_outer_grad: u64,
    pub evals_prox: u64,
    pub objective: f64,
    pub gap: Option<f64>,
    pub elapsed_ms: Option<f64>,
}

impl TraceRecord {
    /// Headline oracle units of this record.
    pub fn oracle_units(&self) -> u64 {
        self.evals_inner_value + self.evals_inner_jac + self.evals_outer_grad
    }

    pub fn counts(&self) -> OracleCounts {
        OracleCounts {
            inner_value: self.evals_inner_value,
            inner_jac: self.evals_inner_jac,
            outer_grad: self.evals_outer_grad,
            outer_value: 0,
            prox: self.evals_prox,
        }
    }

    /// One CSV line without terminator. Reals use the shortest representation
    /// that parses back to the same value.
    pub fn to_csv_row(&self) -> String {
        let mut row = String::new();
        let opt = |v: Option<f64>| v.map(|x| format!("{x:?}")).unwrap_or_default();
        write!(
            row,
            "{},{},{},{},{},{},{:?},{},{}",
            self.stage,
            self.snapshot,
            self.evals_inner_value,
            self.evals_inner_jac,
            self.evals_outer_grad,
            self.evals_prox,
            self.objective,
            opt(self.gap),
            opt(self.elapsed_ms)
        )
        .expect("writing to a String cannot fail");
        row
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverTrace {
    pub records: Vec<TraceRecord>,
    pub final_point: DVector<f64>,
    /// Set when the run stopped early; the records up to the failure are kept.
    pub failure: Option<Error>,
    /// Filled only when averaging audits were requested.
    pub audit: Vec<AveragingAudit>,
}

impl SolverTrace {
    pub fn last(&self) -> &TraceRecord {
        self.records.last().expect("trace has an initial record")
    }

    pub fn is_ok(&self) -> bool {
        self.failure.is_none()
    }

    pub fn into_result(self) -> crate::Result<SolverTrace> {
        match self.failure.clone() {
            Some(e) => Err(e),
            None => Ok(self),
        }
    }

    /// Header plus one row per record, LF terminated.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(64 * (self.records.len() + 1));
        out.push_str(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.to_csv_row());
            out.push('\n');
        }
        out
    }

    /// Oracle units at which the gap first drops to `target`, if it does.
    pub fn units_to_gap(&self, target: f64) -> Option<u64> {
        self.records
            .iter()
            .find(|r| r.gap.is_some_and(|g| g <= target))
            .map(TraceRecord::oracle_units)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_row_roundtrips_reals() {
        let r = TraceRecord {
            stage: 0,
            snapshot: 3,
            evals_inner_value: 10,
            evals_inner_jac: 20,
            evals_outer_grad: 30,
            evals_prox: 4,
            objective: 0.1 + 0.2,
            gap: Some(1e-17),
            elapsed_ms: None,
        };
        let row = r.to_csv_row();
        assert_eq!(row, "0,3,10,20,30,4,0.30000000000000004,1e-17,");
        let fields: Vec<_> = row.split(',').collect();
        assert_eq!(fields[6].parse::<f64>().unwrap(), 0.1 + 0.2);
        assert_eq!(r.oracle_units(), 60);
    }
}
