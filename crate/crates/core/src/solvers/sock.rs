//! The accelerated snapshot loop and its two-level instantiation.

use std::time::Instant;

use log::info;
use nalgebra::DVector;

use crate::error::{check_len, Error, Result};
use crate::estimators::{estimate_gradient, BatchSizes, EstimatorOption, Snapshot};
use crate::problem::{
    eval_objective, CompositionalOracle, Metered, OracleCounts, SmoothnessProfile,
};
use crate::rng::RandomStream;

use super::params::SockParams;
use super::steps::{coupling_point, gradient_step, mirror_step, SnapshotAverager};
use super::trace::{SolverTrace, TraceRecord};

/// Run-level options shared by every solver.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SolveOptions {
    /// Optimal value used to fill the gap column.
    pub h_star: Option<f64>,
    /// Record wall-clock milliseconds. Off by default so that traces are
    /// reproducible byte for byte.
    pub timing: bool,
    /// Evaluate `H` at every averaged iterate and store the per-snapshot
    /// maximum next to `H(x~)`. Costs one uncounted objective per iteration.
    pub audit_averaging: bool,
}

/// `H` at the new snapshot against the largest `H` among the iterates it averages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AveragingAudit {
    pub stage: usize,
    pub snapshot: usize,
    pub averaged: f64,
    pub max_iterate: f64,
}

/// What the loop needs from a problem: snapshots, estimates and the prox.
pub(crate) trait LoopOracle {
    type Snap;
    fn take_snapshot(&mut self, point: &DVector<f64>) -> Result<Self::Snap>;
    fn estimate(&mut self, snap: &Self::Snap, x: &DVector<f64>, k: u64) -> Result<DVector<f64>>;
    fn prox(&mut self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>>;
    fn counts(&self) -> OracleCounts;
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LoopSettings {
    pub m: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub theta: f64,
    pub alpha: f64,
    pub s: usize,
    /// Smoothness used by the gradient step.
    pub l: f64,
}

impl LoopSettings {
    pub fn from_sock(p: &SockParams, l: f64) -> Self {
        LoopSettings {
            m: p.m,
            tau1: p.tau1,
            tau2: p.tau2,
            theta: p.theta,
            alpha: p.alpha,
            s: p.s,
            l,
        }
    }
}

/// Bookkeeping shared across the stages of one run.
pub(crate) struct Recorder<'f> {
    objective: &'f dyn Fn(&DVector<f64>) -> Result<f64>,
    h_star: Option<f64>,
    start: Option<Instant>,
    audit: Option<Vec<AveragingAudit>>,
    pub records: Vec<TraceRecord>,
}

impl<'f> Recorder<'f> {
    pub fn new(objective: &'f dyn Fn(&DVector<f64>) -> Result<f64>, opts: &SolveOptions) -> Self {
        Recorder {
            objective,
            h_star: opts.h_star,
            start: opts.timing.then(Instant::now),
            audit: opts.audit_averaging.then(Vec::new),
            records: Vec::new(),
        }
    }

    pub fn objective(&self, x: &DVector<f64>) -> Result<f64> {
        (self.objective)(x)
    }

    pub fn push(&mut self, stage: usize, snapshot: usize, counts: OracleCounts, objective: f64) {
        self.records.push(TraceRecord {
            stage,
            snapshot,
            evals_inner_value: counts.inner_value,
            evals_inner_jac: counts.inner_jac,
            evals_outer_grad: counts.outer_grad,
            evals_prox: counts.prox,
            objective,
            gap: self.h_star.map(|h| objective - h),
            elapsed_ms: self.start.map(|t| t.elapsed().as_secs_f64() * 1e3),
        });
    }

    pub fn record_point(
        &mut self,
        stage: usize,
        snapshot: usize,
        counts: OracleCounts,
        x: &DVector<f64>,
    ) -> Result<f64> {
        let h = self.objective(x)?;
        self.push(stage, snapshot, counts, h);
        Ok(h)
    }

    fn auditing(&self) -> bool {
        self.audit.is_some()
    }

    pub fn finish(self, final_point: DVector<f64>, failure: Option<Error>) -> SolverTrace {
        SolverTrace {
            records: self.records,
            final_point,
            failure,
            audit: self.audit.unwrap_or_default(),
        }
    }
}

fn all_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

pub(crate) fn check_start(dim: usize, x0: &DVector<f64>) -> Result<()> {
    check_len(dim, x0.len(), "starting point")?;
    if !all_finite(x0) {
        return Err(Error::InvalidParameter(
            "starting point is not finite".into(),
        ));
    }
    Ok(())
}

/// Runs `S` snapshots of `m` coupled iterations from `y = z = x~ = x0`.
///
/// On a non-finite iterate the failing snapshot is still recorded (with the
/// non-finite objective) before the error is returned. `point` always holds
/// the last finite snapshot point.
pub(crate) fn run_loop<D: LoopOracle>(
    driver: &mut D,
    set: &LoopSettings,
    x0: &DVector<f64>,
    stage: usize,
    rec: &mut Recorder<'_>,
    point: &mut DVector<f64>,
) -> Result<()> {
    let mut snap_point = x0.clone();
    let mut y = x0.clone();
    let mut z = x0.clone();
    *point = x0.clone();
    for s in 0..set.s {
        let snap = driver.take_snapshot(&snap_point)?;
        let mut avg = SnapshotAverager::new(set.theta);
        let mut worst = f64::NEG_INFINITY;
        for j in 0..set.m {
            let k = (s * set.m + j) as u64;
            let x = coupling_point(&z, &snap_point, &y, set.tau1, set.tau2)?;
            let grad = driver.estimate(&snap, &x, k)?;
            z = mirror_step(&z, &grad, set.alpha, |v, step| driver.prox(v, step))?;
            y = gradient_step(&x, &grad, set.l, |v, step| driver.prox(v, step))?;
            if !all_finite(&y) || !all_finite(&z) {
                let h = rec.objective(&y).unwrap_or(f64::NAN);
                rec.push(stage, s + 1, driver.counts(), h);
                return Err(Error::NonFiniteIterate {
                    snapshot: s,
                    inner: j,
                });
            }
            if rec.auditing() {
                worst = worst.max(rec.objective(&y)?);
            }
            avg.push(&y);
        }
        snap_point = avg.finish().expect("m >= 1");
        let h = rec.record_point(stage, s + 1, driver.counts(), &snap_point)?;
        if let Some(audit) = rec.audit.as_mut() {
            audit.push(AveragingAudit {
                stage,
                snapshot: s + 1,
                averaged: h,
                max_iterate: worst,
            });
        }
        *point = snap_point.clone();
    }
    Ok(())
}

/// Two-level problem driven through [`estimate_gradient`].
pub(crate) struct TwoLevelLoop<'a, O: ?Sized> {
    pub metered: Metered<'a, O>,
    pub option: EstimatorOption,
    pub batches: BatchSizes,
    pub stream: RandomStream,
}

impl<O: CompositionalOracle + ?Sized> LoopOracle for TwoLevelLoop<'_, O> {
    type Snap = Snapshot;

    fn take_snapshot(&mut self, point: &DVector<f64>) -> Result<Snapshot> {
        Snapshot::take(&mut self.metered, point)
    }

    fn estimate(&mut self, snap: &Snapshot, x: &DVector<f64>, k: u64) -> Result<DVector<f64>> {
        estimate_gradient(
            &mut self.metered,
            snap,
            x,
            self.option,
            self.batches,
            &self.stream,
            k,
        )
    }

    fn prox(&mut self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        self.metered.prox_h(v, step)
    }

    fn counts(&self) -> OracleCounts {
        self.metered.counts()
    }
}

pub(crate) fn suggest_option(params: &SockParams, n_outer: usize) {
    if params.option == EstimatorOption::OptionII {
        let ab = params
            .batch_inner_value
            .saturating_add(params.batch_inner_jac);
        if (n_outer as u64) <= ab.saturating_mul(10) {
            info!("n1 = {n_outer} is comparable to A + B = {ab}; option I is likely cheaper");
        }
    }
}

/// Solves a strongly convex two-level problem from `x0`.
///
/// Parameter errors are returned directly; failures during the run are stored
/// in [`SolverTrace::failure`] with the records gathered so far.
pub fn sock_solve<O: CompositionalOracle + ?Sized>(
    oracle: &O,
    profile: &SmoothnessProfile,
    x0: &DVector<f64>,
    params: &SockParams,
    stream: &RandomStream,
    opts: &SolveOptions,
) -> Result<SolverTrace> {
    params.validate_for(profile)?;
    check_start(oracle.dim_x(), x0)?;
    suggest_option(params, oracle.n_outer());
    let objective = |x: &DVector<f64>| eval_objective(&mut Metered::new(oracle), x);
    let mut rec = Recorder::new(&objective, opts);
    rec.record_point(0, 0, OracleCounts::default(), x0)?;
    let mut driver = TwoLevelLoop {
        metered: Metered::new(oracle),
        option: params.option,
        batches: params.batches(),
        stream: stream.clone(),
    };
    let set = LoopSettings::from_sock(params, profile.l);
    let mut point = x0.clone();
    let failure = run_loop(&mut driver, &set, x0, 0, &mut rec, &mut point).err();
    Ok(rec.finish(point, failure))
}
