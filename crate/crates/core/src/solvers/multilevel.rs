//! The accelerated loop with the multi-level estimator.

use nalgebra::DVector;

use crate::error::Result;
use crate::estimators::{multilevel_gradient, MultiLevelSnapshot};
use crate::levels::{eval_multilevel_objective, validate_levels, MeteredLevels, MultiLevelOracle};
use crate::problem::{OracleCounts, SmoothnessProfile};
use crate::rng::RandomStream;

use super::params::MultiLevelParams;
use super::sock::{check_start, run_loop, LoopOracle, LoopSettings, Recorder, SolveOptions};
use super::trace::SolverTrace;

struct MultiLevelLoop<'a, 'p, O: ?Sized> {
    metered: MeteredLevels<'a, O>,
    params: &'p MultiLevelParams,
    stream: RandomStream,
}

impl<O: MultiLevelOracle + ?Sized> LoopOracle for MultiLevelLoop<'_, '_, O> {
    type Snap = MultiLevelSnapshot;

    fn take_snapshot(&mut self, point: &DVector<f64>) -> Result<MultiLevelSnapshot> {
        MultiLevelSnapshot::take(&mut self.metered, point)
    }

    fn estimate(
        &mut self,
        snap: &MultiLevelSnapshot,
        x: &DVector<f64>,
        k: u64,
    ) -> Result<DVector<f64>> {
        multilevel_gradient(
            &mut self.metered,
            snap,
            x,
            &self.params.value_batches,
            &self.params.jac_batches,
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

/// Solves a strongly convex multi-level problem from `x0`.
///
/// Level values are counted as inner values, Jacobians below the last level
/// as inner Jacobians and last-level Jacobians as outer gradients.
pub fn multilevel_sock_solve<O: MultiLevelOracle + ?Sized>(
    oracle: &O,
    profile: &SmoothnessProfile,
    x0: &DVector<f64>,
    params: &MultiLevelParams,
    stream: &RandomStream,
    opts: &SolveOptions,
) -> Result<SolverTrace> {
    validate_levels(oracle)?;
    params.validate_for(oracle.levels(), profile)?;
    check_start(oracle.dim(0), x0)?;
    let objective =
        |x: &DVector<f64>| eval_multilevel_objective(&mut MeteredLevels::new(oracle), x);
    let mut rec = Recorder::new(&objective, opts);
    rec.record_point(0, 0, OracleCounts::default(), x0)?;
    let mut driver = MultiLevelLoop {
        metered: MeteredLevels::new(oracle),
        params,
        stream: stream.clone(),
    };
    let set = LoopSettings {
        m: params.m,
        tau1: params.tau1,
        tau2: params.tau2,
        theta: params.theta,
        alpha: params.alpha,
        s: params.s,
        l: profile.l,
    };
    let mut point = x0.clone();
    let failure = run_loop(&mut driver, &set, x0, 0, &mut rec, &mut point).err();
    Ok(rec.finish(point, failure))
}
