//! Proximal variance-reduced baseline without acceleration.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::estimators::{estimate_gradient, BatchSizes, EstimatorOption, Snapshot};
use crate::problem::{
    eval_objective, CompositionalOracle, Metered, OracleCounts, SmoothnessProfile,
};
use crate::rng::RandomStream;

use super::params::VrscPgParams;
use super::sock::{check_start, Recorder, SolveOptions};
use super::trace::SolverTrace;

/// Each epoch takes a full snapshot at the current point, then runs
/// `x <- prox_{eta h}(x - eta g)` with the option II estimate `g`; the last
/// iterate becomes the next snapshot.
pub fn vrsc_pg_solve<O: CompositionalOracle + ?Sized>(
    oracle: &O,
    profile: &SmoothnessProfile,
    x0: &DVector<f64>,
    params: &VrscPgParams,
    stream: &RandomStream,
    opts: &SolveOptions,
) -> Result<SolverTrace> {
    params.validate()?;
    profile.validate()?;
    check_start(oracle.dim_x(), x0)?;
    let objective = |x: &DVector<f64>| eval_objective(&mut Metered::new(oracle), x);
    let mut rec = Recorder::new(&objective, opts);
    rec.record_point(0, 0, OracleCounts::default(), x0)?;
    let batches = BatchSizes {
        inner_value: params.batch_inner,
        inner_jac: params.batch_inner,
        outer: params.batch_outer,
    };
    let mut m = Metered::new(oracle);
    let mut x = x0.clone();
    let mut last_good = x0.clone();
    for epoch in 0..params.epochs {
        let run = (|| -> Result<()> {
            let snap = Snapshot::take(&mut m, &x)?;
            for j in 0..params.inner_len {
                let k = (epoch * params.inner_len + j) as u64;
                let g = estimate_gradient(
                    &mut m,
                    &snap,
                    &x,
                    EstimatorOption::OptionII,
                    batches,
                    stream,
                    k,
                )?;
                x = m.prox_h(&(&x - g * params.eta), params.eta)?;
                if x.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteIterate {
                        snapshot: epoch,
                        inner: j,
                    });
                }
            }
            Ok(())
        })();
        if let Err(e) = run {
            if matches!(e, Error::NonFiniteIterate { .. }) {
                let h = rec.objective(&x).unwrap_or(f64::NAN);
                rec.push(0, epoch + 1, m.counts(), h);
            }
            return Ok(rec.finish(last_good, Some(e)));
        }
        rec.record_point(0, epoch + 1, m.counts(), &x)?;
        last_good = x.clone();
    }
    Ok(rec.finish(x, None))
}
