//! Non-strongly convex problems through a sequence of regularized stages.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::problem::{
    eval_objective, CompositionalOracle, Metered, OracleCounts, Regularized, SmoothnessProfile,
};
use crate::rng::{tags, RandomStream};

use super::params::{nock_mu_schedule, nock_stage_params, NockConfig, SockParams};
use super::sock::{
    check_start, run_loop, suggest_option, LoopSettings, Recorder, SolveOptions, TwoLevelLoop,
};
use super::trace::SolverTrace;

/// Parameters used at one stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StagePlan {
    pub mu: f64,
    pub params: SockParams,
}

/// Per-stage `mu_t` and loop parameters, without running anything.
pub fn nock_plan<O: CompositionalOracle + ?Sized>(
    oracle: &O,
    profile: &SmoothnessProfile,
    config: &NockConfig,
) -> Result<Vec<StagePlan>> {
    profile.validate()?;
    if !(config.mu0 > 0.0) || !config.mu0.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "mu0 must be positive, got {}",
            config.mu0
        )));
    }
    if config.stages == 0 {
        return Err(Error::InvalidParameter("need at least one stage".into()));
    }
    let n = oracle.n_outer().max(oracle.n_inner());
    nock_mu_schedule(config.mu0, config.stages)
        .into_iter()
        .map(|mu| {
            let params = nock_stage_params(profile.l, mu, n, config)?;
            Ok(StagePlan { mu, params })
        })
        .collect()
}

/// Runs stage `t` on `H(x) + (mu_t/2)||x - x0||^2` from the previous stage's
/// output, halving `mu_t` after each stage.
///
/// Records hold the objective of the original problem; the initial record is
/// emitted once, at stage 0.
pub fn nock_solve<O: CompositionalOracle + ?Sized>(
    oracle: &O,
    profile: &SmoothnessProfile,
    x0: &DVector<f64>,
    config: &NockConfig,
    stream: &RandomStream,
    opts: &SolveOptions,
) -> Result<SolverTrace> {
    let plan = nock_plan(oracle, profile, config)?;
    check_start(oracle.dim_x(), x0)?;
    let objective = |x: &DVector<f64>| eval_objective(&mut Metered::new(oracle), x);
    let mut rec = Recorder::new(&objective, opts);
    rec.record_point(0, 0, OracleCounts::default(), x0)?;
    let mut counts = OracleCounts::default();
    let mut x_t = x0.clone();
    for (t, stage) in plan.iter().enumerate() {
        suggest_option(&stage.params, oracle.n_outer());
        let reg = Regularized::new(oracle, stage.mu, x0.clone())?;
        let mut driver = TwoLevelLoop {
            metered: Metered::with_counts(&reg, counts),
            option: stage.params.option,
            batches: stage.params.batches(),
            stream: stream.child(tags::STAGE, t as u64),
        };
        let set = LoopSettings::from_sock(&stage.params, profile.l + stage.mu);
        let mut point = x_t.clone();
        let outcome = run_loop(&mut driver, &set, &x_t, t, &mut rec, &mut point);
        counts = driver.metered.counts();
        if let Err(e) = outcome {
            return Ok(rec.finish(point, Some(e)));
        }
        x_t = point;
    }
    Ok(rec.finish(x_t, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimators::EstimatorOption;
    use crate::problem::IdentityQuadratic;
    use crate::solvers::params::{NockBatchPolicy, NockMode};

    fn config(stages: usize) -> NockConfig {
        NockConfig {
            mu0: 1.0,
            stages,
            mode: NockMode::Practical,
            batches: NockBatchPolicy::Capped,
            option: EstimatorOption::OptionII,
            snapshots: None,
        }
    }

    #[test]
    fn plan_halves_mu_each_stage() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.1);
        let plan = nock_plan(&oracle, &oracle.profile(), &config(4)).unwrap();
        let mus: Vec<f64> = plan.iter().map(|p| p.mu).collect();
        assert_eq!(mus, vec![1.0, 0.5, 0.25, 0.125]);
        assert!(plan.iter().all(|p| p.params.s == 3));
        assert!(plan.windows(2).all(|w| w[1].params.m >= w[0].params.m));
    }

    #[test]
    fn records_per_stage_and_counts_carry_over() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.1);
        let x0 = DVector::from_vec(vec![2.0, -1.0]);
        let trace = nock_solve(
            &oracle,
            &oracle.profile(),
            &x0,
            &config(3),
            &RandomStream::new(5),
            &Default::default(),
        )
        .unwrap();
        assert!(trace.is_ok());
        assert_eq!(trace.records.len(), 1 + 3 * 3);
        let stages: Vec<usize> = trace.records.iter().map(|r| r.stage).collect();
        assert_eq!(stages, vec![0, 0, 0, 0, 1, 1, 1, 2, 2, 2]);
        for w in trace.records.windows(2) {
            assert!(w[1].counts().dominates(&w[0].counts()));
        }
    }

    #[test]
    fn rejects_nonpositive_mu0() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.1);
        let mut c = config(2);
        c.mu0 = 0.0;
        assert!(nock_plan(&oracle, &oracle.profile(), &c).is_err());
    }
}
