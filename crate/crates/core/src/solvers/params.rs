//! Run parameters and their derivation from problem constants.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{BatchSizes, EstimatorOption};
use crate::levels::LevelConstants;
use crate::problem::SmoothnessProfile;

/// Largest batch size accepted from a formula; beyond this `f64` no longer
/// represents every integer.
pub const MAX_BATCH: f64 = 9_007_199_254_740_992.0;

/// Parameters of the accelerated loop with a two-level estimator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SockParams {
    pub m: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub theta: f64,
    pub alpha: f64,
    /// Number of snapshots (outer loops).
    pub s: usize,
    pub batch_inner_value: u64,
    pub batch_inner_jac: u64,
    /// Ignored by option I.
    pub batch_outer: u64,
    pub option: EstimatorOption,
}

pub(crate) fn check_schedule(
    m: usize,
    tau1: f64,
    tau2: f64,
    theta: f64,
    alpha: f64,
    s: usize,
) -> Result<()> {
    if m == 0 || s == 0 {
        return Err(Error::InvalidParameter(format!(
            "inner length and snapshot count must be positive, got m = {m}, S = {s}"
        )));
    }
    if !(tau1 > 0.0 && tau1 < 1.0) || !(0.0..1.0).contains(&tau2) {
        return Err(Error::InvalidParameter(format!(
            "coupling weights must lie in (0, 1), got {tau1}, {tau2}"
        )));
    }
    if tau1 + tau2 > 1.0 + 1e-15 {
        return Err(Error::InvalidParameter(format!(
            "tau1 + tau2 = {} exceeds 1",
            tau1 + tau2
        )));
    }
    if !(theta > 1.0) || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "theta must exceed 1, got {theta}"
        )));
    }
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    Ok(())
}

/// Checks the profile-dependent conditions: `alpha tau1 <= 1/(3L)` and
/// `m < (3/2) L/mu`, warning when `L/mu < 4`.
pub(crate) fn check_against_profile(
    m: usize,
    tau1: f64,
    alpha: f64,
    profile: &SmoothnessProfile,
) -> Result<()> {
    profile.validate()?;
    if !profile.is_strongly_convex() {
        return Err(Error::NotStronglyConvex);
    }
    if alpha * tau1 > (1.0 + 1e-12) / (3.0 * profile.l) {
        return Err(Error::InvalidParameter(format!(
            "alpha * tau1 = {} exceeds 1/(3L) = {}",
            alpha * tau1,
            1.0 / (3.0 * profile.l)
        )));
    }
    let kappa = profile.kappa();
    if m as f64 >= 1.5 * kappa {
        return Err(Error::InvalidParameter(format!(
            "inner length m = {m} must stay below 1.5 L/mu = {}",
            1.5 * kappa
        )));
    }
    if kappa < 4.0 {
        warn!("condition number {kappa} is below 4; m = {m} exceeds L/(2 mu)");
    }
    Ok(())
}

impl SockParams {
    pub fn validate(&self) -> Result<()> {
        check_schedule(self.m, self.tau1, self.tau2, self.theta, self.alpha, self.s)?;
        if self.batch_inner_value == 0 || self.batch_inner_jac == 0 {
            return Err(Error::InvalidParameter(
                "inner batch sizes must be positive".into(),
            ));
        }
        if self.option == EstimatorOption::OptionII && self.batch_outer == 0 {
            return Err(Error::InvalidParameter(
                "outer batch size must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_for(&self, profile: &SmoothnessProfile) -> Result<()> {
        self.validate()?;
        check_against_profile(self.m, self.tau1, self.alpha, profile)
    }

    pub fn batches(&self) -> BatchSizes {
        BatchSizes {
            inner_value: self.batch_inner_value,
            inner_jac: self.batch_inner_jac,
            outer: self.batch_outer,
        }
    }

    /// Oracle units consumed by a full run:
    /// `S (n1 + 2 n2 + m (2A + 2B + n1))` for option I and
    /// `S (n1 + 2 n2 + 2m (A + B + C))` for option II.
    pub fn oracle_units(&self, n_outer: usize, n_inner: usize) -> u64 {
        let (n1, n2) = (n_outer as u64, n_inner as u64);
        let (a, b, c) = (
            self.batch_inner_value,
            self.batch_inner_jac,
            self.batch_outer,
        );
        let per_iter = match self.option {
            EstimatorOption::OptionI => 2 * a + 2 * b + n1,
            EstimatorOption::OptionII => 2 * (a + b + c),
        };
        self.s as u64 * (n1 + 2 * n2 + self.m as u64 * per_iter)
    }
}

/// `ceil(value)` as a batch size, with zero clamped to one.
pub fn batch_from(value: f64) -> Result<u64> {
    if !value.is_finite() || value < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "batch size formula produced {value}"
        )));
    }
    let v = value.ceil();
    if v > MAX_BATCH {
        return Err(Error::InvalidParameter(format!(
            "batch size {v:e} is too large to sample"
        )));
    }
    Ok((v as u64).max(1))
}

/// `m = ceil((1/2) sqrt(L/mu))`.
pub fn inner_length(l: f64, mu: f64) -> usize {
    (0.5 * (l / mu).sqrt()).ceil().max(1.0) as usize
}

fn strongly_convex(profile: &SmoothnessProfile) -> Result<()> {
    profile.validate()?;
    if profile.is_strongly_convex() {
        Ok(())
    } else {
        Err(Error::NotStronglyConvex)
    }
}

/// Parameters with the guarantee `E[H(x~^S) - H*] <= 11 (12/13)^S (H(x0) - H*)`.
pub fn derive_sock_params_theoretical(
    profile: &SmoothnessProfile,
    option: EstimatorOption,
    s: usize,
) -> Result<SockParams> {
    strongly_convex(profile)?;
    let (l, mu) = (profile.l, profile.mu);
    let m = inner_length(l, mu);
    let tau = 1.0 / (2.0 * m as f64);
    let mu2 = mu * mu;
    let bg4lf2 = profile.b_g.powi(4) * profile.l_f.powi(2);
    let bf2lg2 = profile.b_f.powi(2) * profile.l_g.powi(2);
    let (a, b, c) = match option {
        EstimatorOption::OptionI => (
            batch_from(720.0 * bg4lf2 / mu2)?,
            batch_from(720.0 * bf2lg2 / mu2)?,
            1,
        ),
        EstimatorOption::OptionII => (
            batch_from(2160.0 * bg4lf2 / mu2)?,
            batch_from(2160.0 * bf2lg2 / mu2)?,
            batch_from(1080.0 * l * l / mu2)?,
        ),
    };
    let params = SockParams {
        m,
        tau1: tau,
        tau2: tau,
        theta: 1.0 + 1.0 / (12.0 * m as f64),
        alpha: 1.0 / (3.0 * tau * l),
        s,
        batch_inner_value: a,
        batch_inner_jac: b,
        batch_outer: c,
        option,
    };
    params.validate()?;
    Ok(params)
}

/// Tuned settings: `m = ceil(sqrt(kappa)/2)`, `theta = 1 + 1/(4m)`,
/// `tau1 = tau2 = 1/(2m)`, `alpha = 2m/(3L)`, `A = B = ceil(kappa^2/256)`,
/// `C = ceil(kappa^2/16)`.
pub fn derive_sock_params_practical(
    profile: &SmoothnessProfile,
    option: EstimatorOption,
    s: usize,
) -> Result<SockParams> {
    strongly_convex(profile)?;
    let kappa = profile.kappa();
    let m = inner_length(profile.l, profile.mu);
    let mf = m as f64;
    let ab = batch_from(kappa * kappa / 256.0)?;
    let params = SockParams {
        m,
        tau1: 1.0 / (2.0 * mf),
        tau2: 1.0 / (2.0 * mf),
        theta: 1.0 + 1.0 / (4.0 * mf),
        alpha: 2.0 * mf / (3.0 * profile.l),
        s,
        batch_inner_value: ab,
        batch_inner_jac: ab,
        batch_outer: batch_from(kappa * kappa / 16.0)?,
        option,
    };
    params.validate()?;
    Ok(params)
}

/// Settings of the proximal variance-reduced baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VrscPgParams {
    /// Inner loop length `m' = ceil(kappa/4)`.
    pub inner_len: usize,
    /// Step size `1/(5L)`.
    pub eta: f64,
    pub batch_inner: u64,
    pub batch_outer: u64,
    pub epochs: usize,
}

impl VrscPgParams {
    pub fn derive(profile: &SmoothnessProfile, epochs: usize) -> Result<Self> {
        strongly_convex(profile)?;
        let kappa = profile.kappa();
        Ok(VrscPgParams {
            inner_len: (kappa / 4.0).ceil().max(1.0) as usize,
            eta: 1.0 / (5.0 * profile.l),
            batch_inner: batch_from(kappa * kappa / 256.0)?,
            batch_outer: batch_from(kappa * kappa / 16.0)?,
            epochs,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.inner_len == 0 || self.epochs == 0 || self.batch_inner == 0 || self.batch_outer == 0
        {
            return Err(Error::InvalidParameter(
                "baseline lengths and batch sizes must be positive".into(),
            ));
        }
        if !(self.eta > 0.0) || !self.eta.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        Ok(())
    }
}

/// How each stage of the non-strongly convex reduction is configured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NockMode {
    /// `S` large enough for a factor-4 decrease per stage in expectation,
    /// `theta = 1 + 1/(12m)`.
    Theoretical,
    /// `S = 3`, `theta = 1 + 1/(4m)`.
    Practical,
}

/// Per-stage mini-batch policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum NockBatchPolicy {
    /// `A_t = B_t = min{((L+mu_t)/(400 mu_t))^2, n/200, 500}`,
    /// `C_t = min{((L+mu_t)/(20 mu_t))^2, n/200, 500}`.
    Capped,
    /// `A_t = B_t = C_t = 500`.
    Heuristic,
    Fixed(BatchSizes),
}

/// Configuration of the non-strongly convex reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NockConfig {
    pub mu0: f64,
    /// Number of stages `T`.
    pub stages: usize,
    pub mode: NockMode,
    pub batches: NockBatchPolicy,
    pub option: EstimatorOption,
    /// Overrides the mode's snapshot count per stage.
    pub snapshots: Option<usize>,
}

/// Snapshot count per stage in theoretical mode: `ceil(log 44 / log(12/11))`.
pub fn nock_theoretical_snapshots() -> usize {
    (44f64.ln() / (12.0f64 / 11.0).ln()).ceil() as usize
}

/// `mu_t = mu0 / 2^t` for `t < stages`.
pub fn nock_mu_schedule(mu0: f64, stages: usize) -> Vec<f64> {
    let mut mu = mu0;
    (0..stages)
        .map(|_| {
            let cur = mu;
            mu /= 2.0;
            cur
        })
        .collect()
}

/// `T = ceil(log2(D_H / eps))`, at least one stage.
pub fn nock_stage_count(d_h: f64, eps: f64) -> Result<usize> {
    if !(d_h > 0.0) || !(eps > 0.0) || !d_h.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "need positive D_H and eps, got {d_h} and {eps}"
        )));
    }
    Ok((d_h / eps).log2().ceil().max(1.0) as usize)
}

/// Capped per-stage batches `(A_t, B_t, C_t)`.
pub fn derive_nock_stage_batches_theoretical(l: f64, mu_t: f64, n: usize) -> Result<BatchSizes> {
    if !(mu_t > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mu_t must be positive, got {mu_t}"
        )));
    }
    let cap = (n as f64 / 200.0).min(500.0);
    let r = (l + mu_t) / mu_t;
    let ab = batch_from((r / 400.0).powi(2).min(cap))?;
    let c = batch_from((r / 20.0).powi(2).min(cap))?;
    Ok(BatchSizes {
        inner_value: ab,
        inner_jac: ab,
        outer: c,
    })
}

pub fn derive_nock_stage_batches_heuristic() -> BatchSizes {
    BatchSizes {
        inner_value: 500,
        inner_jac: 500,
        outer: 500,
    }
}

/// Stage parameters for `H + (mu_t/2)||x - x0||^2`, using the stage smoothness
/// `L_t = L + mu_t`.
pub fn nock_stage_params(l: f64, mu_t: f64, n: usize, config: &NockConfig) -> Result<SockParams> {
    let l_t = l + mu_t;
    let m = inner_length(l_t, mu_t);
    let mf = m as f64;
    let (theta, default_s) = match config.mode {
        NockMode::Theoretical => (1.0 + 1.0 / (12.0 * mf), nock_theoretical_snapshots()),
        NockMode::Practical => (1.0 + 1.0 / (4.0 * mf), 3),
    };
    let batches = match config.batches {
        NockBatchPolicy::Capped => derive_nock_stage_batches_theoretical(l, mu_t, n)?,
        NockBatchPolicy::Heuristic => derive_nock_stage_batches_heuristic(),
        NockBatchPolicy::Fixed(b) => b,
    };
    let tau = 1.0 / (2.0 * mf);
    let params = SockParams {
        m,
        tau1: tau,
        tau2: tau,
        theta,
        alpha: 1.0 / (3.0 * tau * l_t),
        s: config.snapshots.unwrap_or(default_s),
        batch_inner_value: batches.inner_value,
        batch_inner_jac: batches.inner_jac,
        batch_outer: batches.outer,
        option: config.option,
    };
    params.validate()?;
    Ok(params)
}

/// Parameters of the multi-level loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelParams {
    pub m: usize,
    pub tau1: f64,
    pub tau2: f64,
    pub theta: f64,
    pub alpha: f64,
    pub s: usize,
    /// `a_1..a_{p-1}`
    pub value_batches: Vec<u64>,
    /// `b_1..b_p`
    pub jac_batches: Vec<u64>,
}

impl MultiLevelParams {
    pub fn validate(&self, levels: usize) -> Result<()> {
        check_schedule(self.m, self.tau1, self.tau2, self.theta, self.alpha, self.s)?;
        if self.value_batches.len() + 1 != levels || self.jac_batches.len() != levels {
            return Err(Error::InvalidParameter(format!(
                "{levels} levels need {} value batches and {levels} Jacobian batches",
                levels.saturating_sub(1)
            )));
        }
        if self
            .value_batches
            .iter()
            .chain(&self.jac_batches)
            .any(|&b| b == 0)
        {
            return Err(Error::InvalidParameter(
                "batch sizes must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn validate_for(&self, levels: usize, profile: &SmoothnessProfile) -> Result<()> {
        self.validate(levels)?;
        check_against_profile(self.m, self.tau1, self.alpha, profile)
    }

    /// Same loop settings as the two-level theory, with explicit batches.
    pub fn with_batches(
        profile: &SmoothnessProfile,
        s: usize,
        value_batches: Vec<u64>,
        jac_batches: Vec<u64>,
    ) -> Result<Self> {
        strongly_convex(profile)?;
        let m = inner_length(profile.l, profile.mu);
        let tau = 1.0 / (2.0 * m as f64);
        Ok(MultiLevelParams {
            m,
            tau1: tau,
            tau2: tau,
            theta: 1.0 + 1.0 / (12.0 * m as f64),
            alpha: 1.0 / (3.0 * tau * profile.l),
            s,
            value_batches,
            jac_batches,
        })
    }
}

/// Theoretical multi-level batches
/// `a_i = 180(2p-1)/mu^2 sum_{j>i} 4^{p-j+1} gamma_p^2 gamma_{j-1}^4 L_j^2 / gamma_j^2` and
/// `b_i = 360(2p-1)/mu^2 4^{p-i} ell_i^2 gamma_p^2 / gamma_i^2`, each at least one.
pub fn derive_multilevel_batches(consts: &LevelConstants, mu: f64) -> Result<(Vec<u64>, Vec<u64>)> {
    if !(mu > 0.0) {
        return Err(Error::NotStronglyConvex);
    }
    let p = consts.levels();
    if p < 2 || consts.l.len() != p {
        return Err(Error::InvalidParameter(format!(
            "level constants must describe at least two levels, got {p}"
        )));
    }
    let scale = (2 * p - 1) as f64 / (mu * mu);
    let a = (1..p)
        .map(|i| batch_from(180.0 * scale * consts.value_term(i)))
        .collect::<Result<Vec<_>>>()?;
    let b = (1..=p)
        .map(|i| batch_from(360.0 * scale * consts.jac_term(i)))
        .collect::<Result<Vec<_>>>()?;
    Ok((a, b))
}

pub fn derive_multilevel_params_theoretical(
    profile: &SmoothnessProfile,
    consts: &LevelConstants,
    s: usize,
) -> Result<MultiLevelParams> {
    let (a, b) = derive_multilevel_batches(consts, profile.mu)?;
    MultiLevelParams::with_batches(profile, s, a, b)
}
