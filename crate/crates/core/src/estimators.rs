//! Variance-reduced estimators built around a snapshot point.
//!
//! Every estimator has the form `mean over batch of (sample(x) - sample(x~)) +
//! full(x~)`. Both evaluations of a correction term are charged, including the
//! one at the snapshot point, so that oracle counts follow the per-iteration
//! accounting `2A + 2B + n1` (option I) or `2(A + B + C)` (option II).

use std::ops::{AddAssign, DivAssign, MulAssign};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::levels::{validate_levels, MeteredLevels, MultiLevelOracle};
use crate::problem::{
    average, full_inner_jacobian, full_inner_value, full_outer_gradient, jac_t_vec,
    CompositionalOracle, Metered, SmoothnessProfile,
};
use crate::rng::{sample_batch, tags, MiniBatch, RandomStream};

/// Full information at a snapshot point of a two-level problem.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub point: DVector<f64>,
    /// `G(x~)`
    pub inner_mean: DVector<f64>,
    /// `dG(x~)`
    pub inner_jac_mean: DMatrix<f64>,
    /// `grad F(G(x~))`
    pub outer_grad_mean: DVector<f64>,
    /// `grad f(x~) = dG(x~)^T grad F(G(x~))`
    pub grad_mean: DVector<f64>,
}

impl Snapshot {
    /// Charges `n2` inner values, `n2` inner Jacobians and `n1` outer gradients.
    pub fn take<O: CompositionalOracle + ?Sized>(
        m: &mut Metered<'_, O>,
        point: &DVector<f64>,
    ) -> Result<Self> {
        check_len(m.oracle().dim_x(), point.len(), "snapshot point")?;
        let inner_mean = full_inner_value(m, point)?;
        let inner_jac_mean = full_inner_jacobian(m, point)?;
        let outer_grad_mean = full_outer_gradient(m, &inner_mean)?;
        let grad_mean = jac_t_vec(&inner_jac_mean, &outer_grad_mean);
        Ok(Snapshot {
            point: point.clone(),
            inner_mean,
            inner_jac_mean,
            outer_grad_mean,
            grad_mean,
        })
    }
}

/// `(1/|batch|) sum_{j in batch} delta_j + full`, with `delta_j` evaluated once
/// per distinct index and weighted by its multiplicity.
fn vr_mean<T>(
    batch: &MiniBatch,
    full: &T,
    context: &'static str,
    mut delta: impl FnMut(usize, u64) -> Result<T>,
) -> Result<T>
where
    T: Clone + AddAssign + MulAssign<f64> + DivAssign<f64>,
{
    if batch.is_empty() {
        return Err(Error::EmptyBatch(context));
    }
    let mut acc: Option<T> = None;
    for &(j, count) in batch.entries() {
        let mut d = delta(j, count)?;
        if count != 1 {
            d *= count as f64;
        }
        match acc.as_mut() {
            None => acc = Some(d),
            Some(a) => *a += d,
        }
    }
    let mut acc = acc.expect("nonempty batch");
    acc /= batch.size() as f64;
    acc += full.clone();
    Ok(acc)
}

/// `G^ = (1/A) sum_{j in A} (G_j(x) - G_j(x~)) + G(x~)`. Charges `2|A|` inner values.
pub fn estimate_inner<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    snapshot: &Snapshot,
    x: &DVector<f64>,
    batch: &MiniBatch,
) -> Result<DVector<f64>> {
    check_len(m.oracle().dim_x(), x.len(), "query point")?;
    vr_mean(batch, &snapshot.inner_mean, "estimate_inner", |j, units| {
        let at_x = m.inner_value_charged(j, x, units)?;
        let at_snap = m.inner_value_charged(j, &snapshot.point, units)?;
        Ok(at_x - at_snap)
    })
}

/// `dG^ = (1/B) sum_{j in B} (dG_j(x) - dG_j(x~)) + dG(x~)`. Charges `2|B|` inner Jacobians.
pub fn estimate_jacobian<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    snapshot: &Snapshot,
    x: &DVector<f64>,
    batch: &MiniBatch,
) -> Result<DMatrix<f64>> {
    check_len(m.oracle().dim_x(), x.len(), "query point")?;
    vr_mean(
        batch,
        &snapshot.inner_jac_mean,
        "estimate_jacobian",
        |j, units| {
            let at_x = m.inner_jacobian_charged(j, x, units)?;
            let at_snap = m.inner_jacobian_charged(j, &snapshot.point, units)?;
            Ok(at_x - at_snap)
        },
    )
}

fn check_estimates<O: CompositionalOracle + ?Sized>(
    oracle: &O,
    ghat: &DVector<f64>,
    jhat: &DMatrix<f64>,
) -> Result<()> {
    check_len(oracle.dim_u(), ghat.len(), "inner estimate")?;
    check_len(oracle.dim_u(), jhat.nrows(), "Jacobian estimate rows")?;
    check_len(oracle.dim_x(), jhat.ncols(), "Jacobian estimate columns")
}

/// Option I: `[dG^]^T grad F(G^)` with the full outer average. Charges `n1`
/// outer gradients.
pub fn gradient_option1<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    ghat: &DVector<f64>,
    jhat: &DMatrix<f64>,
) -> Result<DVector<f64>> {
    check_estimates(m.oracle(), ghat, jhat)?;
    let grad_f = full_outer_gradient(m, ghat)?;
    Ok(jac_t_vec(jhat, &grad_f))
}

/// Option II: `(1/C) sum_{i in C} ([dG^]^T grad F_i(G^) - [dG(x~)]^T grad F_i(G(x~)))
/// + grad f(x~)`. Charges `2|C|` outer gradients.
pub fn gradient_option2<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    snapshot: &Snapshot,
    ghat: &DVector<f64>,
    jhat: &DMatrix<f64>,
    outer_batch: &MiniBatch,
) -> Result<DVector<f64>> {
    check_estimates(m.oracle(), ghat, jhat)?;
    vr_mean(
        outer_batch,
        &snapshot.grad_mean,
        "gradient_option2",
        |i, units| {
            let at_est = m.outer_gradient_charged(i, ghat, units)?;
            let at_snap = m.outer_gradient_charged(i, &snapshot.inner_mean, units)?;
            Ok(jac_t_vec(jhat, &at_est) - jac_t_vec(&snapshot.inner_jac_mean, &at_snap))
        },
    )
}

/// Which gradient estimator to use inside the inner loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EstimatorOption {
    /// Mini-batched inner map, full outer average.
    OptionI,
    /// Mini-batched inner map and outer functions.
    OptionII,
}

/// Batch sizes `(A, B, C)`; `C` is ignored by option I.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct BatchSizes {
    pub inner_value: u64,
    pub inner_jac: u64,
    pub outer: u64,
}

/// Samples `A_k`, `B_k` (and `C_k` for option II) from child streams keyed by
/// the global inner iteration `k` and returns the estimate at `x`.
pub fn estimate_gradient<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    snapshot: &Snapshot,
    x: &DVector<f64>,
    option: EstimatorOption,
    batches: BatchSizes,
    stream: &RandomStream,
    k: u64,
) -> Result<DVector<f64>> {
    let n_inner = m.oracle().n_inner();
    let n_outer = m.oracle().n_outer();
    let a = sample_batch(
        &mut stream.child(tags::INNER_VALUE_BATCH, k),
        n_inner,
        batches.inner_value,
    );
    let b = sample_batch(
        &mut stream.child(tags::INNER_JAC_BATCH, k),
        n_inner,
        batches.inner_jac,
    );
    let ghat = estimate_inner(m, snapshot, x, &a)?;
    let jhat = estimate_jacobian(m, snapshot, x, &b)?;
    match option {
        EstimatorOption::OptionI => gradient_option1(m, &ghat, &jhat),
        EstimatorOption::OptionII => {
            let c = sample_batch(
                &mut stream.child(tags::OUTER_BATCH, k),
                n_outer,
                batches.outer,
            );
            gradient_option2(m, snapshot, &ghat, &jhat, &c)
        }
    }
}

/// Coefficient `c` with `E||g~ - grad f(x)||^2 <= c ||x - x~||^2` for option I:
/// `2 B_G^4 L_F^2 / A + 2 B_F^2 L_G^2 / B`.
pub fn option1_variance_coefficient(profile: &SmoothnessProfile, a: u64, b: u64) -> f64 {
    2.0 * profile.b_g.powi(4) * profile.l_f.powi(2) / a as f64
        + 2.0 * profile.b_f.powi(2) * profile.l_g.powi(2) / b as f64
}

/// Option II counterpart: `4 B_G^4 L_F^2 / A + 4 B_F^2 L_G^2 / B + 2 L^2 / C`,
/// where `l_component` bounds the smoothness of every `F_i o G`.
pub fn option2_variance_coefficient(
    profile: &SmoothnessProfile,
    l_component: f64,
    batches: BatchSizes,
) -> f64 {
    4.0 * profile.b_g.powi(4) * profile.l_f.powi(2) / batches.inner_value as f64
        + 4.0 * profile.b_f.powi(2) * profile.l_g.powi(2) / batches.inner_jac as f64
        + 2.0 * l_component.powi(2) / batches.outer as f64
}

/// Full chain information at a snapshot point of a multi-level problem.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiLevelSnapshot {
    pub point: DVector<f64>,
    /// `phi_1(x~), ..., phi_{p-1}(x~)`
    pub chain_values: Vec<DVector<f64>>,
    /// `f_1'(x~), f_2'(phi_1(x~)), ..., f_p'(phi_{p-1}(x~))`
    pub chain_level_jacs: Vec<DMatrix<f64>>,
    /// `phi_1'(x~), ..., phi_{p-1}'(x~)`
    pub chain_jacs: Vec<DMatrix<f64>>,
    /// `phi_p'(x~)^T`, the gradient of the smooth part.
    pub grad_mean: DVector<f64>,
}

impl MultiLevelSnapshot {
    pub fn take<O: MultiLevelOracle + ?Sized>(
        m: &mut MeteredLevels<'_, O>,
        point: &DVector<f64>,
    ) -> Result<Self> {
        validate_levels(m.oracle())?;
        check_len(m.oracle().dim(0), point.len(), "snapshot point")?;
        let p = m.oracle().levels();
        let mut chain_values = Vec::with_capacity(p - 1);
        let mut chain_level_jacs = Vec::with_capacity(p);
        let mut chain_jacs: Vec<DMatrix<f64>> = Vec::with_capacity(p - 1);
        let mut arg = point.clone();
        for k in 0..p - 1 {
            let value = m.full_level_value(k, &arg)?;
            let jac = m.full_level_jacobian(k, &arg)?;
            let chain = match chain_jacs.last() {
                None => jac.clone(),
                Some(prev) => &jac * prev,
            };
            chain_level_jacs.push(jac);
            chain_jacs.push(chain);
            chain_values.push(value.clone());
            arg = value;
        }
        let last = m.full_level_jacobian(p - 1, &arg)?;
        let grad_mean = jac_t_vec(&chain_jacs[p - 2], &last.row(0).transpose());
        chain_level_jacs.push(last);
        Ok(MultiLevelSnapshot {
            point: point.clone(),
            chain_values,
            chain_level_jacs,
            chain_jacs,
            grad_mean,
        })
    }

    /// `phi_k(x~)` for zero-based level `k`; level `-1` is the point itself.
    fn input_of(&self, k: usize) -> &DVector<f64> {
        if k == 0 {
            &self.point
        } else {
            &self.chain_values[k - 1]
        }
    }
}

/// Per-level mini-batches: `values[k]` for `k < p - 1`, `jacobians[k]` for `k < p`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiLevelBatches {
    pub values: Vec<MiniBatch>,
    pub jacobians: Vec<MiniBatch>,
}

impl MultiLevelBatches {
    /// Draws every level's batches from independent child streams keyed by `k`.
    pub fn sample<O: MultiLevelOracle + ?Sized>(
        oracle: &O,
        value_sizes: &[u64],
        jac_sizes: &[u64],
        stream: &RandomStream,
        k: u64,
    ) -> Result<Self> {
        let p = oracle.levels();
        if value_sizes.len() + 1 != p || jac_sizes.len() != p {
            return Err(Error::InvalidParameter(format!(
                "{p} levels need {} value batches and {p} Jacobian batches, got {} and {}",
                p - 1,
                value_sizes.len(),
                jac_sizes.len()
            )));
        }
        let level_stream = |tag: u64, level: usize| stream.child(tag, k).child(tag, level as u64);
        let values = value_sizes
            .iter()
            .enumerate()
            .map(|(lvl, &size)| {
                sample_batch(
                    &mut level_stream(tags::LEVEL_VALUE_BATCH, lvl),
                    oracle.count(lvl),
                    size,
                )
            })
            .collect();
        let jacobians = jac_sizes
            .iter()
            .enumerate()
            .map(|(lvl, &size)| {
                sample_batch(
                    &mut level_stream(tags::LEVEL_JAC_BATCH, lvl),
                    oracle.count(lvl),
                    size,
                )
            })
            .collect();
        Ok(MultiLevelBatches { values, jacobians })
    }
}

/// Multi-level estimator `v_p^T` with explicit per-level batches.
///
/// `u_1, v_1` are the two-level inner estimators at level 1; for `k >= 2`
/// `u_k` corrects `f_k(phi_{k-1}(x~))` around `u_{k-1}` and `v_k` corrects
/// `phi_k'(x~)` with the products `f_{k,j}'(u_{k-1}) v_{k-1}`.
pub fn multilevel_gradient_with_batches<O: MultiLevelOracle + ?Sized>(
    m: &mut MeteredLevels<'_, O>,
    snapshot: &MultiLevelSnapshot,
    x: &DVector<f64>,
    batches: &MultiLevelBatches,
) -> Result<DVector<f64>> {
    let oracle = m.oracle();
    validate_levels(oracle)?;
    let p = oracle.levels();
    check_len(oracle.dim(0), x.len(), "query point")?;
    if batches.values.len() + 1 != p || batches.jacobians.len() != p {
        return Err(Error::InvalidParameter(format!(
            "batch lists do not match {p} levels"
        )));
    }
    for (lvl, b) in batches
        .values
        .iter()
        .chain(batches.jacobians.iter())
        .enumerate()
    {
        let level = if lvl < p - 1 { lvl } else { lvl - (p - 1) };
        if let Some(max) = b.max_index() {
            if max >= oracle.count(level) {
                return Err(Error::IndexOutOfRange {
                    kind: "level component",
                    index: max,
                    count: oracle.count(level),
                });
            }
        }
    }

    // level 1
    let mut u = vr_mean(
        &batches.values[0],
        &snapshot.chain_values[0],
        "multilevel value estimate",
        |j, units| {
            let at_x = m.level_value_charged(0, j, x, units)?;
            let at_snap = m.level_value_charged(0, j, &snapshot.point, units)?;
            Ok(at_x - at_snap)
        },
    )?;
    let mut v = vr_mean(
        &batches.jacobians[0],
        &snapshot.chain_jacs[0],
        "multilevel Jacobian estimate",
        |j, units| {
            let at_x = m.level_jacobian_charged(0, j, x, units)?;
            let at_snap = m.level_jacobian_charged(0, j, &snapshot.point, units)?;
            Ok(at_x - at_snap)
        },
    )?;

    for k in 1..p - 1 {
        let snap_in = snapshot.input_of(k);
        let prev_chain = &snapshot.chain_jacs[k - 1];
        let v_next = vr_mean(
            &batches.jacobians[k],
            &snapshot.chain_jacs[k],
            "multilevel Jacobian estimate",
            |j, units| {
                let at_est = m.level_jacobian_charged(k, j, &u, units)?;
                let at_snap = m.level_jacobian_charged(k, j, snap_in, units)?;
                Ok(at_est * &v - at_snap * prev_chain)
            },
        )?;
        let u_next = vr_mean(
            &batches.values[k],
            &snapshot.chain_values[k],
            "multilevel value estimate",
            |j, units| {
                let at_est = m.level_value_charged(k, j, &u, units)?;
                let at_snap = m.level_value_charged(k, j, snap_in, units)?;
                Ok(at_est - at_snap)
            },
        )?;
        u = u_next;
        v = v_next;
    }

    // last level is scalar valued: work with gradients instead of row Jacobians
    let k = p - 1;
    let snap_in = snapshot.input_of(k);
    let prev_chain = &snapshot.chain_jacs[k - 1];
    vr_mean(
        &batches.jacobians[k],
        &snapshot.grad_mean,
        "multilevel gradient estimate",
        |j, units| {
            let at_est = m
                .level_jacobian_charged(k, j, &u, units)?
                .row(0)
                .transpose();
            let at_snap = m
                .level_jacobian_charged(k, j, snap_in, units)?
                .row(0)
                .transpose();
            Ok(jac_t_vec(&v, &at_est) - jac_t_vec(prev_chain, &at_snap))
        },
    )
}

/// Samples every level's batches and returns the multi-level estimate.
pub fn multilevel_gradient<O: MultiLevelOracle + ?Sized>(
    m: &mut MeteredLevels<'_, O>,
    snapshot: &MultiLevelSnapshot,
    x: &DVector<f64>,
    inner_batches: &[u64],
    jac_batches: &[u64],
    stream: &RandomStream,
    k: u64,
) -> Result<DVector<f64>> {
    let batches = MultiLevelBatches::sample(m.oracle(), inner_batches, jac_batches, stream, k)?;
    multilevel_gradient_with_batches(m, snapshot, x, &batches)
}

/// Mean of per-sample vectors, used by tests and diagnostics.
pub fn mean_vector(samples: Vec<DVector<f64>>) -> DVector<f64> {
    let n = samples.len();
    average(samples, n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::IdentityQuadratic;

    #[test]
    fn empty_batch_is_rejected() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.0);
        let mut m = Metered::new(&oracle);
        let x = DVector::from_vec(vec![1.0, 2.0]);
        let snap = Snapshot::take(&mut m, &x).unwrap();
        let empty = MiniBatch::from_indices(&[]);
        assert!(matches!(
            estimate_inner(&mut m, &snap, &x, &empty),
            Err(Error::EmptyBatch(_))
        ));
        assert!(matches!(
            estimate_jacobian(&mut m, &snap, &x, &empty),
            Err(Error::EmptyBatch(_))
        ));
        let g = snap.inner_mean.clone();
        let j = snap.inner_jac_mean.clone();
        assert!(matches!(
            gradient_option2(&mut m, &snap, &g, &j, &empty),
            Err(Error::EmptyBatch(_))
        ));
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.0);
        let mut m = Metered::new(&oracle);
        let g = DVector::zeros(3);
        let j = DMatrix::zeros(2, 2);
        assert!(matches!(
            gradient_option1(&mut m, &g, &j),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn single_outer_option1_is_direct_product() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.0);
        let mut m = Metered::new(&oracle);
        let g = DVector::from_vec(vec![1.0, -1.0]);
        let j = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 1.0, 3.0]);
        let got = gradient_option1(&mut m, &g, &j).unwrap();
        assert_eq!(got, j.transpose() * &g);
        assert_eq!(m.counts().outer_grad, 1);
    }

    #[test]
    fn charges_count_multiplicity() {
        let oracle = IdentityQuadratic::new(2, 0.0, 0.0);
        let mut m = Metered::new(&oracle);
        let x0 = DVector::from_vec(vec![0.5, 0.5]);
        let snap = Snapshot::take(&mut m, &x0).unwrap();
        let before = m.counts();
        let batch = MiniBatch::from_indices(&[0, 0, 0]);
        let x = DVector::from_vec(vec![1.0, 0.0]);
        estimate_inner(&mut m, &snap, &x, &batch).unwrap();
        estimate_jacobian(&mut m, &snap, &x, &batch).unwrap();
        let after = m.counts();
        assert_eq!(after.inner_value - before.inner_value, 6);
        assert_eq!(after.inner_jac - before.inner_jac, 6);
    }
}
