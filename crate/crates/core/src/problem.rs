//! Problem abstraction for `min_x F(G(x)) + h(x)` with
//! `F = (1/n1) sum_i F_i` and `G = (1/n2) sum_j G_j`.
//!
//! Oracles are stateless and shared read-only between runs. Every call made by
//! an algorithm goes through [`Metered`], which validates indices and
//! dimensions and charges one oracle unit per component evaluation to a
//! counter owned by the caller.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::prox;

/// Component oracles of a two-level finite-sum compositional problem.
///
/// Indices are zero-based. Implementations may assume the index and the
/// argument length are valid; [`Metered`] checks both before delegating.
pub trait CompositionalOracle: Send + Sync {
    /// Number of outer summands `F_i`.
    fn n_outer(&self) -> usize;
    /// Number of inner summands `G_j`.
    fn n_inner(&self) -> usize;
    /// Dimension of the decision variable.
    fn dim_x(&self) -> usize;
    /// Dimension of the codomain of the inner map.
    fn dim_u(&self) -> usize;

    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of `G_j` at `x`, shape `dim_u x dim_x`.
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64>;
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64;
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64>;

    /// `argmin_y h(y) + ||y - v||^2 / (2 step)`.
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64>;
    fn h_value(&self, x: &DVector<f64>) -> f64;
}

impl<T: CompositionalOracle + ?Sized> CompositionalOracle for &T {
    fn n_outer(&self) -> usize {
        (**self).n_outer()
    }
    fn n_inner(&self) -> usize {
        (**self).n_inner()
    }
    fn dim_x(&self) -> usize {
        (**self).dim_x()
    }
    fn dim_u(&self) -> usize {
        (**self).dim_u()
    }
    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        (**self).inner_value(j, x)
    }
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        (**self).inner_jacobian(j, x)
    }
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        (**self).outer_value(i, u)
    }
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        (**self).outer_gradient(i, u)
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        (**self).prox_h(v, step)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        (**self).h_value(x)
    }
}

/// Smoothness and convexity constants of a problem instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmoothnessProfile {
    /// Smoothness of each `f_i = F_i o G`.
    pub l: f64,
    /// Strong convexity of `h`.
    pub mu: f64,
    pub l_f: f64,
    pub b_f: f64,
    pub l_g: f64,
    pub b_g: f64,
}

impl SmoothnessProfile {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("L", self.l),
            ("mu", self.mu),
            ("L_F", self.l_f),
            ("B_F", self.b_f),
            ("L_G", self.l_g),
            ("B_G", self.b_g),
        ];
        for (name, value) in fields {
            if !value.is_finite() || value < 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be finite and nonnegative, got {value}"
                )));
            }
        }
        if self.l <= 0.0 {
            return Err(Error::InvalidParameter("L must be positive".into()));
        }
        if self.mu > 0.0 && self.l < self.mu {
            return Err(Error::InvalidParameter(format!(
                "L = {} must be at least mu = {}",
                self.l, self.mu
            )));
        }
        Ok(())
    }

    /// Condition number `L / mu`; infinite when `mu == 0`.
    pub fn kappa(&self) -> f64 {
        self.l / self.mu
    }

    pub fn is_strongly_convex(&self) -> bool {
        self.mu > 0.0
    }
}

/// Oracle units consumed by a run, one unit per component evaluation.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OracleCounts {
    pub inner_value: u64,
    pub inner_jac: u64,
    pub outer_grad: u64,
    pub outer_value: u64,
    pub prox: u64,
}

impl OracleCounts {
    /// Headline complexity: component values, gradients and Jacobians used by
    /// the algorithm. Prox calls and objective evaluations are excluded.
    pub fn total(&self) -> u64 {
        self.inner_value + self.inner_jac + self.outer_grad
    }

    pub fn dominates(&self, earlier: &OracleCounts) -> bool {
        self.inner_value >= earlier.inner_value
            && self.inner_jac >= earlier.inner_jac
            && self.outer_grad >= earlier.outer_grad
            && self.outer_value >= earlier.outer_value
            && self.prox >= earlier.prox
    }
}

/// Counting, validating view of an oracle.
pub struct Metered<'a, O: ?Sized> {
    oracle: &'a O,
    counts: OracleCounts,
}

impl<'a, O: CompositionalOracle + ?Sized> Metered<'a, O> {
    pub fn new(oracle: &'a O) -> Self {
        Metered {
            oracle,
            counts: OracleCounts::default(),
        }
    }

    pub fn with_counts(oracle: &'a O, counts: OracleCounts) -> Self {
        Metered { oracle, counts }
    }

    pub fn oracle(&self) -> &'a O {
        self.oracle
    }

    pub fn counts(&self) -> OracleCounts {
        self.counts
    }

    fn check_inner(&self, j: usize, x: &DVector<f64>) -> Result<()> {
        let n = self.oracle.n_inner();
        if j >= n {
            return Err(Error::IndexOutOfRange {
                kind: "inner map",
                index: j,
                count: n,
            });
        }
        check_len(self.oracle.dim_x(), x.len(), "inner map argument")
    }

    fn check_outer(&self, i: usize, u: &DVector<f64>) -> Result<()> {
        let n = self.oracle.n_outer();
        if i >= n {
            return Err(Error::IndexOutOfRange {
                kind: "outer function",
                index: i,
                count: n,
            });
        }
        check_len(self.oracle.dim_u(), u.len(), "outer function argument")
    }

    pub fn inner_value(&mut self, j: usize, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner_value_charged(j, x, 1)
    }

    pub fn inner_jacobian(&mut self, j: usize, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.inner_jacobian_charged(j, x, 1)
    }

    pub fn outer_value(&mut self, i: usize, u: &DVector<f64>) -> Result<f64> {
        self.check_outer(i, u)?;
        self.counts.outer_value += 1;
        Ok(self.oracle.outer_value(i, u))
    }

    pub fn outer_gradient(&mut self, i: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.outer_gradient_charged(i, u, 1)
    }

    /// Evaluates `G_j(x)` once and charges `units` evaluations, for components
    /// drawn several times in one mini-batch.
    pub(crate) fn inner_value_charged(
        &mut self,
        j: usize,
        x: &DVector<f64>,
        units: u64,
    ) -> Result<DVector<f64>> {
        self.check_inner(j, x)?;
        self.counts.inner_value = self.counts.inner_value.saturating_add(units);
        Ok(self.oracle.inner_value(j, x))
    }

    pub(crate) fn inner_jacobian_charged(
        &mut self,
        j: usize,
        x: &DVector<f64>,
        units: u64,
    ) -> Result<DMatrix<f64>> {
        self.check_inner(j, x)?;
        self.counts.inner_jac = self.counts.inner_jac.saturating_add(units);
        Ok(self.oracle.inner_jacobian(j, x))
    }

    pub(crate) fn outer_gradient_charged(
        &mut self,
        i: usize,
        u: &DVector<f64>,
        units: u64,
    ) -> Result<DVector<f64>> {
        self.check_outer(i, u)?;
        self.counts.outer_grad = self.counts.outer_grad.saturating_add(units);
        Ok(self.oracle.outer_gradient(i, u))
    }

    pub fn prox_h(&mut self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_len(self.oracle.dim_x(), v.len(), "prox argument")?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prox step must be positive, got {step}"
            )));
        }
        self.counts.prox += 1;
        Ok(self.oracle.prox_h(v, step))
    }

    pub fn h_value(&self, x: &DVector<f64>) -> Result<f64> {
        check_len(self.oracle.dim_x(), x.len(), "regularizer argument")?;
        Ok(self.oracle.h_value(x))
    }
}

/// Running sum followed by one division; every full average in the crate goes
/// through here so that equivalent quantities computed along different routes
/// round identically.
pub(crate) fn average<T, I>(items: I, count: usize) -> T
where
    I: IntoIterator<Item = T>,
    T: std::ops::AddAssign + std::ops::DivAssign<f64>,
{
    let mut iter = items.into_iter();
    let mut acc = iter.next().expect("average of an empty collection");
    for item in iter {
        acc += item;
    }
    acc /= count as f64;
    acc
}

/// `J^T g`.
pub(crate) fn jac_t_vec(jac: &DMatrix<f64>, grad: &DVector<f64>) -> DVector<f64> {
    jac.tr_mul(grad)
}

/// Full inner value `G(x)`, charging `n2` inner-value units.
pub fn full_inner_value<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = m.oracle().n_inner();
    let values = (0..n)
        .map(|j| m.inner_value(j, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(values, n))
}

/// Full inner Jacobian `dG(x)`, charging `n2` inner-Jacobian units.
pub fn full_inner_jacobian<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    x: &DVector<f64>,
) -> Result<DMatrix<f64>> {
    let n = m.oracle().n_inner();
    let jacs = (0..n)
        .map(|j| m.inner_jacobian(j, x))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(jacs, n))
}

/// Full outer gradient `grad F(u)`, charging `n1` outer-gradient units.
pub fn full_outer_gradient<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    u: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = m.oracle().n_outer();
    let grads = (0..n)
        .map(|i| m.outer_gradient(i, u))
        .collect::<Result<Vec<_>>>()?;
    Ok(average(grads, n))
}

/// Smooth part `F(G(x))`. Charges `n2` inner values and `n1` outer values.
pub fn eval_smooth<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    x: &DVector<f64>,
) -> Result<f64> {
    check_len(m.oracle().dim_x(), x.len(), "objective argument")?;
    let u = full_inner_value(m, x)?;
    let n = m.oracle().n_outer();
    let mut acc = 0.0;
    for i in 0..n {
        acc += m.outer_value(i, &u)?;
    }
    Ok(acc / n as f64)
}

/// `H(x) = F(G(x)) + h(x)`.
pub fn eval_objective<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    x: &DVector<f64>,
) -> Result<f64> {
    let smooth = eval_smooth(m, x)?;
    Ok(smooth + m.h_value(x)?)
}

/// Chain-rule gradient `[dG(x)]^T grad F(G(x))` of the smooth part.
pub fn full_gradient<O: CompositionalOracle + ?Sized>(
    m: &mut Metered<'_, O>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_len(m.oracle().dim_x(), x.len(), "gradient argument")?;
    let g = full_inner_value(m, x)?;
    let jac = full_inner_jacobian(m, x)?;
    let grad_f = full_outer_gradient(m, &g)?;
    Ok(jac_t_vec(&jac, &grad_f))
}

/// Adds `(mu/2)||x - center||^2` to `h`. The smooth part is untouched.
///
/// This is the per-stage subproblem of the non-strongly convex reduction.
#[derive(Debug, Clone)]
pub struct Regularized<O> {
    base: O,
    mu: f64,
    center: DVector<f64>,
}

impl<O: CompositionalOracle> Regularized<O> {
    pub fn new(base: O, mu: f64, center: DVector<f64>) -> Result<Self> {
        check_len(base.dim_x(), center.len(), "regularization center")?;
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "regularization weight must be finite and nonnegative, got {mu}"
            )));
        }
        Ok(Regularized { base, mu, center })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn base(&self) -> &O {
        &self.base
    }
}

impl<O: CompositionalOracle> CompositionalOracle for Regularized<O> {
    fn n_outer(&self) -> usize {
        self.base.n_outer()
    }
    fn n_inner(&self) -> usize {
        self.base.n_inner()
    }
    fn dim_x(&self) -> usize {
        self.base.dim_x()
    }
    fn dim_u(&self) -> usize {
        self.base.dim_u()
    }
    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        self.base.inner_value(j, x)
    }
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.base.inner_jacobian(j, x)
    }
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        self.base.outer_value(i, u)
    }
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        self.base.outer_gradient(i, u)
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let (v_eff, step_eff) = prox::fold_quadratic(v, step, self.mu, &self.center);
        self.base.prox_h(&v_eff, step_eff)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.base.h_value(x) + 0.5 * self.mu * (x - &self.center).norm_squared()
    }
}

/// Moves `(mu/2)||x||^2` from the smooth part into `h`.
///
/// The inner map is extended to `[G_j(x); x]` and every outer function to
/// `F_i(u) - (mu/2)||w||^2` on the appended block, so the objective is
/// unchanged while `h` becomes `mu`-strongly convex. The appended block has
/// constant identity Jacobians, so it adds no estimator variance.
#[derive(Debug, Clone)]
pub struct ShiftedStrongConvexity<O> {
    base: O,
    mu: f64,
}

impl<O: CompositionalOracle> ShiftedStrongConvexity<O> {
    pub fn new(base: O, mu: f64) -> Result<Self> {
        if !(mu >= 0.0) || !mu.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "shift must be finite and nonnegative, got {mu}"
            )));
        }
        Ok(ShiftedStrongConvexity { base, mu })
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn base(&self) -> &O {
        &self.base
    }

    /// Constants of the shifted problem given those of the base problem.
    /// `ball_radius` bounds the iterates for the outer-gradient bound of the
    /// appended block.
    pub fn profile(&self, base: &SmoothnessProfile, ball_radius: f64) -> SmoothnessProfile {
        SmoothnessProfile {
            l: base.l,
            mu: self.mu,
            l_f: base.l_f.max(self.mu),
            b_f: (base.b_f.powi(2) + (self.mu * ball_radius).powi(2)).sqrt(),
            l_g: base.l_g,
            b_g: (base.b_g.powi(2) + 1.0).sqrt(),
        }
    }
}

impl<O: CompositionalOracle> CompositionalOracle for ShiftedStrongConvexity<O> {
    fn n_outer(&self) -> usize {
        self.base.n_outer()
    }
    fn n_inner(&self) -> usize {
        self.base.n_inner()
    }
    fn dim_x(&self) -> usize {
        self.base.dim_x()
    }
    fn dim_u(&self) -> usize {
        self.base.dim_u() + self.base.dim_x()
    }
    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let g = self.base.inner_value(j, x);
        let mut out = DVector::zeros(g.len() + x.len());
        out.rows_mut(0, g.len()).copy_from(&g);
        out.rows_mut(g.len(), x.len()).copy_from(x);
        out
    }
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let jac = self.base.inner_jacobian(j, x);
        let n = x.len();
        let mut out = DMatrix::zeros(jac.nrows() + n, n);
        out.rows_mut(0, jac.nrows()).copy_from(&jac);
        out.rows_mut(jac.nrows(), n).fill_with_identity();
        out
    }
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        let k = self.base.dim_u();
        let head = u.rows(0, k).into_owned();
        let tail = u.rows(k, u.len() - k);
        self.base.outer_value(i, &head) - 0.5 * self.mu * tail.norm_squared()
    }
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        let k = self.base.dim_u();
        let head = u.rows(0, k).into_owned();
        let grad = self.base.outer_gradient(i, &head);
        let mut out = DVector::zeros(u.len());
        out.rows_mut(0, k).copy_from(&grad);
        let tail = u.rows(k, u.len() - k) * (-self.mu);
        out.rows_mut(k, u.len() - k).copy_from(&tail);
        out
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let origin = DVector::zeros(v.len());
        let (v_eff, step_eff) = prox::fold_quadratic(v, step, self.mu, &origin);
        self.base.prox_h(&v_eff, step_eff)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.base.h_value(x) + 0.5 * self.mu * x.norm_squared()
    }
}

/// `n1 = n2 = 1`, `G(x) = x`, `F(u) = ||u||^2 / 2`, `h = (mu/2)||x||^2 + lambda ||x||_1`.
///
/// Every estimator is exact on this problem, which makes it the reference
/// deterministic case for solver tests.
#[derive(Debug, Clone)]
pub struct IdentityQuadratic {
    pub dim: usize,
    pub mu: f64,
    pub lambda: f64,
}

impl IdentityQuadratic {
    pub fn new(dim: usize, mu: f64, lambda: f64) -> Self {
        IdentityQuadratic { dim, mu, lambda }
    }

    pub fn profile(&self) -> SmoothnessProfile {
        SmoothnessProfile {
            l: 1.0_f64.max(self.mu),
            mu: self.mu,
            l_f: 1.0,
            b_f: 0.0,
            l_g: 0.0,
            b_g: 1.0,
        }
    }
}

impl CompositionalOracle for IdentityQuadratic {
    fn n_outer(&self) -> usize {
        1
    }
    fn n_inner(&self) -> usize {
        1
    }
    fn dim_x(&self) -> usize {
        self.dim
    }
    fn dim_u(&self) -> usize {
        self.dim
    }
    fn inner_value(&self, _j: usize, x: &DVector<f64>) -> DVector<f64> {
        x.clone()
    }
    fn inner_jacobian(&self, _j: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim, self.dim)
    }
    fn outer_value(&self, _i: usize, u: &DVector<f64>) -> f64 {
        0.5 * u.norm_squared()
    }
    fn outer_gradient(&self, _i: usize, u: &DVector<f64>) -> DVector<f64> {
        u.clone()
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let origin = DVector::zeros(v.len());
        prox::prox_l1_shifted(v, step, self.lambda, self.mu, &origin)
            .expect("positive step checked by caller")
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.mu * x.norm_squared() + self.lambda * x.lp_norm(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_oracle() -> IdentityQuadratic {
        IdentityQuadratic::new(2, 0.0, 0.0)
    }

    #[test]
    fn identity_objective_is_half_squared_norm() {
        let oracle = identity_oracle();
        let mut m = Metered::new(&oracle);
        let x = DVector::from_vec(vec![3.0, 4.0]);
        assert_eq!(eval_objective(&mut m, &x).unwrap(), 12.5);
        let counts = m.counts();
        assert_eq!(counts.inner_value, 1);
        assert_eq!(counts.outer_value, 1);
    }

    #[test]
    fn identity_gradient_is_x() {
        let oracle = identity_oracle();
        let mut m = Metered::new(&oracle);
        let x = DVector::from_vec(vec![-1.5, 0.25]);
        assert_eq!(full_gradient(&mut m, &x).unwrap(), x);
        let c = m.counts();
        assert_eq!((c.inner_value, c.inner_jac, c.outer_grad), (1, 1, 1));
    }

    #[test]
    fn out_of_range_index_is_an_error() {
        let oracle = identity_oracle();
        let mut m = Metered::new(&oracle);
        let x = DVector::zeros(2);
        assert!(matches!(
            m.inner_value(1, &x),
            Err(Error::IndexOutOfRange {
                index: 1,
                count: 1,
                ..
            })
        ));
        assert!(matches!(
            m.outer_gradient(3, &x),
            Err(Error::IndexOutOfRange { .. })
        ));
        // rejected calls are not charged
        assert_eq!(m.counts(), OracleCounts::default());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let oracle = identity_oracle();
        let mut m = Metered::new(&oracle);
        let x = DVector::zeros(3);
        assert!(matches!(
            eval_objective(&mut m, &x),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(full_gradient(&mut m, &x).is_err());
    }

    #[test]
    fn shifted_oracle_preserves_objective() {
        let base = IdentityQuadratic::new(3, 0.0, 0.5);
        let shifted = ShiftedStrongConvexity::new(base.clone(), 0.3).unwrap();
        let x = DVector::from_vec(vec![0.4, -1.2, 2.0]);
        let h0 = eval_objective(&mut Metered::new(&base), &x).unwrap();
        let h1 = eval_objective(&mut Metered::new(&shifted), &x).unwrap();
        assert!((h0 - h1).abs() < 1e-14);
        let g0 = full_gradient(&mut Metered::new(&base), &x).unwrap();
        let g1 = full_gradient(&mut Metered::new(&shifted), &x).unwrap();
        assert!((g0 - 0.3 * &x - g1).norm() < 1e-14);
    }

    #[test]
    fn regularized_prox_matches_closed_form() {
        let base = IdentityQuadratic::new(3, 0.0, 0.7);
        let center = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let reg = Regularized::new(base, 0.4, center.clone()).unwrap();
        let v = DVector::from_vec(vec![0.3, 2.0, -1.1]);
        let got = reg.prox_h(&v, 0.8);
        let want = prox::prox_l1_shifted(&v, 0.8, 0.7, 0.4, &center).unwrap();
        assert!((got - want).norm() < 1e-14);
    }

    #[test]
    fn profile_validation() {
        let mut p = IdentityQuadratic::new(1, 0.5, 0.0).profile();
        assert!(p.validate().is_ok());
        p.mu = 2.0;
        assert!(p.validate().is_err());
        p.mu = f64::NAN;
        assert!(p.validate().is_err());
    }
}
