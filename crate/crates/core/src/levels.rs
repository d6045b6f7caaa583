//! Problems of the form `min_x f_p(f_{p-1}(... f_1(x))) + h(x)` where every
//! level `f_k = (1/n_k) sum_j f_{k,j}` is a finite average.
//!
//! Levels are zero-based here: level `k` maps vectors of length `dim(k)` to
//! vectors of length `dim(k + 1)`, and `dim(levels())` is 1.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_len, Error, Result};
use crate::problem::{average, jac_t_vec, CompositionalOracle, OracleCounts};

pub trait MultiLevelOracle: Send + Sync {
    /// Composition depth `p >= 2`.
    fn levels(&self) -> usize;
    /// Number of summands at level `k`.
    fn count(&self, k: usize) -> usize;
    /// Input dimension of level `k`; `dim(levels())` is the scalar output.
    fn dim(&self, k: usize) -> usize;

    fn level_value(&self, k: usize, j: usize, u: &DVector<f64>) -> DVector<f64>;
    /// Jacobian of `f_{k,j}`, shape `dim(k+1) x dim(k)`.
    fn level_jacobian(&self, k: usize, j: usize, u: &DVector<f64>) -> DMatrix<f64>;

    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64>;
    fn h_value(&self, x: &DVector<f64>) -> f64;
}

impl<T: MultiLevelOracle + ?Sized> MultiLevelOracle for &T {
    fn levels(&self) -> usize {
        (**self).levels()
    }
    fn count(&self, k: usize) -> usize {
        (**self).count(k)
    }
    fn dim(&self, k: usize) -> usize {
        (**self).dim(k)
    }
    fn level_value(&self, k: usize, j: usize, u: &DVector<f64>) -> DVector<f64> {
        (**self).level_value(k, j, u)
    }
    fn level_jacobian(&self, k: usize, j: usize, u: &DVector<f64>) -> DMatrix<f64> {
        (**self).level_jacobian(k, j, u)
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        (**self).prox_h(v, step)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        (**self).h_value(x)
    }
}

/// Counting view of a multi-level oracle.
///
/// Level values are charged as inner values, Jacobians of levels below the
/// last as inner Jacobians and last-level Jacobians as outer gradients, so a
/// two-level instance is charged exactly like its [`CompositionalOracle`] view.
pub struct MeteredLevels<'a, O: ?Sized> {
    oracle: &'a O,
    counts: OracleCounts,
}

impl<'a, O: MultiLevelOracle + ?Sized> MeteredLevels<'a, O> {
    pub fn new(oracle: &'a O) -> Self {
        MeteredLevels {
            oracle,
            counts: OracleCounts::default(),
        }
    }

    pub fn oracle(&self) -> &'a O {
        self.oracle
    }

    pub fn counts(&self) -> OracleCounts {
        self.counts
    }

    fn check(&self, k: usize, j: usize, u: &DVector<f64>) -> Result<()> {
        let p = self.oracle.levels();
        if k >= p {
            return Err(Error::IndexOutOfRange {
                kind: "composition level",
                index: k,
                count: p,
            });
        }
        let n = self.oracle.count(k);
        if j >= n {
            return Err(Error::IndexOutOfRange {
                kind: "level component",
                index: j,
                count: n,
            });
        }
        check_len(self.oracle.dim(k), u.len(), "level argument")
    }

    pub fn level_value(&mut self, k: usize, j: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        self.level_value_charged(k, j, u, 1)
    }

    pub fn level_jacobian(&mut self, k: usize, j: usize, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.level_jacobian_charged(k, j, u, 1)
    }

    pub(crate) fn level_value_charged(
        &mut self,
        k: usize,
        j: usize,
        u: &DVector<f64>,
        units: u64,
    ) -> Result<DVector<f64>> {
        self.check(k, j, u)?;
        if k + 1 == self.oracle.levels() {
            self.counts.outer_value = self.counts.outer_value.saturating_add(units);
        } else {
            self.counts.inner_value = self.counts.inner_value.saturating_add(units);
        }
        Ok(self.oracle.level_value(k, j, u))
    }

    pub(crate) fn level_jacobian_charged(
        &mut self,
        k: usize,
        j: usize,
        u: &DVector<f64>,
        units: u64,
    ) -> Result<DMatrix<f64>> {
        self.check(k, j, u)?;
        if k + 1 == self.oracle.levels() {
            self.counts.outer_grad = self.counts.outer_grad.saturating_add(units);
        } else {
            self.counts.inner_jac = self.counts.inner_jac.saturating_add(units);
        }
        Ok(self.oracle.level_jacobian(k, j, u))
    }

    pub fn prox_h(&mut self, v: &DVector<f64>, step: f64) -> Result<DVector<f64>> {
        check_len(self.oracle.dim(0), v.len(), "prox argument")?;
        if !(step > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "prox step must be positive, got {step}"
            )));
        }
        self.counts.prox += 1;
        Ok(self.oracle.prox_h(v, step))
    }

    pub fn h_value(&self, x: &DVector<f64>) -> Result<f64> {
        check_len(self.oracle.dim(0), x.len(), "regularizer argument")?;
        Ok(self.oracle.h_value(x))
    }

    /// Full level average `f_k(u)`.
    pub fn full_level_value(&mut self, k: usize, u: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.oracle.count(k);
        let values = (0..n)
            .map(|j| self.level_value(k, j, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(average(values, n))
    }

    /// Full level Jacobian `f_k'(u)`.
    pub fn full_level_jacobian(&mut self, k: usize, u: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.oracle.count(k);
        let jacs = (0..n)
            .map(|j| self.level_jacobian(k, j, u))
            .collect::<Result<Vec<_>>>()?;
        Ok(average(jacs, n))
    }
}

/// Per-level Jacobian bounds `B_k` and smoothness constants `L_k`, zero-based.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LevelConstants {
    pub b: Vec<f64>,
    pub l: Vec<f64>,
}

impl LevelConstants {
    pub fn levels(&self) -> usize {
        self.b.len()
    }

    /// `gamma_k = B_1 ... B_k` for `k = 0..=p`, with `gamma_0 = 1`.
    pub fn gamma(&self, k: usize) -> f64 {
        self.b[..k].iter().product()
    }

    /// `gamma_hi / gamma_lo = B_{lo+1} ... B_hi` as a product, so zero bounds
    /// never produce `0 / 0`.
    pub fn gamma_ratio(&self, hi: usize, lo: usize) -> f64 {
        self.b[lo..hi].iter().product()
    }

    /// Smoothness bound `ell_k` of `phi_k` (one-based `k`):
    /// `sum_{i<=k} L_i (prod_{j<i} B_j^2) (prod_{i<j<=k} B_j)`.
    pub fn ell(&self, k: usize) -> f64 {
        (1..=k)
            .map(|i| {
                let below: f64 = self.b[..i - 1].iter().map(|b| b * b).product();
                let above: f64 = self.b[i..k].iter().product();
                self.l[i - 1] * below * above
            })
            .sum()
    }

    /// Coefficient of `||x - x~||^2` in the multi-level second-moment bound:
    /// `sum_j (2/b_j) 4^{p-j} ell_j^2 gamma_p^2/gamma_j^2
    ///  + sum_{i<p} (1/a_i) sum_{j>i} 4^{p-j+1} gamma_p^2 gamma_{j-1}^4 L_j^2/gamma_j^2`.
    pub fn variance_bound(&self, value_batches: &[u64], jac_batches: &[u64]) -> f64 {
        let p = self.levels();
        let mut total = 0.0;
        for j in 1..=p {
            total += 2.0 / jac_batches[j - 1] as f64 * self.jac_term(j);
        }
        for i in 1..p {
            total += self.value_term(i) / value_batches[i - 1] as f64;
        }
        total
    }

    /// `4^{p-j} ell_j^2 gamma_p^2 / gamma_j^2`
    pub(crate) fn jac_term(&self, j: usize) -> f64 {
        let p = self.levels();
        4f64.powi((p - j) as i32) * self.ell(j).powi(2) * self.gamma_ratio(p, j).powi(2)
    }

    /// `sum_{j>i} 4^{p-j+1} gamma_p^2 gamma_{j-1}^4 L_j^2 / gamma_j^2`
    pub(crate) fn value_term(&self, i: usize) -> f64 {
        let p = self.levels();
        (i + 1..=p)
            .map(|j| {
                4f64.powi((p - j + 1) as i32)
                    * self.gamma_ratio(p, j).powi(2)
                    * self.gamma(j - 1).powi(4)
                    * self.l[j - 1].powi(2)
            })
            .sum()
    }
}

pub(crate) fn validate_levels<O: MultiLevelOracle + ?Sized>(oracle: &O) -> Result<()> {
    let p = oracle.levels();
    if p < 2 {
        return Err(Error::InvalidParameter(format!(
            "multi-level problems need at least two levels, got {p}"
        )));
    }
    if oracle.dim(p) != 1 {
        return Err(Error::InvalidParameter(
            "last level must be scalar valued".into(),
        ));
    }
    Ok(())
}

/// `phi_p(x) + h(x)`.
pub fn eval_multilevel_objective<O: MultiLevelOracle + ?Sized>(
    m: &mut MeteredLevels<'_, O>,
    x: &DVector<f64>,
) -> Result<f64> {
    validate_levels(m.oracle())?;
    check_len(m.oracle().dim(0), x.len(), "objective argument")?;
    let mut u = x.clone();
    for k in 0..m.oracle().levels() {
        u = m.full_level_value(k, &u)?;
    }
    Ok(u[0] + m.h_value(x)?)
}

/// Exact gradient `phi_p'(x)^T` by the chain rule.
pub fn multilevel_full_gradient<O: MultiLevelOracle + ?Sized>(
    m: &mut MeteredLevels<'_, O>,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    validate_levels(m.oracle())?;
    check_len(m.oracle().dim(0), x.len(), "gradient argument")?;
    let p = m.oracle().levels();
    let mut u = x.clone();
    let mut chain: Option<DMatrix<f64>> = None;
    for k in 0..p - 1 {
        let jac = m.full_level_jacobian(k, &u)?;
        chain = Some(match chain {
            None => jac,
            Some(prev) => jac * prev,
        });
        u = m.full_level_value(k, &u)?;
    }
    let last = m.full_level_jacobian(p - 1, &u)?;
    let row = last.row(0).transpose();
    Ok(jac_t_vec(chain.as_ref().expect("p >= 2"), &row))
}

/// Two-level oracle backed by a `p = 2` multi-level oracle: level 0 is the
/// inner map and level 1 the outer functions.
pub struct TwoLevelView<'a, O: ?Sized> {
    oracle: &'a O,
}

impl<'a, O: MultiLevelOracle + ?Sized> TwoLevelView<'a, O> {
    pub fn new(oracle: &'a O) -> Result<Self> {
        validate_levels(oracle)?;
        if oracle.levels() != 2 {
            return Err(Error::InvalidParameter(format!(
                "two-level view needs exactly two levels, got {}",
                oracle.levels()
            )));
        }
        Ok(TwoLevelView { oracle })
    }
}

impl<O: MultiLevelOracle + ?Sized> CompositionalOracle for TwoLevelView<'_, O> {
    fn n_outer(&self) -> usize {
        self.oracle.count(1)
    }
    fn n_inner(&self) -> usize {
        self.oracle.count(0)
    }
    fn dim_x(&self) -> usize {
        self.oracle.dim(0)
    }
    fn dim_u(&self) -> usize {
        self.oracle.dim(1)
    }
    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        self.oracle.level_value(0, j, x)
    }
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        self.oracle.level_jacobian(0, j, x)
    }
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        self.oracle.level_value(1, i, u)[0]
    }
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        self.oracle.level_jacobian(1, i, u).row(0).transpose()
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        self.oracle.prox_h(v, step)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.oracle.h_value(x)
    }
}

/// Two-level multi-level view of a compositional oracle: level 0 holds the
/// inner maps `G_j` and level 1 the outer functions `F_i`.
pub struct CompositionalLevels<'a, O: ?Sized> {
    oracle: &'a O,
}

impl<'a, O: CompositionalOracle + ?Sized> CompositionalLevels<'a, O> {
    pub fn new(oracle: &'a O) -> Self {
        CompositionalLevels { oracle }
    }

    /// `b = (B_G, B_F)`, `L = (L_G, L_F)`.
    pub fn level_constants(profile: &crate::problem::SmoothnessProfile) -> LevelConstants {
        LevelConstants {
            b: vec![profile.b_g, profile.b_f],
            l: vec![profile.l_g, profile.l_f],
        }
    }
}

impl<O: CompositionalOracle + ?Sized> MultiLevelOracle for CompositionalLevels<'_, O> {
    fn levels(&self) -> usize {
        2
    }
    fn count(&self, k: usize) -> usize {
        if k == 0 {
            self.oracle.n_inner()
        } else {
            self.oracle.n_outer()
        }
    }
    fn dim(&self, k: usize) -> usize {
        match k {
            0 => self.oracle.dim_x(),
            1 => self.oracle.dim_u(),
            _ => 1,
        }
    }
    fn level_value(&self, k: usize, j: usize, u: &DVector<f64>) -> DVector<f64> {
        if k == 0 {
            self.oracle.inner_value(j, u)
        } else {
            DVector::from_element(1, self.oracle.outer_value(j, u))
        }
    }
    fn level_jacobian(&self, k: usize, j: usize, u: &DVector<f64>) -> DMatrix<f64> {
        if k == 0 {
            self.oracle.inner_jacobian(j, u)
        } else {
            let g = self.oracle.outer_gradient(j, u);
            DMatrix::from_row_slice(1, g.len(), g.as_slice())
        }
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        self.oracle.prox_h(v, step)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.oracle.h_value(x)
    }
}
