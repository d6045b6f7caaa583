//! Smooth nonlinear two-level family with globally certified constants.
//!
//! `G_j(x) = W_j x + s_j .* sin(x)`, `F_i(u) = sum_k w_{ik} logcosh(u_k - t_{ik})`
//! with `w >= 0`, and `h = (mu/2)||x||^2 + lambda ||x||_1`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::problem::{CompositionalOracle, SmoothnessProfile};
use crate::prox::prox_l1_shifted;
use crate::rng::{tags, RandomStream};

use super::multilevel_linear::spectral_norm;

#[derive(Debug, Clone)]
pub struct SmoothNonlinear {
    mats: Vec<DMatrix<f64>>,
    amps: Vec<DVector<f64>>,
    weights: Vec<DVector<f64>>,
    shifts: Vec<DVector<f64>>,
    mu: f64,
    lambda: f64,
}

fn logcosh(z: f64) -> f64 {
    let a = z.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

impl SmoothNonlinear {
    /// `n_outer` outer and `n_inner` inner components on `R^dim`.
    pub fn generate(
        dim: usize,
        n_outer: usize,
        n_inner: usize,
        amplitude: f64,
        mu: f64,
        lambda: f64,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || n_outer == 0 || n_inner == 0 {
            return Err(Error::InvalidParameter("sizes must be positive".into()));
        }
        if !(amplitude >= 0.0) || !(mu >= 0.0) || !(lambda >= 0.0) {
            return Err(Error::InvalidParameter(
                "amplitude, mu and lambda must be nonnegative".into(),
            ));
        }
        let root = RandomStream::new(seed);
        let scale = 1.0 / (dim as f64).sqrt();
        let mut mats = Vec::with_capacity(n_inner);
        let mut amps = Vec::with_capacity(n_inner);
        for j in 0..n_inner {
            let mut s = root.child(tags::INSTANCE_COLUMNS, j as u64);
            let mut w = DMatrix::zeros(dim, dim);
            for r in 0..dim {
                for c in 0..dim {
                    w[(r, c)] = s.standard_normal() * scale;
                }
            }
            mats.push(w);
            amps.push(DVector::from_fn(dim, |_, _| amplitude * s.uniform01()));
        }
        let mut weights = Vec::with_capacity(n_outer);
        let mut shifts = Vec::with_capacity(n_outer);
        for i in 0..n_outer {
            let mut s = root.child(tags::INSTANCE_LEVELS, i as u64);
            weights.push(DVector::from_fn(dim, |_, _| 0.5 + s.uniform01()));
            shifts.push(DVector::from_fn(dim, |_, _| s.standard_normal()));
        }
        Ok(SmoothNonlinear {
            mats,
            amps,
            weights,
            shifts,
            mu,
            lambda,
        })
    }

    /// Global constants: `B_G = max ||W_j|| + ||s_j||_inf`, `L_G = max ||s_j||_inf`
    /// (in Frobenius norm, since the nonlinear part of the Jacobian is
    /// diagonal), `B_F = max ||w_i||`, `L_F = max w_ik`, and the per-component
    /// smoothness `L = L_G B_F + B_G^2 L_F`.
    pub fn profile(&self) -> SmoothnessProfile {
        let b_g = self
            .mats
            .iter()
            .zip(&self.amps)
            .map(|(w, s)| spectral_norm(w) + s.amax())
            .fold(0.0, f64::max);
        let l_g = self.amps.iter().map(|s| s.amax()).fold(0.0, f64::max);
        let b_f = self.weights.iter().map(|w| w.norm()).fold(0.0, f64::max);
        let l_f = self.weights.iter().map(|w| w.max()).fold(0.0, f64::max);
        SmoothnessProfile {
            l: (l_g * b_f + b_g * b_g * l_f).max(self.mu),
            mu: self.mu,
            l_f,
            b_f,
            l_g,
            b_g,
        }
    }
}

impl CompositionalOracle for SmoothNonlinear {
    fn n_outer(&self) -> usize {
        self.weights.len()
    }
    fn n_inner(&self) -> usize {
        self.mats.len()
    }
    fn dim_x(&self) -> usize {
        self.mats[0].ncols()
    }
    fn dim_u(&self) -> usize {
        self.mats[0].nrows()
    }
    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        &self.mats[j] * x + self.amps[j].component_mul(&x.map(f64::sin))
    }
    fn inner_jacobian(&self, j: usize, x: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = self.mats[j].clone();
        for k in 0..x.len() {
            jac[(k, k)] += self.amps[j][k] * x[k].cos();
        }
        jac
    }
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        u.iter()
            .zip(self.shifts[i].iter())
            .zip(self.weights[i].iter())
            .map(|((uk, tk), wk)| wk * logcosh(uk - tk))
            .sum()
    }
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |k, _| {
            self.weights[i][k] * (u[k] - self.shifts[i][k]).tanh()
        })
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        let origin = DVector::zeros(v.len());
        prox_l1_shifted(v, step, self.lambda, self.mu, &origin)
            .expect("positive step checked by caller")
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        0.5 * self.mu * x.norm_squared() + self.lambda * x.lp_norm(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn logcosh_is_stable() {
        assert!((logcosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
        assert!((logcosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert_eq!(logcosh(0.0), 0.0);
    }

    #[test]
    fn constants_bound_sampled_jacobians() {
        let p = SmoothNonlinear::generate(4, 3, 5, 0.5, 0.1, 0.0, 2).unwrap();
        let prof = p.profile();
        let mut s = RandomStream::new(3);
        for _ in 0..50 {
            let x = DVector::from_fn(4, |_, _| 3.0 * s.standard_normal());
            let y = DVector::from_fn(4, |_, _| 3.0 * s.standard_normal());
            for j in 0..5 {
                let jx = p.inner_jacobian(j, &x);
                assert!(spectral_norm(&jx) <= prof.b_g + 1e-12);
                let dj = (jx - p.inner_jacobian(j, &y)).norm();
                assert!(dj <= prof.l_g * (&x - &y).norm() + 1e-12);
            }
            for i in 0..3 {
                assert!(p.outer_gradient(i, &x).norm() <= prof.b_f + 1e-12);
            }
        }
    }
}
