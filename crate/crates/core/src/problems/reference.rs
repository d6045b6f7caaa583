//! Accelerated proximal gradient for dense `(1/2) x^T Q x + b^T x + c + lambda ||x||_1`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::prox::prox_l1;

/// Dense quadratic plus `l1`, with `Q` symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseQuadraticL1 {
    pub q: DMatrix<f64>,
    pub b: DVector<f64>,
    pub c: f64,
    pub l1: f64,
}

/// Result of [`DenseQuadraticL1::solve`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub x_star: Vec<f64>,
    pub h_star: f64,
    /// Gradient-mapping norm `L ||x - prox(x - grad/L)||` at `x_star`.
    pub residual: f64,
    pub tol: f64,
    #[serde(default)]
    pub iterations: usize,
}

impl ReferenceSolution {
    pub fn point(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.x_star)
    }
}

impl DenseQuadraticL1 {
    pub fn new(q: DMatrix<f64>, b: DVector<f64>, c: f64, l1: f64) -> Self {
        DenseQuadraticL1 { q, b, c, l1 }
    }

    pub fn dim(&self) -> usize {
        self.b.len()
    }

    /// The same problem plus `(mu/2)||x - center||^2`.
    pub fn regularized(&self, mu: f64, center: &DVector<f64>) -> Self {
        let n = self.dim();
        DenseQuadraticL1 {
            q: &self.q + DMatrix::identity(n, n) * mu,
            b: &self.b - center * mu,
            c: self.c + 0.5 * mu * center.norm_squared(),
            l1: self.l1,
        }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.b.dot(x) + self.c + self.l1 * x.lp_norm(1)
    }

    pub fn smooth_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.q * x + &self.b
    }

    fn spectrum(&self) -> Result<(f64, f64)> {
        let eig = SymmetricEigen::try_new(self.q.clone(), 1e-14, 10_000)
            .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
        Ok((eig.eigenvalues.min().max(0.0), eig.eigenvalues.max()))
    }

    fn residual(&self, x: &DVector<f64>, lip: f64) -> f64 {
        let g = self.smooth_gradient(x);
        let t = prox_l1(&(x - g / lip), self.l1 / lip);
        lip * (x - t).norm()
    }

    /// Runs accelerated proximal gradient from `x0` with adaptive restart until
    /// the gradient-mapping norm is at most `tol`.
    pub fn solve(&self, x0: &DVector<f64>, tol: f64, max_iter: usize) -> Result<ReferenceSolution> {
        check_len(self.dim(), x0.len(), "reference start")?;
        if !(tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerance must be positive, got {tol}"
            )));
        }
        let (lmin, lmax) = self.spectrum()?;
        let lip = lmax.max(f64::MIN_POSITIVE);
        let step = 1.0 / lip;
        // constant momentum when strongly convex, FISTA sequence otherwise
        let strong = lmin > 1e-10 * lip;
        let q_ratio = if strong { (lmin / lip).sqrt() } else { 0.0 };
        let fixed_beta = (1.0 - q_ratio) / (1.0 + q_ratio);

        let mut x = x0.clone();
        let mut y = x0.clone();
        let mut t = 1.0_f64;
        let mut residual = self.residual(&x, lip);
        let mut iterations = 0;
        while residual > tol && iterations < max_iter {
            iterations += 1;
            let g = self.smooth_gradient(&y);
            let x_next = prox_l1(&(&y - &g * step), self.l1 * step);
            // gradient restart: momentum points uphill
            let restart = (&y - &x_next).dot(&(&x_next - &x)) > 0.0;
            let beta = if restart {
                t = 1.0;
                0.0
            } else if strong {
                fixed_beta
            } else {
                let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
                let b = (t - 1.0) / t_next;
                t = t_next;
                b
            };
            y = &x_next + (&x_next - &x) * beta;
            x = x_next;
            if iterations % 10 == 0 || beta == 0.0 {
                residual = self.residual(&x, lip);
            }
        }
        residual = self.residual(&x, lip);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteIterate {
                snapshot: 0,
                inner: iterations,
            });
        }
        if residual > tol {
            return Err(Error::NotConverged {
                iterations,
                residual,
                tol,
            });
        }
        Ok(ReferenceSolution {
            h_star: self.value(&x),
            x_star: x.iter().copied().collect(),
            residual,
            tol,
            iterations,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_psd(n: usize, seed: u64, shift: f64) -> DMatrix<f64> {
        let mut s = crate::rng::RandomStream::new(seed);
        let a = DMatrix::from_fn(n, n, |_, _| s.standard_normal());
        a.tr_mul(&a) / n as f64 + DMatrix::identity(n, n) * shift
    }

    #[test]
    fn unregularized_matches_linear_solve() {
        let q = random_psd(6, 1, 0.1);
        let b = DVector::from_fn(6, |i, _| (i as f64) - 2.5);
        let p = DenseQuadraticL1::new(q.clone(), b.clone(), 0.0, 0.0);
        let sol = p.solve(&DVector::zeros(6), 1e-11, 100_000).unwrap();
        let want = q.lu().solve(&(-b)).unwrap();
        assert!((sol.point() - want).norm() < 1e-9);
    }

    #[test]
    fn large_l1_gives_zero() {
        let q = random_psd(5, 2, 0.0);
        let b = DVector::from_vec(vec![0.3, -0.2, 0.1, 0.0, 0.25]);
        let p = DenseQuadraticL1::new(q, b, 0.0, 0.3);
        let sol = p
            .solve(&DVector::from_element(5, 1.0), 1e-10, 100_000)
            .unwrap();
        assert!(sol.point().amax() < 1e-12);
        assert!(sol.h_star.abs() < 1e-12);
    }

    #[test]
    fn optimum_lower_bounds_random_points() {
        let q = random_psd(8, 3, 0.0);
        let b = DVector::from_fn(8, |i, _| ((i * 7) % 5) as f64 - 2.0);
        let p = DenseQuadraticL1::new(q, b, 0.0, 0.4);
        let sol = p.solve(&DVector::zeros(8), 1e-10, 1_000_000).unwrap();
        let mut s = crate::rng::RandomStream::new(4);
        for _ in 0..100 {
            let x = DVector::from_fn(8, |_, _| s.standard_normal());
            assert!(sol.h_star <= p.value(&x) + 1e-12);
        }
    }

    #[test]
    fn regularized_value_adds_quadratic() {
        let q = random_psd(4, 5, 0.0);
        let b = DVector::from_vec(vec![1.0, -1.0, 0.5, 0.0]);
        let p = DenseQuadraticL1::new(q, b, 0.2, 0.1);
        let center = DVector::from_vec(vec![0.3, 0.0, -1.0, 2.0]);
        let r = p.regularized(0.7, &center);
        let x = DVector::from_vec(vec![-0.4, 1.5, 0.2, 0.9]);
        let want = p.value(&x) + 0.35 * (&x - &center).norm_squared();
        assert!((r.value(&x) - want).abs() < 1e-12);
    }
}
