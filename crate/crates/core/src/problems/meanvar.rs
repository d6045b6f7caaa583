//! `l1`-regularized mean-variance benchmark with linear losses:
//!
//! `min_x (1/n) sum_i a_i^T x + (lambda1/n) sum_i (a_i^T x - abar^T x)^2 + lambda2 ||x||_1`,
//!
//! which equals `abar^T x + lambda1 x^T M x + lambda2 ||x||_1` with
//! `M = (1/n) A A^T - abar abar^T`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::{CompositionalOracle, SmoothnessProfile};
use crate::prox::prox_l1;
use crate::rng::{tags, RandomStream};

use super::reference::{DenseQuadraticL1, ReferenceSolution};

/// A generated mean-variance instance with its derived quantities.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanVarInstance {
    pub dim: usize,
    pub samples: usize,
    pub noise_v: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// `dim x samples`, one sample per column.
    pub data: DMatrix<f64>,
    /// `abar`
    pub mean_col: DVector<f64>,
    /// `M = (1/n) A A^T - abar abar^T`
    pub quad_matrix: DMatrix<f64>,
}

fn derived(data: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = data.ncols() as f64;
    let mean_col = data.column_sum() / n;
    let mut quad = (data * data.transpose()) / n - &mean_col * mean_col.transpose();
    // exact symmetry
    let sym = (&quad + quad.transpose()) * 0.5;
    quad.copy_from(&sym);
    (mean_col, quad)
}

/// Draws `samples` i.i.d. columns from `N(0, F^T F + noise_v I)` where the
/// `dim x dim` factor `F` has i.i.d. standard normal entries.
///
/// Columns are formed as `F^T z + sqrt(noise_v) w` with independent standard
/// normal `z, w`, which has exactly that covariance and needs no factorization.
/// The factor is filled row by row from the `(seed, INSTANCE_FACTOR)` stream and
/// column `i` uses the `(seed, INSTANCE_COLUMNS, i)` stream.
pub fn generate_instance(
    dim: usize,
    samples: usize,
    noise_v: f64,
    lambda1: f64,
    lambda2: f64,
    seed: u64,
) -> Result<MeanVarInstance> {
    if dim == 0 || samples == 0 {
        return Err(Error::InvalidParameter(format!(
            "dim and samples must be positive, got {dim} and {samples}"
        )));
    }
    if !(noise_v >= 0.0) || !(lambda1 > 0.0) || !(lambda2 >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need noise_v >= 0, lambda1 > 0, lambda2 >= 0; got {noise_v}, {lambda1}, {lambda2}"
        )));
    }
    let root = RandomStream::new(seed);
    let factor = covariance_factor(dim, &root);
    let scale = noise_v.sqrt();
    let mut data = DMatrix::zeros(dim, samples);
    let mut z = DVector::zeros(dim);
    let mut w = DVector::zeros(dim);
    for i in 0..samples {
        let mut s = root.child(tags::INSTANCE_COLUMNS, i as u64);
        for k in 0..dim {
            z[k] = s.standard_normal();
        }
        for k in 0..dim {
            w[k] = s.standard_normal();
        }
        let col = factor.tr_mul(&z) + &w * scale;
        data.set_column(i, &col);
    }
    MeanVarInstance::from_data(data, noise_v, lambda1, lambda2, seed)
}

fn covariance_factor(dim: usize, root: &RandomStream) -> DMatrix<f64> {
    let mut s = root.child(tags::INSTANCE_FACTOR, 0);
    let mut factor = DMatrix::zeros(dim, dim);
    for r in 0..dim {
        for c in 0..dim {
            factor[(r, c)] = s.standard_normal();
        }
    }
    factor
}

impl MeanVarInstance {
    pub fn from_data(
        data: DMatrix<f64>,
        noise_v: f64,
        lambda1: f64,
        lambda2: f64,
        seed: u64,
    ) -> Result<Self> {
        if data.nrows() == 0 || data.ncols() == 0 {
            return Err(Error::InvalidInstance("empty data matrix".into()));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInstance("non-finite data entry".into()));
        }
        let (mean_col, quad_matrix) = derived(&data);
        Ok(MeanVarInstance {
            dim: data.nrows(),
            samples: data.ncols(),
            noise_v,
            lambda1,
            lambda2,
            seed,
            data,
            mean_col,
            quad_matrix,
        })
    }

    /// Population covariance `F^T F + noise_v I` of the generating distribution.
    pub fn population_covariance(&self) -> DMatrix<f64> {
        let factor = covariance_factor(self.dim, &RandomStream::new(self.seed));
        factor.tr_mul(&factor) + DMatrix::identity(self.dim, self.dim) * self.noise_v
    }

    /// Recomputes the derived fields and checks them against the stored ones.
    pub fn verify_derived(&self, tol: f64) -> Result<()> {
        let (mean_col, quad) = derived(&self.data);
        let mean_err = (&mean_col - &self.mean_col).amax();
        let quad_err = (&quad - &self.quad_matrix).amax();
        let scale = 1.0_f64.max(quad.amax());
        if mean_err > tol * 1.0_f64.max(mean_col.amax()) || quad_err > tol * scale {
            return Err(Error::InvalidInstance(format!(
                "derived fields inconsistent with data (mean err {mean_err:e}, quad err {quad_err:e})"
            )));
        }
        Ok(())
    }

    /// The smooth part as a dense quadratic `(1/2) x^T (2 lambda1 M) x + abar^T x`
    /// plus `lambda2 ||x||_1`.
    pub fn dense(&self) -> DenseQuadraticL1 {
        DenseQuadraticL1::new(
            &self.quad_matrix * (2.0 * self.lambda1),
            self.mean_col.clone(),
            0.0,
            self.lambda2,
        )
    }

    /// `abar^T x + lambda1 x^T M x + lambda2 ||x||_1`, evaluated with dense algebra.
    pub fn dense_objective(&self, x: &DVector<f64>) -> f64 {
        self.mean_col.dot(x)
            + self.lambda1 * x.dot(&(&self.quad_matrix * x))
            + self.lambda2 * x.lp_norm(1)
    }

    /// `abar + 2 lambda1 M x`.
    pub fn dense_gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.mean_col + (&self.quad_matrix * x) * (2.0 * self.lambda1)
    }

    pub fn as_compositional(&self) -> MeanVarOracle {
        MeanVarOracle {
            data: self.data.clone(),
            lambda1: self.lambda1,
            lambda2: self.lambda2,
        }
    }

    /// Extreme eigenvalues `(lambda_min, lambda_max)` of `M`.
    pub fn quad_spectrum(&self) -> Result<(f64, f64)> {
        let eig = SymmetricEigen::try_new(self.quad_matrix.clone(), 1e-14, 10_000)
            .ok_or_else(|| Error::Eigen("symmetric eigensolver did not converge".into()))?;
        let min = eig.eigenvalues.min();
        let max = eig.eigenvalues.max();
        Ok((min, max))
    }

    /// Explicit constants of the compositional form. Gradient bounds of the
    /// outer functions are taken over the image of `{||x|| <= ball_radius}`.
    pub fn explicit_constants(&self, ball_radius: f64) -> Result<SmoothnessProfile> {
        if !(ball_radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "ball radius must be positive, got {ball_radius}"
            )));
        }
        let (lmin, lmax) = self.quad_spectrum()?;
        let two_l1 = 2.0 * self.lambda1;
        // rank(M) <= samples - 1
        let rank_deficient = self.samples <= self.dim;
        let mu = if rank_deficient || lmin <= 1e-12 * lmax {
            0.0
        } else {
            two_l1 * lmin
        };
        let max_sq_norm = self
            .data
            .column_iter()
            .map(|a| a.norm_squared())
            .fold(0.0_f64, f64::max);
        Ok(SmoothnessProfile {
            l: two_l1 * lmax,
            mu,
            l_f: two_l1 * (1.0 + max_sq_norm),
            b_f: self.outer_gradient_bound(ball_radius),
            l_g: 0.0,
            b_g: (1.0 + max_sq_norm).sqrt(),
        })
    }

    /// `sup ||grad F_i(G(x))||` over `||x|| <= radius`. With `c_i = a_i - abar`
    /// and `s = c_i^T x` the squared norm is `(2 lambda1 s + 1)^2 ||a_i||^2 +
    /// 4 lambda1^2 s^2`, convex in `s`, so the supremum sits at `x = +-radius c_i/||c_i||`.
    pub fn outer_gradient_bound(&self, radius: f64) -> f64 {
        let l1 = self.lambda1;
        self.data
            .column_iter()
            .map(|a| {
                let c_norm = (a - &self.mean_col).norm();
                let a_sq = a.norm_squared();
                [radius * c_norm, -radius * c_norm]
                    .iter()
                    .map(|&s| ((2.0 * l1 * s + 1.0).powi(2) * a_sq + 4.0 * l1 * l1 * s * s).sqrt())
                    .fold(0.0_f64, f64::max)
            })
            .fold(0.0_f64, f64::max)
    }

    /// Largest smoothness constant of the individual `f_i = F_i o G`:
    /// `max_i 2 lambda1 ||a_i - abar||^2`. Bounds the outer-sampling variance.
    pub fn component_smoothness(&self) -> f64 {
        self.data
            .column_iter()
            .map(|a| (a - &self.mean_col).norm_squared())
            .fold(0.0_f64, f64::max)
            * 2.0
            * self.lambda1
    }

    /// Accelerated proximal gradient on the dense form until the gradient
    /// mapping norm drops below `tol`.
    pub fn reference_optimum(&self, tol: f64) -> Result<ReferenceSolution> {
        self.dense()
            .solve(&DVector::zeros(self.dim), tol, 2_000_000)
    }
}

/// Compositional view of a [`MeanVarInstance`]:
/// `G_j(x) = [x; a_j^T x]`, `F_i(z, y) = lambda1 (a_i^T z - y)^2 + a_i^T z`,
/// `h = lambda2 ||x||_1`.
#[derive(Debug, Clone)]
pub struct MeanVarOracle {
    data: DMatrix<f64>,
    lambda1: f64,
    lambda2: f64,
}

impl MeanVarOracle {
    pub fn lambda2(&self) -> f64 {
        self.lambda2
    }
}

impl CompositionalOracle for MeanVarOracle {
    fn n_outer(&self) -> usize {
        self.data.ncols()
    }
    fn n_inner(&self) -> usize {
        self.data.ncols()
    }
    fn dim_x(&self) -> usize {
        self.data.nrows()
    }
    fn dim_u(&self) -> usize {
        self.data.nrows() + 1
    }
    fn inner_value(&self, j: usize, x: &DVector<f64>) -> DVector<f64> {
        let n = x.len();
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n).copy_from(x);
        out[n] = self.data.column(j).dot(x);
        out
    }
    fn inner_jacobian(&self, j: usize, _x: &DVector<f64>) -> DMatrix<f64> {
        let n = self.data.nrows();
        let mut out = DMatrix::zeros(n + 1, n);
        out.rows_mut(0, n).fill_with_identity();
        out.row_mut(n).tr_copy_from(&self.data.column(j));
        out
    }
    fn outer_value(&self, i: usize, u: &DVector<f64>) -> f64 {
        let n = self.data.nrows();
        let az = self.data.column(i).dot(&u.rows(0, n));
        let r = az - u[n];
        self.lambda1 * r * r + az
    }
    fn outer_gradient(&self, i: usize, u: &DVector<f64>) -> DVector<f64> {
        let n = self.data.nrows();
        let a = self.data.column(i);
        let r = a.dot(&u.rows(0, n)) - u[n];
        let mut out = DVector::zeros(n + 1);
        out.rows_mut(0, n)
            .copy_from(&(a * (2.0 * self.lambda1 * r + 1.0)));
        out[n] = -2.0 * self.lambda1 * r;
        out
    }
    fn prox_h(&self, v: &DVector<f64>, step: f64) -> DVector<f64> {
        prox_l1(v, step * self.lambda2)
    }
    fn h_value(&self, x: &DVector<f64>) -> f64 {
        self.lambda2 * x.lp_norm(1)
    }
}

/// Versioned on-disk form of an instance. Derived fields are recomputed on
/// load and never trusted from the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub version: u32,
    pub kind: String,
    pub dim: usize,
    pub samples: usize,
    pub noise_v: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub seed: u64,
    /// Row-major `dim x samples`.
    pub data: Vec<f64>,
}

pub const INSTANCE_FILE_VERSION: u32 = 1;

impl InstanceFile {
    pub fn from_instance(inst: &MeanVarInstance) -> Self {
        let mut data = Vec::with_capacity(inst.dim * inst.samples);
        for r in 0..inst.dim {
            for c in 0..inst.samples {
                data.push(inst.data[(r, c)]);
            }
        }
        InstanceFile {
            version: INSTANCE_FILE_VERSION,
            kind: "meanvar".into(),
            dim: inst.dim,
            samples: inst.samples,
            noise_v: inst.noise_v,
            lambda1: inst.lambda1,
            lambda2: inst.lambda2,
            seed: inst.seed,
            data,
        }
    }

    pub fn into_instance(self) -> Result<MeanVarInstance> {
        if self.version != INSTANCE_FILE_VERSION {
            return Err(Error::InvalidInstance(format!(
                "unsupported instance version {}",
                self.version
            )));
        }
        if self.kind != "meanvar" {
            return Err(Error::InvalidInstance(format!(
                "unsupported instance kind {:?}",
                self.kind
            )));
        }
        if self.data.len() != self.dim * self.samples {
            return Err(Error::InvalidInstance(format!(
                "data has {} entries, expected {} x {}",
                self.data.len(),
                self.dim,
                self.samples
            )));
        }
        if !(self.lambda1 > 0.0) || !(self.lambda2 >= 0.0) || !(self.noise_v >= 0.0) {
            return Err(Error::InvalidInstance("invalid weights".into()));
        }
        let data = DMatrix::from_row_slice(self.dim, self.samples, &self.data);
        let inst =
            MeanVarInstance::from_data(data, self.noise_v, self.lambda1, self.lambda2, self.seed)?;
        inst.verify_derived(1e-12)?;
        Ok(inst)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("instance serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::InvalidInstance(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::{eval_objective, full_gradient, Metered};

    #[test]
    fn seeded_generation_is_bit_identical() {
        let a = generate_instance(6, 40, 1.0, 0.5, 0.1, 11).unwrap();
        let b = generate_instance(6, 40, 1.0, 0.5, 0.1, 11).unwrap();
        assert_eq!(a.data, b.data);
        let c = generate_instance(6, 40, 1.0, 0.5, 0.1, 12).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn shapes() {
        let inst = generate_instance(4, 9, 0.5, 1.0, 0.0, 3).unwrap();
        assert_eq!(inst.data.shape(), (4, 9));
        assert_eq!(inst.mean_col.len(), 4);
        assert_eq!(inst.quad_matrix.shape(), (4, 4));
    }

    #[test]
    fn objective_at_origin_is_zero() {
        let inst = generate_instance(5, 30, 2.0, 0.7, 0.3, 5).unwrap();
        let oracle = inst.as_compositional();
        let x = DVector::zeros(5);
        assert_eq!(oracle.inner_value(0, &x), DVector::zeros(6));
        assert_eq!(eval_objective(&mut Metered::new(&oracle), &x).unwrap(), 0.0);
    }

    #[test]
    fn averaged_jacobian_is_identity_over_mean() {
        let inst = generate_instance(3, 8, 1.0, 1.0, 0.0, 2).unwrap();
        let oracle = inst.as_compositional();
        let x = DVector::from_vec(vec![0.1, 0.2, 0.3]);
        let mut m = Metered::new(&oracle);
        let jac = crate::problem::full_inner_jacobian(&mut m, &x).unwrap();
        let mut want = DMatrix::zeros(4, 3);
        want.rows_mut(0, 3).fill_with_identity();
        want.row_mut(3).tr_copy_from(&inst.mean_col);
        assert!((jac - want).amax() < 1e-14);
    }

    #[test]
    fn gradient_matches_dense_form() {
        let inst = generate_instance(7, 50, 1.0, 0.8, 0.2, 8).unwrap();
        let oracle = inst.as_compositional();
        let mut s = RandomStream::new(99);
        for _ in 0..5 {
            let x = DVector::from_fn(7, |_, _| s.standard_normal());
            let g = full_gradient(&mut Metered::new(&oracle), &x).unwrap();
            let want = inst.dense_gradient(&x);
            assert!((&g - &want).norm() <= 1e-10 * want.norm());
        }
    }

    #[test]
    fn rank_deficient_means_zero_mu() {
        let inst = generate_instance(10, 6, 3.0, 1.0, 0.1, 4).unwrap();
        assert_eq!(inst.explicit_constants(1.0).unwrap().mu, 0.0);
    }

    #[test]
    fn lambda1_scaling_keeps_kappa() {
        let a = generate_instance(5, 60, 2.0, 1.0, 0.0, 21).unwrap();
        let b = MeanVarInstance::from_data(a.data.clone(), 2.0, 3.0, 0.0, 21).unwrap();
        let pa = a.explicit_constants(1.0).unwrap();
        let pb = b.explicit_constants(1.0).unwrap();
        assert!((pb.l - 3.0 * pa.l).abs() <= 1e-12 * pb.l);
        assert!((pb.mu - 3.0 * pa.mu).abs() <= 1e-10 * pb.mu);
        assert!((pa.kappa() - pb.kappa()).abs() <= 1e-9 * pa.kappa());
    }

    #[test]
    fn file_roundtrip_and_validation() {
        let inst = generate_instance(3, 5, 1.0, 0.5, 0.05, 17).unwrap();
        let file = InstanceFile::from_instance(&inst);
        let back = InstanceFile::from_json(&file.to_json())
            .unwrap()
            .into_instance()
            .unwrap();
        assert_eq!(back.data, inst.data);

        let mut bad = file.clone();
        bad.data.pop();
        assert!(bad.into_instance().is_err());
        let mut bad = file.clone();
        bad.version = 7;
        assert!(bad.into_instance().is_err());
        assert!(InstanceFile::from_json(r#"{"version":1}"#).is_err());
    }
}
