//! Synthetic multi-level family with affine inner levels and a quadratic last
//! level, for which every smoothness constant is available in closed form.
//!
//! Levels `k < p` are `f_{k,j}(u) = W_{k,j} u + c_{k,j}` with `||W_{k,j}||_2 = 1`,
//! the last level is `f_{p,j}(w) = (1/2)||w - t_j||^2` and
//! `h = (mu/2)||x||^2 + lambda ||x||_1`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::levels::{LevelConstants, MultiLevelOracle};
use crate::problem::SmoothnessProfile;
use crate::prox::prox_l1_shifted;
use crate::rng::{tags, RandomStream};

use super::reference::DenseQuadraticL1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearLevelsConfig {
    /// Summands per level, `n_1..n_p`.
    pub counts: Vec<usize>,
    /// `N_1..N_{p+1}` with `N_{p+1} = 1`.
    pub dims: Vec<usize>,
    pub mu: f64,
    pub lambda: f64,
    /// Relative size of the per-component perturbation of each level's
    /// common matrix.
    pub spread: f64,
    /// Make all components of a level equal.
    pub identical: bool,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct LinearLevels {
    dims: Vec<usize>,
    weights: Vec<Vec<DMatrix<f64>>>,
    offsets: Vec<Vec<DVector<f64>>>,
    targets: Vec<DVector<f64>>,
    mu: f64,
    lambda: f64,
}

fn gaussian_matrix(s: &mut RandomStream, rows: usize, cols: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            m[(r, c)] = s.standard_normal();
        }
    }
    m
}

fn gaussian_vector(s: &mut RandomStream, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| s.standard_normal())
}

pub(crate) fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    m.clone().svd(false, false).singular_values.max()
}

/// Builds a linear-levels instance from `config`.
pub fn make_multilevel_linear(config: &LinearLevelsConfig) -> Result<LinearLevels> {
    let p = config.counts.len();
    if p < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least two levels, got {p}"
        )));
    }
    if config.dims.len() != p + 1 || config.dims[p] != 1 {
        return Err(Error::InvalidParameter(format!(
            "{p} levels need {} dimensions ending in 1, got {:?}",
            p + 1,
            config.dims
        )));
    }
    if config.dims.contains(&0) || config.counts.contains(&0) {
        return Err(Error::InvalidParameter(
            "dimensions and counts must be positive".into(),
        ));
    }
    if !(config.mu >= 0.0) || !(config.lambda >= 0.0) || !(config.spread >= 0.0) {
        return Err(Error::InvalidParameter(
            "mu, lambda and spread must be nonnegative".into(),
        ));
    }
    let root = RandomStream::new(config.seed);
    let mut weights = Vec::with_capacity(p - 1);
    let mut offsets = Vec::with_capacity(p - 1);
    for k in 0..p - 1 {
        let (rows, cols) = (config.dims[k + 1], config.dims[k]);
        let level = root.child(tags::INSTANCE_LEVELS, k as u64);
        let base = gaussian_matrix(&mut level.child(tags::INSTANCE_FACTOR, 0), rows, cols);
        let mut ws = Vec::with_capacity(config.counts[k]);
        let mut cs = Vec::with_capacity(config.counts[k]);
        for j in 0..config.counts[k] {
            let key = if config.identical { 0 } else { j as u64 };
            let mut s = level.child(tags::INSTANCE_COLUMNS, key);
            let noise = gaussian_matrix(&mut s, rows, cols);
            let mut w = &base + noise * config.spread;
            let norm = spectral_norm(&w);
            if norm > 0.0 {
                w /= norm;
            }
            ws.push(w);
            cs.push(gaussian_vector(&mut s, rows) * 0.5);
        }
        weights.push(ws);
        offsets.push(cs);
    }
    let last = root.child(tags::INSTANCE_LEVELS, (p - 1) as u64);
    let targets = (0..config.counts[p - 1])
        .map(|j| {
            let key = if config.identical { 0 } else { j as u64 };
            gaussian_vector(
                &mut last.child(tags::INSTANCE_COLUMNS, key),
                config.dims[p - 1],
            )
        })
        .collect();
    Ok(LinearLevels {
        dims: config.dims.clone(),
        weights,
        offsets,
        targets,
        mu: config.mu,
        lambda: config.lambda,
    })
}

impl LinearLevels {
    /// The affine map `phi_{p-1}(x) = P x + d` of the averaged inner levels.
    pub fn chain(&self) -> (DMatrix<f64>, DVector<f64>) {
        let mut p_mat = DMatrix::identity(self.dims[0], self.dims[0]);
        let mut d = DVector::zeros(self.dims[0]);
        for (ws, cs) in self.weights.iter().zip(&self.offsets) {
            let n = ws.len() as f64;
            let w_bar = ws
                .iter()
                .fold(DMatrix::zeros(ws[0].nrows(), ws[0].ncols()), |a, w| a + w)
                / n;
            let c_bar = cs.iter().fold(DVector::zeros(cs[0].len()), |a, c| a + c) / n;
            d = &w_bar * d + c_bar;
            p_mat = w_bar * p_mat;
        }
        (p_mat, d)
    }

    /// Dense form `(1/2) x^T (P^T P + mu I) x + (P^T (d - tbar))^T x + const + lambda ||x||_1`.
    pub fn dense(&self) -> DenseQuadraticL1 {
        let (p_mat, d) = self.chain();
        let n = self.targets.len() as f64;
        let t_bar = self
            .targets
            .iter()
            .fold(DVector::zeros(d.len()), |a, t| a + t)
            / n;
        let spread =
            self.targets.iter().map(|t| t.norm_squared()).sum::<f64>() / n - t_bar.norm_squared();
        let r = &d - &t_bar;
        let dim = self.dims[0];
        DenseQuadraticL1::new(
            p_mat.tr_mul(&p_mat) + DMatrix::identity(dim, dim) * self.mu,
            p_mat.tr_mul(&r),
            0.5 * r.norm_squared() + 0.5 * spread,
            self.lambda,
        )
    }

    /// Per-level constants; the last level's Jacobian bound is taken over
    /// the image of `{||x|| <= radius}`.
    pub fn level_constants(&self, radius: f64) -> LevelConstants {
        let p = self.levels();
        let mut b: Vec<f64> = self
            .weights
            .iter()
            .map(|ws| ws.iter().map(spectral_norm).fold(0.0, f64::max))
            .collect();
        let mut l = vec![0.0; p - 1];
        let (p_mat, d) = self.chain();
        let reach = spectral_norm(&p_mat) * radius;
        let b_last = self
            .targets
            .iter()
            .map(|t| (&d - t).norm() + reach)
            .fold(0.0, f64::max);
        b.push(b_last);
        l.push(1.0);
        LevelConstants { b, l }
    }

    /// `L = max(||P||^2, mu)`: every `f_{p,j} o phi_{p-1}` has Hessian `P^T P`.
    pub fn profile(&self, radius: f64) -> SmoothnessProfile {
        let (p_mat, _) = self.chain();
        let consts = self.level_constants(radius);
        let p = self.levels();
        SmoothnessProfile {
            l: spectral_norm(&p_mat).powi(2).max(self.mu),
            mu: self.mu,
            l_f: 1.0,
            b_f: consts.b[p - 1],
            l_g: 0.0,
            b_g: consts.gamma(p - 1),
        }
    }
}

impl MultiLevelOracle for LinearLevels {
    fn levels(&self) -> usize {
        self.weights.len() + 1
    }
    fn count(&self, k: usize) -> usize {
        if k < self.weights.len() {
            self.weights[k].len()
        } else {
            self.targets.len()
        }
    }
    fn dim(&self, k: usize) -> usize {
        self.dims[k]
    }
    fn level_value(&self, k: usize, j: usize, u: &DVector<f64>) -> DVector<f64> {
        if k < self.weights.len() {
            &self.weights[k][j] * u + &self.offsets[k][j]
        } else {
            DVector::from_element(1, 0.5 * (u - &self.targets[j]).norm_squared())
        }
    }
    fn level_jacobian(&self, k: usize, j: usize, u: &DVector<f64>) -> DMatrix<f64> {
        if k < self.weights.len() {
            self.weights[k][j].clone()
        } else {
            let d = u - &self.targets[j];
            DMatrix::from_row_slice(1, d.len(), d.as_slice())
        }
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
