//! The per-iteration updates of the accelerated loop.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};

/// `tau1 z + tau2 x~ + (1 - tau1 - tau2) y`.
pub fn coupling_point(
    z: &DVector<f64>,
    snap: &DVector<f64>,
    y: &DVector<f64>,
    tau1: f64,
    tau2: f64,
) -> Result<DVector<f64>> {
    check_len(z.len(), snap.len(), "coupling snapshot")?;
    check_len(z.len(), y.len(), "coupling gradient iterate")?;
    if tau1 < 0.0 || tau2 < 0.0 || tau1 + tau2 > 1.0 + 1e-15 {
        return Err(Error::InvalidParameter(format!(
            "coupling weights {tau1}, {tau2} do not form a convex combination"
        )));
    }
    let rest = 1.0 - tau1 - tau2;
    Ok(DVector::from_fn(z.len(), |i, _| {
        tau1 * z[i] + tau2 * snap[i] + rest * y[i]
    }))
}

/// `argmin_z <grad, z> + ||z - z_k||^2/(2 alpha) + h(z) = prox_{alpha h}(z_k - alpha grad)`.
pub fn mirror_step(
    z: &DVector<f64>,
    grad: &DVector<f64>,
    alpha: f64,
    prox: impl FnOnce(&DVector<f64>, f64) -> Result<DVector<f64>>,
) -> Result<DVector<f64>> {
    check_len(z.len(), grad.len(), "mirror step gradient")?;
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "mirror step size must be positive, got {alpha}"
        )));
    }
    prox(&(z - grad * alpha), alpha)
}

/// `argmin_y <grad, y> + (3L/2)||y - x||^2 + h(y) = prox_{h/(3L)}(x - grad/(3L))`.
pub fn gradient_step(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    l: f64,
    prox: impl FnOnce(&DVector<f64>, f64) -> Result<DVector<f64>>,
) -> Result<DVector<f64>> {
    check_len(x.len(), grad.len(), "gradient step gradient")?;
    if !(l > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "smoothness constant must be positive, got {l}"
        )));
    }
    let step = 1.0 / (3.0 * l);
    prox(&(x - grad * step), step)
}

/// Streaming `theta^j`-weighted average of `y_0, y_1, ...`.
///
/// The running mean is updated with the normalized weight
/// `theta^j / sum_{i<=j} theta^i = 1/q_j`, `q_j = 1 + q_{j-1}/theta`, so no
/// power of `theta` is ever formed.
#[derive(Debug, Clone)]
pub struct SnapshotAverager {
    theta: f64,
    q: f64,
    mean: Option<DVector<f64>>,
}

impl SnapshotAverager {
    pub fn new(theta: f64) -> Self {
        SnapshotAverager {
            theta,
            q: 0.0,
            mean: None,
        }
    }

    pub fn push(&mut self, y: &DVector<f64>) {
        self.q = 1.0 + self.q / self.theta;
        match self.mean.as_mut() {
            None => self.mean = Some(y.clone()),
            Some(mean) => {
                let w = 1.0 / self.q;
                mean.zip_apply(y, |m, yi| *m += w * (yi - *m));
            }
        }
    }

    pub fn finish(self) -> Option<DVector<f64>> {
        self.mean
    }
}

/// `(sum_j theta^j)^{-1} sum_j theta^j y_j`, `j = 0..m-1`.
pub fn snapshot_average(ys: &[DVector<f64>], theta: f64) -> Result<DVector<f64>> {
    if !(theta > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "averaging base must be positive, got {theta}"
        )));
    }
    let first = ys.first().ok_or(Error::EmptyBatch("snapshot_average"))?;
    let mut avg = SnapshotAverager::new(theta);
    for y in ys {
        check_len(first.len(), y.len(), "averaged iterate")?;
        avg.push(y);
    }
    Ok(avg.finish().expect("nonempty"))
}
