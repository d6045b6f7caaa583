//! Closed-form proximal operators for `l1` regularizers.

use nalgebra::DVector;

use crate::error::{check_len, Error, Result};

/// Componentwise soft threshold `sign(v_i) max(|v_i| - threshold, 0)`.
pub fn prox_l1(v: &DVector<f64>, threshold: f64) -> DVector<f64> {
    debug_assert!(threshold >= 0.0);
    v.map(|vi| soft_threshold(vi, threshold))
}

#[inline]
pub(crate) fn soft_threshold(vi: f64, threshold: f64) -> f64 {
    let mag = vi.abs() - threshold;
    if mag > 0.0 {
        mag.copysign(vi)
    } else {
        0.0
    }
}

/// `argmin_u lambda ||u||_1 + (mu_t/2)||u - x0||^2 + ||u - v||^2 / (2 step)`.
pub fn prox_l1_shifted(
    v: &DVector<f64>,
    step: f64,
    lambda: f64,
    mu_t: f64,
    x0: &DVector<f64>,
) -> Result<DVector<f64>> {
    if !(step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "prox step must be positive, got {step}"
        )));
    }
    check_len(v.len(), x0.len(), "prox center")?;
    let (w, step_eff) = fold_quadratic(v, step, mu_t, x0);
    Ok(prox_l1(&w, lambda * step_eff))
}

/// Folds `(mu/2)||y - center||^2` into the prox quadratic: returns `(w, s)` with
/// `prox_{step}(h + (mu/2)||. - center||^2)(v) = prox_{s}(h)(w)`.
pub(crate) fn fold_quadratic(
    v: &DVector<f64>,
    step: f64,
    mu: f64,
    center: &DVector<f64>,
) -> (DVector<f64>, f64) {
    if mu == 0.0 {
        return (v.clone(), step);
    }
    let precision = 1.0 / step + mu;
    let w = v.zip_map(center, |vi, ci| (vi / step + mu * ci) / precision);
    (w, 1.0 / precision)
}
