//! Independent reference computations used to check the closed forms:
//! scalar minimization, finite differences and iterative eigenvalues.

use nalgebra::{DMatrix, DVector};

/// Golden-section minimization of a unimodal `f` on `[lo, hi]`.
pub fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Minimizer of a convex scalar `f` near `center`: a coarse grid over
/// `[center - radius, center + radius]` brackets the minimum, then golden
/// section refines it to `tol`.
pub fn scalar_argmin(f: impl Fn(f64) -> f64, center: f64, radius: f64, tol: f64) -> f64 {
    const GRID: usize = 400;
    let lo = center - radius;
    let h = 2.0 * radius / GRID as f64;
    let best =
        (0..=GRID)
            .map(|i| (i, f(lo + h * i as f64)))
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );
    let a = lo + h * best.0.saturating_sub(1) as f64;
    let b = lo + h * (best.0 + 1).min(GRID) as f64;
    golden_section(f, a, b, tol)
}

/// Zero of a nondecreasing `g` on `[lo, hi]` by bisection, to machine
/// precision. For a convex scalar objective, pass its (sub)derivative.
pub fn monotone_root(g: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Central differences `(f(x + h e_i) - f(x - h e_i)) / (2h)`.
pub fn central_difference(
    f: impl Fn(&DVector<f64>) -> f64,
    x: &DVector<f64>,
    h: f64,
) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| {
        let mut plus = x.clone();
        let mut minus = x.clone();
        plus[i] += h;
        minus[i] -= h;
        (f(&plus) - f(&minus)) / (2.0 * h)
    })
}

/// `||a - b|| / max(||b||, floor)`.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>, floor: f64) -> f64 {
    (a - b).norm() / b.norm().max(floor)
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration, stopped when the Rayleigh quotient settles to `tol` relative.
pub fn power_iteration(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let n = m.nrows();
    // deterministic start with every eigen-direction represented generically
    let mut v = DVector::from_fn(n, |i, _| 1.0 + (i as f64 * 0.618_033_988_7).fract());
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..max_iter {
        let w = m * &v;
        let next = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        if (next - lambda).abs() <= tol * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}

/// Smallest eigenvalue of a symmetric positive semidefinite matrix, by power
/// iteration on `lambda_max I - M`.
pub fn smallest_eigenvalue(m: &DMatrix<f64>, tol: f64, max_iter: usize) -> f64 {
    let top = power_iteration(m, tol * 1e-2, max_iter);
    let n = m.nrows();
    let shifted = DMatrix::identity(n, n) * top - m;
    top - power_iteration(&shifted, tol * 1e-2, max_iter)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn golden_section_finds_parabola_vertex() {
        let x = golden_section(|t| (t - 0.3).powi(2), -2.0, 2.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-10);
        let y = scalar_argmin(|t| (t + 4.2).abs(), 0.0, 10.0, 1e-12);
        assert!((y + 4.2).abs() < 1e-10);
        let r = monotone_root(|t| t.powi(3) - 2.0, 0.0, 4.0);
        assert!((r - 2f64.cbrt()).abs() < 1e-15);
    }

    #[test]
    fn power_iteration_on_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 0.5]));
        assert!((power_iteration(&m, 1e-14, 10_000) - 3.0).abs() < 1e-10);
        assert!((smallest_eigenvalue(&m, 1e-12, 100_000) - 0.5).abs() < 1e-8);
    }
}
