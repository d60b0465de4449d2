//! Small dense linear-algebra helpers shared by the estimators: guarded
//! symmetric inversion, positive-semidefinite projection, and fixed-order
//! Gauss-Legendre quadrature.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Condition-number ceiling for matrix inversions. Beyond this the inversion
/// is reported as a rank failure instead of returning noise.
pub const COND_LIMIT: f64 = 1e10;

/// Order-7 Gauss-Legendre nodes and weights on [-1, 1].
const GL7: [(f64, f64); 7] = [
    (0.0, 0.4179591836734694),
    (-0.4058451513773972, 0.3818300505051189),
    (0.4058451513773972, 0.3818300505051189),
    (-0.7415311855993945, 0.27970539148927664),
    (0.7415311855993945, 0.27970539148927664),
    (-0.9491079123427585, 0.1294849661688697),
    (0.9491079123427585, 0.1294849661688697),
];

/// Nodes and weights mapped to the interval (a, b).
pub fn gl7(a: f64, b: f64) -> [(f64, f64); 7] {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    GL7.map(|(x, w)| (mid + half * x, half * w))
}

/// Integrate a scalar function over (a, b) with a single order-7 panel.
pub fn integrate_gl7(a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    gl7(a, b).iter().map(|&(x, w)| w * f(x)) .sum()
}

/// Integrate a scalar function with `panels` equal order-7 panels.
pub fn integrate_gl7_panels(a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let h = (b - a) / panels as f64;
    (0..panels)
        .map(|k| integrate_gl7(a + k as f64 * h, a + (k + 1) as f64 * h, &mut f))
        .sum()
}

/// Symmetrize a square matrix in place: (M + M^t) / 2.
pub fn symmetrize(m: &mut DMatrix<f64>) {
    let (r, c) = m.shape();
    debug_assert_eq!(r, c);
    for i in 0..r {
        for j in (i + 1)..c {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// Inverse of a symmetric matrix, guarded by the condition-number ceiling.
///
/// `time` only labels the returned error. Zero-dimensional matrices invert
/// to themselves.
pub fn sym_inverse(m: &DMatrix<f64>, time: f64) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let eig = m.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let min_abs = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &v| a.min(v.abs()));
    if !(max_abs.is_finite()) || min_abs <= 0.0 || max_abs / min_abs > COND_LIMIT {
        let cond = if min_abs > 0.0 { max_abs / min_abs } else { f64::INFINITY };
        return Err(Error::RankFailure { time, cond });
    }
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let u = eig.eigenvectors.column(k);
        let lam = eig.eigenvalues[k];
        inv.syger(1.0 / lam, &u.clone_owned(), &u.clone_owned(), 1.0);
    }
    // syger fills only the lower triangle
    for i in 0..n {
        for j in (i + 1)..n {
            inv[(i, j)] = inv[(j, i)];
        }
    }
    Ok(inv)
}

/// Inverse of a symmetric positive-definite information-type matrix.
/// Unlike [`sym_inverse`] there is no condition ceiling; weakly identified
/// parameters legitimately produce huge variances. Errors only when the
/// matrix is numerically indefinite or singular.
pub fn sym_inverse_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if n == 0 {
        return Ok(m.clone());
    }
    let eig = m.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if !max.is_finite() || max <= 0.0 || min <= 1e-14 * max {
        return Err(Error::IndefiniteInformation);
    }
    if max / min > COND_LIMIT {
        log::warn!("information matrix condition {:.3e} beyond {COND_LIMIT:.0e}", max / min);
    }
    let mut inv = DMatrix::zeros(n, n);
    for k in 0..n {
        let u = eig.eigenvectors.column(k).clone_owned();
        inv.syger(1.0 / eig.eigenvalues[k], &u, &u, 1.0);
    }
    for i in 0..n {
        for j in (i + 1)..n {
            inv[(i, j)] = inv[(j, i)];
        }
    }
    Ok(inv)
}

/// Project a symmetric matrix onto the PSD cone by flooring negative
/// eigenvalues at zero. Returns the repaired matrix and whether any
/// eigenvalue below `-rel_floor * trace` was clipped.
pub fn psd_project(m: &DMatrix<f64>, rel_floor: f64) -> (DMatrix<f64>, bool) {
    let n = m.nrows();
    if n == 0 {
        return (m.clone(), false);
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = sym.clone().symmetric_eigen();
    let min = eig.eigenvalues.min();
    if min >= 0.0 {
        return (sym, false);
    }
    let trace = sym.trace().abs();
    let material = min < -rel_floor * trace.max(f64::MIN_POSITIVE);
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let lam = eig.eigenvalues[k].max(0.0);
        if lam > 0.0 {
            let u = eig.eigenvectors.column(k).clone_owned();
            out.syger(lam, &u, &u, 1.0);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            out[(i, j)] = out[(j, i)];
        }
    }
    (out, material)
}

/// Factor L of a symmetric PSD matrix with M = L L^t, tolerating zero
/// eigenvalues (used for sampling Gaussian increments).
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    let n = m.nrows();
    if n == 0 {
        return m.clone();
    }
    let eig = m.clone().symmetric_eigen();
    let mut l = eig.eigenvectors.clone();
    for k in 0..n {
        let s = eig.eigenvalues[k].max(0.0).sqrt();
        l.column_mut(k).scale_mut(s);
    }
    l
}

/// Pseudo-inverse of a symmetric matrix dropping eigenvalues below
/// `rel_tol * max |eigenvalue|`; returns the inverse and the retained rank.
pub fn sym_pseudo_inverse(m: &DMatrix<f64>, rel_tol: f64) -> (DMatrix<f64>, usize) {
    let n = m.nrows();
    if n == 0 {
        return (m.clone(), 0);
    }
    let eig = m.clone().symmetric_eigen();
    let max_abs = eig.eigenvalues.iter().fold(0.0_f64, |a, &v| a.max(v.abs()));
    let tol = rel_tol * max_abs;
    let mut inv = DMatrix::zeros(n, n);
    let mut rank = 0;
    for k in 0..n {
        let lam = eig.eigenvalues[k];
        if lam.abs() > tol && lam > 0.0 {
            rank += 1;
            let u = eig.eigenvectors.column(k).clone_owned();
            inv.syger(1.0 / lam, &u, &u, 1.0);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            inv[(i, j)] = inv[(j, i)];
        }
    }
    (inv, rank)
}

/// Loewner order check: is `b - a` positive semidefinite up to `tol`?
pub fn loewner_leq(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let d = b - a;
    if d.nrows() == 0 {
        return true;
    }
    let eig = d.symmetric_eigen();
    eig.eigenvalues.min() >= -tol
}

/// Solve f(x) = target for increasing f by bisection on [lo, hi].
pub fn bisect_increasing(
    mut lo: f64,
    mut hi: f64,
    target: f64,
    tol: f64,
    max_iter: usize,
    f: impl Fn(f64) -> f64,
) -> f64 {
    for _ in 0..max_iter {
        if hi - lo <= tol {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if f(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Quadratic form z^t M z.
pub fn quad_form(m: &DMatrix<f64>, z: &DVector<f64>) -> f64 {
    (z.transpose() * m * z)[(0, 0)]
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gl7_exact_for_degree_13() {
        // integral of x^13 over (0, 2) = 2^14 / 14
        let got = integrate_gl7(0.0, 2.0, |x| x.powi(13));
        assert_relative_eq!(got, 2f64.powi(14) / 14.0, max_relative = 1e-13);
    }

    #[test]
    fn sym_inverse_matches_direct() {
        let m = DMatrix::from_row_slice(2, 2, &[3.0, 1.0, 1.0, 1.0]);
        let inv = sym_inverse(&m, 0.0).unwrap();
        let expect = DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 1.5]);
        assert_relative_eq!(inv, expect, epsilon = 1e-12);
    }

    #[test]
    fn sym_inverse_rejects_singular() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(sym_inverse(&m, 1.5), Err(crate::error::Error::RankFailure { .. })));
    }

    #[test]
    fn psd_projection_clips_negative_modes() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let (p, repaired) = psd_project(&m, 1e-8);
        assert!(repaired);
        assert!(p.clone().symmetric_eigen().eigenvalues.min() >= -1e-14);
        assert_relative_eq!(p[(0, 0)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[(1, 1)], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn bisection_inverts_monotone_map() {
        let x = bisect_increasing(0.0, 10.0, 2.0, 1e-12, 200, |t| t * t);
        assert_relative_eq!(x, 2f64.sqrt(), epsilon = 1e-10);
    }
}
