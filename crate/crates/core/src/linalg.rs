//! Small dense linear-algebra routines that need to be deterministic.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("Jacobi SVD did not converge after {0} sweeps")]
    NotConverged(usize),
    #[error("matrix contains non-finite entries")]
    NonFinite,
}

/// Thin SVD `a = u · diag(s) · vᵀ` with `k = min(m, n)` singular values in
/// descending order.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: Array2<f64>,
    pub s: Array1<f64>,
    pub v: Array2<f64>,
}

const MAX_SWEEPS: usize = 100;

/// One-sided Jacobi SVD (Hestenes). Rotations are applied to whichever of
/// `a` or `aᵀ` has fewer columns. Convergence: every column pair has
/// `|⟨a_i, a_j⟩| <= tol · ‖a_i‖‖a_j‖`.
pub fn svd(a: ArrayView2<f64>, tol: f64) -> Result<Svd, LinalgError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let (m, n) = a.dim();
    if n <= m {
        jacobi_tall(a.to_owned(), tol)
    } else {
        let t = jacobi_tall(a.t().to_owned(), tol)?;
        Ok(Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        })
    }
}

fn jacobi_tall(mut w: Array2<f64>, tol: f64) -> Result<Svd, LinalgError> {
    let (m, n) = w.dim();
    let mut v = Array2::<f64>::eye(n);
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    let (x, y) = (w[[r, p]], w[[r, q]]);
                    alpha += x * x;
                    beta += y * y;
                    gamma += x * y;
                }
                if gamma == 0.0 || gamma.abs() <= tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let (x, y) = (w[[r, p]], w[[r, q]]);
                    w[[r, p]] = c * x - s * y;
                    w[[r, q]] = s * x + c * y;
                }
                for r in 0..n {
                    let (x, y) = (v[[r, p]], v[[r, q]]);
                    v[[r, p]] = c * x - s * y;
                    v[[r, q]] = s * x + c * y;
                }
            }
        }
        if !rotated {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LinalgError::NotConverged(MAX_SWEEPS));
    }

    let norms: Vec<f64> = (0..n)
        .map(|j| w.column(j).iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| norms[b].total_cmp(&norms[a]).then(a.cmp(&b)));

    let mut u = Array2::zeros((m, n));
    let mut vs = Array2::zeros((n, n));
    let mut s = Array1::zeros(n);
    for (k, &j) in order.iter().enumerate() {
        s[k] = norms[j];
        if norms[j] > 0.0 {
            for r in 0..m {
                u[[r, k]] = w[[r, j]] / norms[j];
            }
        }
        vs.column_mut(k).assign(&v.column(j));
    }
    Ok(Svd { u, s, v: vs })
}

/// Largest eigenvalue of the symmetric PSD matrix `aᵀa`, by power iteration
/// from a fixed low-discrepancy start vector.
pub fn gram_spectral_norm_sq(a: ArrayView2<f64>, iters: usize) -> f64 {
    let n = a.ncols();
    if n == 0 || a.nrows() == 0 {
        return 0.0;
    }
    let mut x = Array1::from_shape_fn(n, |i| 1.0 + ((i + 1) as f64 * 0.754_877_666).fract());
    x /= x.dot(&x).sqrt();
    let mut lambda = 0.0;
    for _ in 0..iters {
        let y = a.t().dot(&a.dot(&x));
        let norm = y.dot(&y).sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        lambda = x.dot(&y);
        x = y / norm;
    }
    lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn reconstruct(s: &Svd) -> Array2<f64> {
        let mut us = s.u.clone();
        for (k, mut c) in us.columns_mut().into_iter().enumerate() {
            c *= s.s[k];
        }
        us.dot(&s.v.t())
    }

    #[test]
    fn diag_matrix() {
        let a = array![[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.0, 0.0, 2.0]];
        let d = svd(a.view(), 1e-12).unwrap();
        assert_eq!(d.s.to_vec(), vec![3.0, 2.0, 1.0]);
        assert!((d.v[[1, 0]].abs() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn reconstructs_wide_and_tall() {
        let a = array![
            [1.0, -2.0, 0.5, 3.0, 0.0],
            [0.3, 1.1, -0.7, 2.0, 1.0],
            [2.0, 0.0, 1.0, -1.0, 0.2]
        ];
        for m in [a.clone(), a.t().to_owned()] {
            let d = svd(m.view(), 1e-12).unwrap();
            let r = reconstruct(&d);
            assert!((&r - &m).iter().all(|e| e.abs() < 1e-12));
            let vtv = d.v.t().dot(&d.v);
            assert!((&vtv - &Array2::<f64>::eye(3)).iter().all(|e| e.abs() < 1e-12));
        }
    }

    #[test]
    fn rejects_nan() {
        let a = array![[1.0, f64::NAN]];
        assert_eq!(svd(a.view(), 1e-10).unwrap_err(), LinalgError::NonFinite);
    }

    #[test]
    fn power_iteration() {
        let a = array![[2.0, 0.0], [0.0, 1.0]];
        assert!((gram_spectral_norm_sq(a.view(), 200) - 4.0).abs() < 1e-9);
    }
}
