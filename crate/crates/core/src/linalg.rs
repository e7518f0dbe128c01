//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Mat = DMatrix<f64>;

pub fn sym_part(a: &Mat) -> Mat {
    (a + a.transpose()) * 0.5
}

pub fn asymmetry(a: &Mat) -> f64 {
    (a - a.transpose()).amax()
}

/// Eigenvalues of a symmetric matrix in ascending order.
pub fn sym_eigenvalues(a: &Mat) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut ev: Vec<f64> = SymmetricEigen::new(sym_part(a)).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

pub fn min_eigenvalue(a: &Mat) -> f64 {
    sym_eigenvalues(a).first().copied().unwrap_or(f64::INFINITY)
}

pub fn max_eigenvalue(a: &Mat) -> f64 {
    sym_eigenvalues(a).last().copied().unwrap_or(f64::NEG_INFINITY)
}

/// Inverse of a symmetric positive-definite matrix via Cholesky.
pub fn spd_inverse(a: &Mat) -> Result<Mat> {
    if a.nrows() == 0 {
        return Ok(Mat::zeros(0, 0));
    }
    let chol = nalgebra::Cholesky::new(sym_part(a))
        .ok_or_else(|| Error::Input("matrix is not positive definite".into()))?;
    Ok(chol.inverse())
}

/// Orthonormal basis of the kernel of `a` (columns) from its SVD. Singular values below
/// `tol` count as zero; returns the basis and all singular values in ascending order.
pub fn null_space(a: &Mat, tol: f64) -> (Mat, Vec<f64>) {
    let n = a.ncols();
    if n == 0 {
        return (Mat::zeros(0, 0), Vec::new());
    }
    let padded = if a.nrows() < n {
        let mut p = Mat::zeros(n, n);
        p.view_mut((0, 0), (a.nrows(), n)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let vt = svd.v_t.expect("right singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].total_cmp(&svd.singular_values[j]));
    let sv: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    let kept: Vec<usize> = order.iter().copied().filter(|&i| svd.singular_values[i] <= tol).collect();
    let mut basis = Mat::zeros(n, kept.len());
    for (c, &i) in kept.iter().enumerate() {
        basis.set_column(c, &vt.row(i).transpose());
    }
    (basis, sv)
}

/// Modified Gram-Schmidt (two passes) under the inner product `gram`; vectors whose
/// residual norm falls below `tol` are dropped.
pub fn orthonormalize(vectors: &[DVector<f64>], gram: &Mat, tol: f64) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut w = v.clone();
        for _ in 0..2 {
            for u in &out {
                let proj = (u.transpose() * gram * &w)[(0, 0)];
                w -= u * proj;
            }
        }
        let norm = (w.transpose() * gram * &w)[(0, 0)].max(0.0).sqrt();
        if norm > tol {
            out.push(w / norm);
        }
    }
    out
}

/// Least-squares solution of `a x = b` via SVD.
pub fn lstsq(a: &Mat, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-13 * (a.nrows().max(a.ncols()) as f64);
    svd.solve(b, eps).map_err(|e| Error::Numerical(format!("least squares failed: {e}")))
}

/// Trace of `a * b` without forming the product.
pub fn trace_product(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..a.nrows() {
        for k in 0..a.ncols() {
            s += a[(i, k)] * b[(k, i)];
        }
    }
    s
}

pub fn frobenius(a: &Mat) -> f64 {
    a.norm()
}

/// Block-diagonal matrix `a ⊕ b`.
pub fn direct_sum(a: &Mat, b: &Mat) -> Mat {
    let (p, q) = (a.nrows(), b.nrows());
    let mut out = Mat::zeros(p + q, p + q);
    out.view_mut((0, 0), (p, p)).copy_from(a);
    out.view_mut((p, p), (q, q)).copy_from(b);
    out
}

/// Least-squares slope of `ys` against `xs`.
pub fn fit_slope(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let n = xs.len();
    if n < 2 || ys.len() != n {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = ys.iter().sum::<f64>() / n as f64;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    if sxx == 0.0 {
        None
    } else {
        Some(sxy / sxx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn null_space_of_rank_one() {
        let a = Mat::from_row_slice(1, 3, &[1.0, 1.0, 0.0]);
        let (ns, sv) = null_space(&a, 1e-10);
        assert_eq!(ns.ncols(), 2);
        assert!((sv[2] - 2f64.sqrt()).abs() < 1e-12);
        assert!((&a * &ns).amax() < 1e-12);
    }

    #[test]
    fn slope_of_line() {
        let xs = [0.0, 1.0, 2.0, 3.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x - 1.0).collect();
        assert!((fit_slope(&xs, &ys).unwrap() - 2.5).abs() < 1e-12);
    }

    #[test]
    fn spd_inverse_rejects_indefinite() {
        let a = Mat::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(spd_inverse(&a).is_err());
    }
}
