//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Root mean square.
pub fn rms(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    (xs.iter().map(|x| x * x).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Orthonormal basis of `{v : sum(v) = 0}` as the columns of an `n × (n-1)` matrix.
///
/// Built from the Householder reflection that sends `e_1` to `1/sqrt(n)`; its
/// remaining columns are orthonormal and orthogonal to the ones vector.
pub fn sum_zero_basis(n: usize) -> DMatrix<f64> {
    assert!(n >= 2);
    let s = (n as f64).sqrt();
    let mut v = DVector::from_element(n, 1.0 / s);
    v[0] -= 1.0;
    let vv = v.dot(&v);
    let h = DMatrix::identity(n, n) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, n - 1).into_owned()
}

/// Least-squares solution of `x b = y` with the unscaled covariance `(XᵀX)⁻¹`.
///
/// Fails when `x` is rank deficient.
pub struct LeastSquares {
    pub coef: DVector<f64>,
    pub xtx_inv: DMatrix<f64>,
    pub residuals: DVector<f64>,
}

pub fn least_squares(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LeastSquares> {
    let (n, k) = x.shape();
    if n < k {
        return Err(Error::Invalid(format!("{n} observations for {k} regressors")));
    }
    let qr = x.clone().qr();
    let r = qr.r();
    let scale = (0..k).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
    if (0..k).any(|i| r[(i, i)].abs() <= 1e-10 * scale.max(f64::MIN_POSITIVE)) {
        return Err(Error::Invalid("design matrix is rank deficient".into()));
    }
    let qty = qr.q().transpose() * y;
    let coef = r
        .solve_upper_triangular(&qty)
        .ok_or_else(|| Error::Invalid("design matrix is rank deficient".into()))?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::Invalid("design matrix is rank deficient".into()))?;
    let xtx_inv = &r_inv * r_inv.transpose();
    let residuals = y - x * &coef;
    Ok(LeastSquares {
        coef,
        xtx_inv,
        residuals,
    })
}

/// Drops columns that are identically zero. Returns the kept matrix and the
/// original indices of the kept columns.
pub fn drop_zero_columns(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<usize>) {
    let keep: Vec<usize> = (0..x.ncols())
        .filter(|&j| x.column(j).iter().any(|v| *v != 0.0))
        .collect();
    let m = DMatrix::from_fn(x.nrows(), keep.len(), |i, k| x[(i, keep[k])]);
    (m, keep)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basis_is_orthonormal_and_sums_to_zero() {
        for n in 2..7 {
            let z = sum_zero_basis(n);
            let ztz = z.transpose() * &z;
            assert!((ztz - DMatrix::identity(n - 1, n - 1)).abs().max() < 1e-14);
            for j in 0..n - 1 {
                assert!(z.column(j).sum().abs() < 1e-14);
            }
        }
    }

    #[test]
    fn least_squares_recovers_exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 3.0]);
        let y = DVector::from_vec(vec![1.0, 3.0, 5.0, 7.0]);
        let ls = least_squares(&x, &y).unwrap();
        assert!((ls.coef[0] - 1.0).abs() < 1e-12 && (ls.coef[1] - 2.0).abs() < 1e-12);
        assert!(ls.residuals.amax() < 1e-12);
        let direct = (x.transpose() * &x).try_inverse().unwrap();
        assert!((direct - ls.xtx_inv).abs().max() < 1e-12);
    }

    #[test]
    fn rank_deficient_rejected() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 1.0, 2.0, 1.0, 2.0]);
        assert!(least_squares(&x, &DVector::zeros(3)).is_err());
    }

    #[test]
    fn rms_and_mean() {
        assert_eq!(mean(&[1.0, 2.0, 3.0]), 2.0);
        assert_eq!(rms(&[3.0, -3.0]), 3.0);
    }
}
