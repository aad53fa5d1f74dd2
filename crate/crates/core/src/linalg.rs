//! Small dense helpers shared by the model modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative pivot floor below which a Gram matrix is treated as singular.
const PIVOT_FLOOR: f64 = 1e-12;

/// Cholesky factorization that also rejects pivots that are tiny relative to
/// the largest diagonal entry.
pub(crate) fn cholesky_checked(a: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let scale = a.diagonal().iter().cloned().fold(0.0_f64, f64::max);
    if !(scale.is_finite() && scale > 0.0) {
        return None;
    }
    let chol = a.cholesky()?;
    let l = chol.l_dirty();
    let floor = (PIVOT_FLOOR * scale).sqrt();
    if (0..l.nrows()).all(|i| l[(i, i)] > floor) {
        Some(chol)
    } else {
        None
    }
}

/// `log det` of a matrix from its Cholesky factor.
pub(crate) fn chol_logdet(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Ordinary least squares via the normal equations.
pub(crate) struct Ols {
    pub coef: DVector<f64>,
    pub residuals: DVector<f64>,
    pub rss: f64,
}

pub(crate) fn ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<Ols> {
    let xtx = x.tr_mul(x);
    let chol = cholesky_checked(xtx)
        .ok_or_else(|| Error::RankDeficient(format!("{} columns are not linearly independent", x.ncols())))?;
    let coef = chol.solve(&x.tr_mul(y));
    let residuals = y - x * &coef;
    let rss = residuals.norm_squared();
    Ok(Ols {
        coef,
        residuals,
        rss,
    })
}

/// Subtract the mean from a vector.
pub(crate) fn centered(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.map(|x| x - mean)
}

/// Horizontal concatenation of two matrices with the same row count.
pub(crate) fn hcat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    debug_assert_eq!(a.nrows(), b.nrows());
    let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
    out.columns_mut(0, a.ncols()).copy_from(a);
    out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
    out
}
