use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{lambda_weights, SmoothParams};
use crate::basis::EigenBasis;
use crate::data::SpatialDataset;
use crate::error::{Error, Result};
use crate::linalg::{chol_logdet, cholesky_checked};

/// `E~ = [x_k o E ...]` over the varying coefficients, and the diagonal of
/// `V~(Theta)` with entries `sqrt(tau_k * lambda_l(alpha_k))`.
#[derive(Debug, Clone)]
pub struct ExpandedDesign {
    pub e_tilde: DMatrix<f64>,
    pub v_diag: Vec<f64>,
    /// Design column index of each `L`-column block.
    pub blocks: Vec<usize>,
}

/// Hadamard-expand the eigenvectors by each varying covariate.
pub(crate) fn expand_columns(x: &DMatrix<f64>, basis: &EigenBasis, blocks: &[usize]) -> DMatrix<f64> {
    let e = basis.vectors();
    let (n, l) = (e.nrows(), e.ncols());
    let mut out = DMatrix::zeros(n, l * blocks.len());
    for (b, &k) in blocks.iter().enumerate() {
        let xk = x.column(k);
        for j in 0..l {
            let mut dst = out.column_mut(b * l + j);
            dst.copy_from(&e.column(j));
            dst.component_mul_assign(&xk);
        }
    }
    out
}

pub(crate) fn v_diag_for(basis: &EigenBasis, params: &SmoothParams) -> Result<Vec<f64>> {
    params.validate()?;
    let mut v = Vec::with_capacity(basis.n_vectors() * params.n_varying());
    for c in params.coefs.iter().flatten() {
        let w = lambda_weights(basis.values(), c.alpha)?;
        v.extend(w.into_iter().map(|lw| (c.tau * lw).sqrt()));
    }
    Ok(v)
}

pub fn design_expansion(
    data: &SpatialDataset,
    basis: &EigenBasis,
    params: &SmoothParams,
) -> Result<ExpandedDesign> {
    if params.coefs.len() != data.n_coefs() {
        return Err(Error::ShapeError(format!(
            "{} smoothness entries for {} coefficients",
            params.coefs.len(),
            data.n_coefs()
        )));
    }
    if basis.n_sites() != data.n_sites() {
        return Err(Error::ShapeError(format!(
            "basis has {} sites, dataset {}",
            basis.n_sites(),
            data.n_sites()
        )));
    }
    let blocks: Vec<usize> = (0..data.n_coefs()).filter(|&k| params.coefs[k].is_some()).collect();
    if blocks.is_empty() {
        return Err(Error::InvalidInput("at least one coefficient must vary".into()));
    }
    Ok(ExpandedDesign {
        e_tilde: expand_columns(&data.x, basis, &blocks),
        v_diag: v_diag_for(basis, params)?,
        blocks,
    })
}

/// Cross products of `y`, `X` and `E~`, so that each evaluation of the
/// restricted likelihood costs one Cholesky factorization of a
/// `(K + q) x (K + q)` matrix, independent of `N`.
#[derive(Debug, Clone)]
pub struct MixedProblem {
    n: usize,
    xtx: DMatrix<f64>,
    xte: DMatrix<f64>,
    ete: DMatrix<f64>,
    xty: DVector<f64>,
    ety: DVector<f64>,
    yty: f64,
}

/// Minimizer of `||y - X b - E~ V~ u||^2 + ||u||^2`.
#[derive(Debug, Clone)]
pub struct MixedSolution {
    pub beta: DVector<f64>,
    pub u: DVector<f64>,
    /// Optimal value of the penalized criterion.
    pub d: f64,
    /// `log det` of the bordered normal-equations matrix.
    pub logdet: f64,
}

impl MixedProblem {
    pub fn new(y: &DVector<f64>, x: &DMatrix<f64>, e_tilde: &DMatrix<f64>) -> Result<Self> {
        if x.nrows() != y.len() || e_tilde.nrows() != y.len() {
            return Err(Error::ShapeError("response, X and E~ must have equal row counts".into()));
        }
        if x.nrows() <= x.ncols() {
            return Err(Error::ShapeError(format!(
                "{} sites cannot support {} fixed effects",
                x.nrows(),
                x.ncols()
            )));
        }
        let xtx = x.tr_mul(x);
        if cholesky_checked(xtx.clone()).is_none() {
            return Err(Error::RankDeficient("X'X is numerically singular".into()));
        }
        Ok(Self {
            n: y.len(),
            xte: x.tr_mul(e_tilde),
            ete: e_tilde.tr_mul(e_tilde),
            xty: x.tr_mul(y),
            ety: e_tilde.tr_mul(y),
            yty: y.norm_squared(),
            xtx,
        })
    }

    pub fn n_fixed(&self) -> usize {
        self.xtx.nrows()
    }

    pub fn n_random(&self) -> usize {
        self.ete.nrows()
    }

    /// Bordered matrix `[X'X, X'E~V; V E~'X, V E~'E~ V + I]` and right-hand
    /// side `[X'y; V E~'y]`.
    pub fn bordered(&self, v: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
        let (k, q) = (self.n_fixed(), self.n_random());
        assert_eq!(v.len(), q, "V~ diagonal has wrong length");
        let mut a = DMatrix::zeros(k + q, k + q);
        a.view_mut((0, 0), (k, k)).copy_from(&self.xtx);
        for j in 0..q {
            for i in 0..k {
                let val = self.xte[(i, j)] * v[j];
                a[(i, k + j)] = val;
                a[(k + j, i)] = val;
            }
            for i in 0..q {
                a[(k + i, k + j)] = v[i] * v[j] * self.ete[(i, j)];
            }
            a[(k + j, k + j)] += 1.0;
        }
        let mut rhs = DVector::zeros(k + q);
        rhs.rows_mut(0, k).copy_from(&self.xty);
        for j in 0..q {
            rhs[k + j] = v[j] * self.ety[j];
        }
        (a, rhs)
    }

    pub(crate) fn factor(&self, v: &[f64]) -> Result<(Cholesky<f64, Dyn>, DVector<f64>)> {
        let (a, rhs) = self.bordered(v);
        let chol = a.cholesky().ok_or_else(|| {
            Error::NumericalFailure("bordered normal-equations matrix is not positive definite".into())
        })?;
        Ok((chol, rhs))
    }

    /// Solve the penalized normal equations. `d` is computed from the cross
    /// products as `y'y - b' A^{-1} b`.
    pub fn solve(&self, v: &[f64]) -> Result<MixedSolution> {
        let (chol, rhs) = self.factor(v)?;
        let sol = chol.solve(&rhs);
        let k = self.n_fixed();
        let d = (self.yty - sol.dot(&rhs)).max(0.0);
        Ok(MixedSolution {
            beta: sol.rows(0, k).into_owned(),
            u: sol.rows(k, self.n_random()).into_owned(),
            d,
            logdet: chol_logdet(&chol),
        })
    }

    /// Restricted log-likelihood profiled over `sigma^2`.
    pub fn loglik(&self, v: &[f64]) -> Result<f64> {
        let sol = self.solve(v)?;
        Ok(self.loglik_from(sol.logdet, sol.d))
    }

    pub(crate) fn loglik_from(&self, logdet: f64, d: f64) -> f64 {
        let dof = (self.n - self.n_fixed()) as f64;
        -0.5 * logdet - 0.5 * dof * (1.0 + (2.0 * std::f64::consts::PI * d / dof).ln())
    }
}

/// Solve the penalized least-squares problem for fixed `V~`, with `d`
/// evaluated from explicit residuals.
pub fn solve_mixed(
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    e_tilde: &DMatrix<f64>,
    v_diag: &[f64],
) -> Result<MixedSolution> {
    if e_tilde.ncols() != v_diag.len() {
        return Err(Error::ShapeError(format!(
            "E~ has {} columns, V~ diagonal has {} entries",
            e_tilde.ncols(),
            v_diag.len()
        )));
    }
    let problem = MixedProblem::new(y, x, e_tilde)?;
    let mut sol = problem.solve(v_diag)?;
    let gamma = DVector::from_iterator(v_diag.len(), v_diag.iter().zip(sol.u.iter()).map(|(v, u)| v * u));
    let residual = y - x * &sol.beta - e_tilde * gamma;
    sol.d = residual.norm_squared() + sol.u.norm_squared();
    Ok(sol)
}

pub fn restricted_loglik(
    params: &SmoothParams,
    data: &SpatialDataset,
    basis: &EigenBasis,
) -> Result<f64> {
    let design = design_expansion(data, basis, params)?;
    let problem = MixedProblem::new(&data.y, &data.x, &design.e_tilde)?;
    let value = problem.loglik(&design.v_diag)?;
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NumericalFailure("restricted log-likelihood is not finite".into()))
    }
}
