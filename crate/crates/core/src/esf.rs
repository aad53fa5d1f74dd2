//! Fixed-effects eigenvector spatial filtering: the linear ESF model and the
//! eigenvector-interaction SVC model, both with forward selection by
//! adjusted R² under a variance-inflation cap.

use nalgebra::{DMatrix, DVector};

use crate::basis::EigenBasis;
use crate::data::SpatialDataset;
use crate::error::{Error, Result};
use crate::linalg::{cholesky_checked, hcat, ols};

/// Candidates whose inclusion pushes any selected term's VIF above this are
/// skipped.
pub const MAX_VIF: f64 = 10.0;

/// Minimum adjusted-R² gain for a step to be accepted.
const MIN_GAIN: f64 = 1e-12;

/// Squared residual norm (relative to the raw norm) below which a candidate
/// is treated as lying in the span of the current design.
const COLLINEAR_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct EsfFit {
    pub beta: DVector<f64>,
    /// Coefficients of the selected eigenvectors, in selection order.
    pub gamma: DVector<f64>,
    /// Basis column of each selected eigenvector, in selection order.
    pub selected: Vec<usize>,
    pub sigma2: f64,
    pub adjusted_r2: f64,
    /// Adjusted R² after each accepted step, starting with the base design.
    pub path: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct EsfSvcFit {
    pub beta: DVector<f64>,
    /// `L x K`; zero for eigenvectors not selected for a coefficient.
    pub gamma: DMatrix<f64>,
    /// `(coefficient, eigenvector)` of each selected term, in selection order.
    pub selected: Vec<(usize, usize)>,
    /// `N x K` surfaces `beta_k 1 + E gamma_k`.
    pub svc: DMatrix<f64>,
    pub sigma2: f64,
    pub adjusted_r2: f64,
    pub path: Vec<f64>,
}

/// One forward-selection run over a fixed candidate list.
struct Selection {
    order: Vec<usize>,
    path: Vec<f64>,
}

fn adjusted_r2(rss: f64, tss: f64, n: usize, p: usize) -> f64 {
    1.0 - (rss / (n - p) as f64) / (tss / (n - 1) as f64)
}

/// Largest VIF over `check` columns of `z` (non-intercept regressors), from
/// the diagonal of the inverse correlation matrix.
fn max_vif(z: &DMatrix<f64>, check: std::ops::Range<usize>) -> Option<f64> {
    let mut s = z.clone();
    for mut col in s.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let norm = col.norm();
        if norm <= 0.0 {
            return None;
        }
        col /= norm;
    }
    let corr = s.tr_mul(&s);
    let chol = cholesky_checked(corr)?;
    let inv = chol.inverse();
    Some(check.map(|j| inv[(j, j)]).fold(0.0, f64::max))
}

/// Greedy forward selection. `fixed` columns are always in the model; the
/// first is the intercept. `candidates` are scored by the adjusted R² they
/// would give; ties keep list order, so callers list candidates in priority
/// order.
fn forward_select(fixed: &DMatrix<f64>, candidates: &DMatrix<f64>, y: &DVector<f64>, cap: usize) -> Result<Selection> {
    let n = y.len();
    let base = ols(fixed, y)?;
    let tss = crate::linalg::centered(y).norm_squared();
    if tss <= 0.0 {
        return Err(Error::ZeroVariance);
    }

    // Orthonormal basis of the current design, residualized candidates and
    // current residual; each step costs O(N * candidates).
    let mut q: Vec<DVector<f64>> = Vec::new();
    for j in 0..fixed.ncols() {
        let mut v = fixed.column(j).into_owned();
        for qi in &q {
            let c = qi.dot(&v);
            v.axpy(-c, qi, 1.0);
        }
        let norm = v.norm();
        q.push(v / norm);
    }
    let raw_norms: Vec<f64> = candidates.column_iter().map(|c| c.norm_squared()).collect();
    let mut resid_cands: Vec<DVector<f64>> = candidates
        .column_iter()
        .map(|c| {
            let mut v = c.into_owned();
            for qi in &q {
                let d = qi.dot(&v);
                v.axpy(-d, qi, 1.0);
            }
            v
        })
        .collect();

    let mut resid = base.residuals;
    let mut rss = base.rss;
    let mut p = fixed.ncols();
    let mut current = adjusted_r2(rss, tss, n, p);
    let mut path = vec![current];
    let mut order: Vec<usize> = Vec::new();
    let mut in_model = vec![false; candidates.ncols()];
    // Non-intercept regressors used for the VIF check.
    let mut z = fixed.columns(1, fixed.ncols() - 1).into_owned();
    let n_fixed_z = z.ncols();

    while order.len() < cap && p + 1 < n {
        let mut scored: Vec<(usize, f64)> = (0..candidates.ncols())
            .filter(|&c| !in_model[c])
            .filter_map(|c| {
                let r = &resid_cands[c];
                let rn = r.norm_squared();
                if rn <= COLLINEAR_TOL * raw_norms[c] || rn == 0.0 {
                    return None;
                }
                let gain = r.dot(&resid).powi(2) / rn;
                let value = adjusted_r2((rss - gain).max(0.0), tss, n, p + 1);
                (value - current > MIN_GAIN).then_some((c, value))
            })
            .collect();
        // Stable sort keeps priority order among exact ties.
        scored.sort_by(|a, b| b.1.total_cmp(&a.1));

        let mut accepted = None;
        for (c, value) in scored {
            let trial = hcat(&z, &DMatrix::from_column_slice(n, 1, candidates.column(c).as_slice()));
            match max_vif(&trial, n_fixed_z..trial.ncols()) {
                Some(v) if v <= MAX_VIF => {
                    accepted = Some((c, value, trial));
                    break;
                }
                _ => continue,
            }
        }
        let Some((c, value, trial)) = accepted else {
            break;
        };

        let mut qn = resid_cands[c].clone();
        // Re-orthogonalize once for stability.
        for qi in &q {
            let d = qi.dot(&qn);
            qn.axpy(-d, qi, 1.0);
        }
        qn /= qn.norm();
        let coef = qn.dot(&resid);
        resid.axpy(-coef, &qn, 1.0);
        rss = resid.norm_squared();
        for (j, rc) in resid_cands.iter_mut().enumerate() {
            if !in_model[j] && j != c {
                let d = qn.dot(rc);
                rc.axpy(-d, &qn, 1.0);
            }
        }
        q.push(qn);
        in_model[c] = true;
        order.push(c);
        p += 1;
        current = value;
        path.push(value);
        z = trial;
    }
    Ok(Selection { order, path })
}

/// Linear ESF: forward selection of eigenvectors as additional regressors.
pub fn fit_esf(data: &SpatialDataset, basis: &EigenBasis) -> Result<EsfFit> {
    check_shapes(data, basis)?;
    let (n, k, l) = (data.n_sites(), data.n_coefs(), basis.n_vectors());
    let cap = l.min(n.saturating_sub(k + 1));
    let sel = forward_select(&data.x, basis.vectors(), &data.y, cap)?;
    let design = hcat(&data.x, &basis.vectors().select_columns(&sel.order));
    let fit = ols(&design, &data.y)?;
    Ok(EsfFit {
        beta: fit.coef.rows(0, k).into_owned(),
        gamma: fit.coef.rows(k, sel.order.len()).into_owned(),
        selected: sel.order,
        sigma2: fit.rss / (n - design.ncols()) as f64,
        adjusted_r2: *sel.path.last().expect("path starts with the base model"),
        path: sel.path,
    })
}

/// ESF-based SVC: candidates `x_k o e_l` for every coefficient and
/// eigenvector, listed by eigenvector first (lower `l` wins ties), then by
/// coefficient.
pub fn fit_esf_svc(data: &SpatialDataset, basis: &EigenBasis) -> Result<EsfSvcFit> {
    fit_esf_svc_with(data, basis, &vec![true; data.n_coefs()])
}

/// [`fit_esf_svc`] with interaction candidates only for coefficients whose
/// `varying` flag is set.
pub fn fit_esf_svc_with(data: &SpatialDataset, basis: &EigenBasis, varying: &[bool]) -> Result<EsfSvcFit> {
    check_shapes(data, basis)?;
    if varying.len() != data.n_coefs() {
        return Err(Error::ShapeError(format!(
            "{} varying flags for {} coefficients",
            varying.len(),
            data.n_coefs()
        )));
    }
    let (n, k, l) = (data.n_sites(), data.n_coefs(), basis.n_vectors());
    let e = basis.vectors();
    let pairs: Vec<(usize, usize)> =
        (0..l).flat_map(|j| (0..k).filter(|&c| varying[c]).map(move |c| (c, j))).collect();
    let candidates = DMatrix::from_fn(n, pairs.len(), |i, p| {
        let (c, j) = pairs[p];
        data.x[(i, c)] * e[(i, j)]
    });
    let cap = pairs.len().min(n.saturating_sub(k + 1));
    let sel = forward_select(&data.x, &candidates, &data.y, cap)?;
    let design = hcat(&data.x, &candidates.select_columns(&sel.order));
    let fit = ols(&design, &data.y)?;

    let beta = fit.coef.rows(0, k).into_owned();
    let selected: Vec<(usize, usize)> = sel.order.iter().map(|&p| pairs[p]).collect();
    let mut gamma = DMatrix::zeros(l, k);
    for (s, &(c, j)) in selected.iter().enumerate() {
        gamma[(j, c)] = fit.coef[k + s];
    }
    let mut svc = e * &gamma;
    for c in 0..k {
        svc.column_mut(c).add_scalar_mut(beta[c]);
    }
    Ok(EsfSvcFit {
        beta,
        gamma,
        selected,
        svc,
        sigma2: fit.rss / (n - design.ncols()) as f64,
        adjusted_r2: *sel.path.last().expect("path starts with the base model"),
        path: sel.path,
    })
}

fn check_shapes(data: &SpatialDataset, basis: &EigenBasis) -> Result<()> {
    if basis.n_sites() != data.n_sites() {
        return Err(Error::ShapeError(format!(
            "basis has {} sites, dataset {}",
            basis.n_sites(),
            data.n_sites()
        )));
    }
    if data.n_sites() <= data.n_coefs() + 1 {
        return Err(Error::ShapeError(format!(
            "{} sites cannot support {} coefficients",
            data.n_sites(),
            data.n_coefs()
        )));
    }
    Ok(())
}
