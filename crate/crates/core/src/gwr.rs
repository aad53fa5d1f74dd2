//! Geographically weighted regression with an exponential kernel, plus the
//! ridge and locally compensated ridge variants.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::Coordinates;
use crate::data::SpatialDataset;
use crate::error::{Error, Result};

/// Local condition numbers above this trigger ridge compensation.
pub const LCR_MAX_CONDITION: f64 = 30.0;

/// Ridge values tried, as multiples of the largest eigenvalue of the local
/// weighted cross-product matrix.
pub const LCR_ETA_GRID: [f64; 9] = [1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0, 1e1, 1e2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GwrMethod {
    Gwr,
    Ridge,
    Lcr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BandwidthCriterion {
    Loocv,
    Aicc,
}

#[derive(Debug, Clone)]
pub struct GwrFit {
    pub method: GwrMethod,
    /// `N x K` local coefficients.
    pub svc: DMatrix<f64>,
    pub bandwidth: f64,
    /// Ridge value per site (all equal for [`GwrMethod::Ridge`]).
    pub eta: Vec<f64>,
    /// Uncompensated local condition number per site.
    pub condition: Vec<f64>,
    pub cv_score: Option<f64>,
}

/// Diagonal of `G(s_i)`: `exp(-d(s_i, s_j) / b)`.
pub fn gwr_weights(coords: &Coordinates, site: usize, bandwidth: f64) -> Result<DVector<f64>> {
    check_bandwidth(bandwidth)?;
    Ok(DVector::from_fn(coords.len(), |j, _| (-coords.distance(site, j) / bandwidth).exp()))
}

fn check_bandwidth(b: f64) -> Result<()> {
    if b > 0.0 && !b.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidBandwidth(b))
    }
}

/// Small `K x K` symmetric system `A beta = c` with `A = X'G X`.
struct LocalMoments {
    a: DMatrix<f64>,
    c: DVector<f64>,
}

/// Row-major copy of the design plus pairwise distances, reused across
/// bandwidth evaluations.
struct LocalFitter<'a> {
    data: &'a SpatialDataset,
    dist: DMatrix<f64>,
    rows: Vec<f64>,
    k: usize,
}

impl<'a> LocalFitter<'a> {
    fn new(data: &'a SpatialDataset) -> Self {
        let k = data.n_coefs();
        let n = data.n_sites();
        let mut rows = Vec::with_capacity(n * k);
        for i in 0..n {
            rows.extend(data.x.row(i).iter());
        }
        Self {
            data,
            dist: data.coords.distance_matrix(),
            rows,
            k,
        }
    }

    fn n(&self) -> usize {
        self.data.n_sites()
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.k..(i + 1) * self.k]
    }

    /// Weighted moments at `site`; `skip` drops one observation (LOOCV).
    fn moments(&self, site: usize, bandwidth: f64, skip: Option<usize>) -> LocalMoments {
        let k = self.k;
        let mut a = vec![0.0; k * k];
        let mut c = vec![0.0; k];
        let inv_b = 1.0 / bandwidth;
        for j in 0..self.n() {
            if Some(j) == skip {
                continue;
            }
            let w = (-self.dist[(site, j)] * inv_b).exp();
            if w == 0.0 {
                continue;
            }
            let xj = self.row(j);
            let wy = w * self.data.y[j];
            for p in 0..k {
                let wxp = w * xj[p];
                c[p] += xj[p] * wy;
                for q in 0..=p {
                    a[p * k + q] += wxp * xj[q];
                }
            }
        }
        let a = DMatrix::from_fn(k, k, |p, q| if q <= p { a[p * k + q] } else { a[q * k + p] });
        LocalMoments {
            a,
            c: DVector::from_vec(c),
        }
    }

    fn solve(m: &LocalMoments, eta: f64) -> Option<DVector<f64>> {
        let mut a = m.a.clone();
        for p in 0..a.nrows() {
            a[(p, p)] += eta;
        }
        crate::linalg::cholesky_checked(a).map(|ch| ch.solve(&m.c))
    }

    fn predict(&self, i: usize, beta: &DVector<f64>) -> f64 {
        self.row(i).iter().zip(beta.iter()).map(|(x, b)| x * b).sum()
    }

    fn objective(&self, bandwidth: f64, criterion: BandwidthCriterion) -> f64 {
        let n = self.n();
        let per_site: Vec<Option<(f64, f64)>> = (0..n)
            .into_par_iter()
            .map(|i| match criterion {
                BandwidthCriterion::Loocv => {
                    let m = self.moments(i, bandwidth, Some(i));
                    let beta = Self::solve(&m, 0.0)?;
                    Some(((self.data.y[i] - self.predict(i, &beta)).powi(2), 0.0))
                }
                BandwidthCriterion::Aicc => {
                    let m = self.moments(i, bandwidth, None);
                    let chol = crate::linalg::cholesky_checked(m.a.clone())?;
                    let beta = chol.solve(&m.c);
                    let xi = DVector::from_row_slice(self.row(i));
                    // Own weight is exp(0) = 1.
                    let leverage = xi.dot(&chol.solve(&xi));
                    Some(((self.data.y[i] - self.predict(i, &beta)).powi(2), leverage))
                }
            })
            .collect();
        let mut sse = 0.0;
        let mut trace = 0.0;
        for v in per_site {
            match v {
                Some((e, h)) => {
                    sse += e;
                    trace += h;
                }
                None => return f64::INFINITY,
            }
        }
        match criterion {
            BandwidthCriterion::Loocv => sse,
            BandwidthCriterion::Aicc => {
                let nf = n as f64;
                if nf - 2.0 - trace <= 0.0 || sse <= 0.0 {
                    return f64::INFINITY;
                }
                let sigma = (sse / nf).sqrt();
                2.0 * nf * sigma.ln()
                    + nf * (2.0 * std::f64::consts::PI).ln()
                    + nf * (nf + trace) / (nf - 2.0 - trace)
            }
        }
    }
}

fn local_condition(a: &DMatrix<f64>) -> (f64, f64, f64) {
    let eig = a.clone().symmetric_eigen().eigenvalues;
    let hi = eig.max().max(0.0);
    let lo = eig.min().max(0.0);
    let cond = if lo > 0.0 { (hi / lo).sqrt() } else { f64::INFINITY };
    (cond, hi, lo)
}

fn fit_with<F>(data: &SpatialDataset, bandwidth: f64, method: GwrMethod, choose_eta: F) -> Result<GwrFit>
where
    F: Fn(f64, f64, f64) -> f64 + Sync,
{
    check_bandwidth(bandwidth)?;
    let fitter = LocalFitter::new(data);
    let n = data.n_sites();
    let sites: Vec<Result<(DVector<f64>, f64, f64)>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let m = fitter.moments(i, bandwidth, None);
            let (cond, hi, lo) = local_condition(&m.a);
            let eta = choose_eta(cond, hi, lo);
            let beta = LocalFitter::solve(&m, eta).ok_or(Error::LocalSingularity(i))?;
            Ok((beta, eta, cond))
        })
        .collect();
    let mut svc = DMatrix::zeros(n, data.n_coefs());
    let mut eta = Vec::with_capacity(n);
    let mut condition = Vec::with_capacity(n);
    for (i, site) in sites.into_iter().enumerate() {
        let (beta, e, c) = site?;
        svc.set_row(i, &beta.transpose());
        eta.push(e);
        condition.push(c);
    }
    Ok(GwrFit {
        method,
        svc,
        bandwidth,
        eta,
        condition,
        cv_score: None,
    })
}

/// Per-site weighted least squares `(X'G X)^{-1} X'G y`.
pub fn fit_gwr(data: &SpatialDataset, bandwidth: f64) -> Result<GwrFit> {
    fit_with(data, bandwidth, GwrMethod::Gwr, |_, _, _| 0.0)
}

/// Ridge GWR with one global `eta`: `(X'G X + eta I)^{-1} X'G y`.
pub fn fit_ridge_gwr(data: &SpatialDataset, bandwidth: f64, eta: f64) -> Result<GwrFit> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge parameter must be >= 0, got {eta}")));
    }
    fit_with(data, bandwidth, GwrMethod::Ridge, |_, _, _| eta)
}

/// Ridge compensation only where the local condition number exceeds
/// [`LCR_MAX_CONDITION`]; there `eta` is the first grid value that brings
/// `sqrt((l_max + eta) / (l_min + eta))` down to the threshold.
pub fn fit_lcr_gwr(data: &SpatialDataset, bandwidth: f64) -> Result<GwrFit> {
    fit_with(data, bandwidth, GwrMethod::Lcr, |cond, hi, lo| {
        if cond <= LCR_MAX_CONDITION {
            return 0.0;
        }
        let scale = if hi > 0.0 { hi } else { 1.0 };
        LCR_ETA_GRID
            .iter()
            .map(|g| g * scale)
            .find(|&eta| ((hi + eta) / (lo + eta)).sqrt() <= LCR_MAX_CONDITION)
            .unwrap_or(LCR_ETA_GRID[LCR_ETA_GRID.len() - 1] * scale)
    })
}

/// Criterion value at one bandwidth; `+inf` where some local fit is singular.
pub fn bandwidth_objective(data: &SpatialDataset, bandwidth: f64, criterion: BandwidthCriterion) -> Result<f64> {
    check_bandwidth(bandwidth)?;
    Ok(LocalFitter::new(data).objective(bandwidth, criterion))
}

#[derive(Debug, Clone, Copy)]
pub struct BandwidthSelection {
    pub bandwidth: f64,
    pub score: f64,
    pub lower: f64,
    pub upper: f64,
    pub evaluations: usize,
}

/// Golden-section search on `log b` over
/// `[min pairwise distance, 2 * max pairwise distance]`. The endpoints are
/// also evaluated, and the best of all three candidates is returned.
pub fn select_bandwidth(data: &SpatialDataset, criterion: BandwidthCriterion) -> Result<BandwidthSelection> {
    let n = data.n_sites();
    if n < data.n_coefs() + 2 {
        return Err(Error::SelectionFailure(format!(
            "{n} sites are too few for {} coefficients",
            data.n_coefs()
        )));
    }
    let fitter = LocalFitter::new(data);
    let (mut dmin, mut dmax) = (f64::INFINITY, 0.0_f64);
    for j in 0..n {
        for i in (j + 1)..n {
            let d = fitter.dist[(i, j)];
            dmin = dmin.min(d);
            dmax = dmax.max(d);
        }
    }
    let (lower, upper) = (dmin, 2.0 * dmax);
    let mut evaluations = 0;
    let mut eval = |log_b: f64| {
        evaluations += 1;
        let v = fitter.objective(log_b.exp(), criterion);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };

    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let (mut a, mut b) = (lower.ln(), upper.ln());
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    while b - a > 1e-4 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = eval(d);
        }
    }
    let interior = if fc <= fd { (c, fc) } else { (d, fd) };
    let candidates = [interior, (lower.ln(), eval(lower.ln())), (upper.ln(), eval(upper.ln()))];
    let best = candidates
        .into_iter()
        .reduce(|x, y| if y.1 < x.1 { y } else { x })
        .expect("three candidates");
    if !best.1.is_finite() {
        return Err(Error::SelectionFailure("criterion is not finite anywhere in the search interval".into()));
    }
    Ok(BandwidthSelection {
        bandwidth: best.0.exp(),
        score: best.1,
        lower,
        upper,
        evaluations,
    })
}
