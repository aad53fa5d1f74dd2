use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::mixed::{expand_columns, v_diag_for, MixedProblem};
use super::{lambda_weights, CoefSmooth, FitMode, SmoothParams};
use crate::basis::{mc_of_svc, EigenBasis};
use crate::data::SpatialDataset;
use crate::error::{Error, Result};
use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};

/// Upper end of the smoothness search interval.
pub const ALPHA_MAX: f64 = 10.0;
/// `log tau` below this is treated as exactly zero variance.
pub const LOG_TAU_FLOOR: f64 = -12.0;
const LOG_TAU_MIN: f64 = -14.0;
const LOG_TAU_MAX: f64 = 12.0;
const INITIAL_TAU: f64 = 0.5;
const INITIAL_ALPHA: f64 = 1.0;
const START_SPREAD: f64 = 1.5;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReesfSpec {
    pub mode: FitMode,
    /// One flag per design column; `true` lets the coefficient vary.
    pub varying: Vec<bool>,
    /// Simplex searches per optimization stage (the first starts from the
    /// default initial values, the rest from seeded perturbations of it).
    pub starts: usize,
    pub max_evals: usize,
    pub seed: u64,
    /// Shift non-intercept covariates to mean zero before fitting.
    pub center_covariates: bool,
}

impl ReesfSpec {
    pub fn all_varying(mode: FitMode, n_coefs: usize) -> Self {
        Self {
            mode,
            varying: vec![true; n_coefs],
            starts: 5,
            max_evals: 500,
            seed: 0,
            center_covariates: false,
        }
    }

    /// Only the intercept varies: the plain random-effects ESF model.
    pub fn intercept_only(mode: FitMode, n_coefs: usize) -> Self {
        let mut spec = Self::all_varying(mode, n_coefs);
        spec.varying = (0..n_coefs).map(|k| k == 0).collect();
        spec
    }
}

#[derive(Debug, Clone)]
pub struct ReesfSvcFit {
    pub mode: FitMode,
    pub names: Vec<String>,
    pub beta: DVector<f64>,
    /// `gamma_k` per design column; zeros for constant coefficients.
    pub gamma: Vec<DVector<f64>>,
    /// `N x K` coefficient surfaces `beta_k + E gamma_k`.
    pub svc: DMatrix<f64>,
    pub svc_se: DMatrix<f64>,
    pub sigma2: f64,
    pub theta: SmoothParams,
    /// Joint covariance of `(beta, gamma~)` over [`Self::blocks`].
    pub cov: DMatrix<f64>,
    /// Design column of each random block in `cov`.
    pub blocks: Vec<usize>,
    pub loglik_r: f64,
    /// Moran coefficient of `E gamma_k`; `None` where the coefficient is constant.
    pub mc: Vec<Option<f64>>,
    pub converged: bool,
    pub evaluations: usize,
}

impl ReesfSvcFit {
    pub fn ensure_converged(&self) -> Result<()> {
        if self.converged {
            Ok(())
        } else {
            Err(Error::ConvergenceFailure {
                evaluations: self.evaluations,
            })
        }
    }
}

/// Standard errors derived from the joint covariance.
#[derive(Debug, Clone)]
pub struct SvcInference {
    /// Standard error of each constant part `beta_k`.
    pub constant_se: Vec<f64>,
    /// `sqrt(diag(E Cov[gamma_k] E'))`, `N x K`.
    pub varying_se: DMatrix<f64>,
    /// Standard error of `beta_k + (E gamma_k)_i`, including the
    /// covariance between the two parts, `N x K`.
    pub svc_se: DMatrix<f64>,
    /// `(E gamma_k)_i / varying_se`; zero where the standard error is zero.
    pub varying_z: DMatrix<f64>,
}

const POLISH_RESTARTS: usize = 3;

fn tau_of(log_tau: f64) -> f64 {
    let t = log_tau.clamp(LOG_TAU_MIN, LOG_TAU_MAX);
    if t < LOG_TAU_FLOOR {
        0.0
    } else {
        t.exp()
    }
}

fn alpha_of(z: f64) -> f64 {
    ALPHA_MAX / (1.0 + (-z.clamp(-40.0, 40.0)).exp())
}

fn z_of(alpha: f64) -> f64 {
    (alpha / (ALPHA_MAX - alpha)).ln()
}

/// Likelihood surface over the per-block `(tau, alpha)` pairs.
struct Surface<'a> {
    problem: MixedProblem,
    lambda: &'a [f64],
    l: usize,
}

impl Surface<'_> {
    fn v_diag(&self, tau: &[f64], alpha: &[f64]) -> Option<Vec<f64>> {
        let mut v = Vec::with_capacity(self.l * tau.len());
        for (&t, &a) in tau.iter().zip(alpha) {
            let w = lambda_weights(self.lambda, a).ok()?;
            v.extend(w.into_iter().map(|lw| (t * lw).sqrt()));
        }
        Some(v)
    }

    fn loglik(&self, tau: &[f64], alpha: &[f64]) -> f64 {
        self.v_diag(tau, alpha)
            .and_then(|v| self.problem.loglik(&v).ok())
            .filter(|v| v.is_finite())
            .unwrap_or(f64::NEG_INFINITY)
    }
}

struct Search {
    best: Minimum,
    evaluations: usize,
}

/// Run one simplex search per start and keep the best, ties to the lower
/// start index. Starts are independent and may run in parallel.
fn multistart<F>(objective: F, starts: Vec<Vec<f64>>, opts: NelderMeadOptions) -> Search
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let runs: Vec<Minimum> = starts
        .par_iter()
        .map(|x0| nelder_mead(&objective, x0, 1.0, opts))
        .collect();
    let mut evaluations = runs.iter().map(|r| r.evaluations).sum();
    let mut best = runs
        .into_iter()
        .reduce(|a, b| if b.value < a.value { b } else { a })
        .expect("at least one start");
    // A collapsed simplex can stall short of the optimum; restarting from the
    // incumbent with a fresh simplex is the usual remedy.
    for _ in 0..POLISH_RESTARTS {
        if best.converged {
            break;
        }
        let next = nelder_mead(&objective, &best.x, 0.5, opts);
        evaluations += next.evaluations;
        if next.value <= best.value {
            best = next;
        }
    }
    Search { best, evaluations }
}

fn start_points(x0: Vec<f64>, warm: Vec<Vec<f64>>, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let jitter = Normal::new(0.0, START_SPREAD).expect("valid spread");
    let mut out = vec![x0.clone()];
    out.extend(warm);
    for _ in 1..count.max(1) {
        out.push(x0.iter().map(|v| v + jitter.sample(&mut rng)).collect());
    }
    out
}

/// Maximize the restricted likelihood and refit at the optimum.
pub fn fit_reesf_svc(data: &SpatialDataset, basis: &EigenBasis, spec: &ReesfSpec) -> Result<ReesfSvcFit> {
    if spec.varying.len() != data.n_coefs() {
        return Err(Error::ShapeError(format!(
            "{} varying flags for {} coefficients",
            spec.varying.len(),
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
    let blocks: Vec<usize> = (0..data.n_coefs()).filter(|&k| spec.varying[k]).collect();
    if blocks.is_empty() {
        return Err(Error::InvalidInput("at least one coefficient must vary".into()));
    }
    let centered;
    let data = if spec.center_covariates {
        centered = data.centered();
        &centered
    } else {
        data
    };

    let e_tilde = expand_columns(&data.x, basis, &blocks);
    let surface = Surface {
        problem: MixedProblem::new(&data.y, &data.x, &e_tilde)?,
        lambda: basis.values(),
        l: basis.n_vectors(),
    };
    let nb = blocks.len();
    let opts = NelderMeadOptions {
        max_evals: spec.max_evals,
        ..Default::default()
    };
    let log_tau0 = INITIAL_TAU.ln();
    let z0 = z_of(INITIAL_ALPHA);

    let shared_alpha = |seed_offset: u64| -> Search {
        let objective = |p: &[f64]| {
            let tau: Vec<f64> = p[..nb].iter().map(|&t| tau_of(t)).collect();
            -surface.loglik(&tau, &vec![alpha_of(p[nb]); nb])
        };
        let mut x0 = vec![log_tau0; nb];
        x0.push(z0);
        multistart(objective, start_points(x0, vec![], spec.starts, spec.seed.wrapping_add(seed_offset)), opts)
    };

    let (mut tau, mut alpha, evaluations, converged) = match spec.mode {
        FitMode::A2 => {
            let s = shared_alpha(0);
            let tau: Vec<f64> = s.best.x[..nb].iter().map(|&t| tau_of(t)).collect();
            (tau, vec![alpha_of(s.best.x[nb]); nb], s.evaluations, s.best.converged)
        }
        FitMode::A1 => {
            let ones = vec![1.0; nb];
            let stage1 = multistart(
                |p: &[f64]| {
                    let tau: Vec<f64> = p.iter().map(|&t| tau_of(t)).collect();
                    -surface.loglik(&tau, &ones)
                },
                start_points(vec![log_tau0; nb], vec![], spec.starts, spec.seed),
                opts,
            );
            let tau: Vec<f64> = stage1.best.x.iter().map(|&t| tau_of(t)).collect();
            let free: Vec<usize> = (0..nb).filter(|&b| tau[b] > 0.0).collect();
            let expand = |p: &[f64]| {
                let mut a = vec![INITIAL_ALPHA; nb];
                for (&b, &z) in free.iter().zip(p) {
                    a[b] = alpha_of(z);
                }
                a
            };
            let stage2 = multistart(
                |p: &[f64]| -surface.loglik(&tau, &expand(p)),
                start_points(vec![z0; free.len()], vec![], spec.starts, spec.seed.wrapping_add(1)),
                opts,
            );
            let alpha = expand(&stage2.best.x);
            (
                tau,
                alpha,
                stage1.evaluations + stage2.evaluations,
                stage1.best.converged && stage2.best.converged,
            )
        }
        FitMode::Full => {
            // The shared-alpha optimum is a feasible point of the full
            // problem; searching from it keeps the full fit at least as good.
            let warm = shared_alpha(7);
            let mut warm_x: Vec<f64> = warm.best.x[..nb].to_vec();
            warm_x.extend(std::iter::repeat_n(warm.best.x[nb], nb));
            let mut x0 = vec![log_tau0; nb];
            x0.extend(std::iter::repeat_n(z0, nb));
            let s = multistart(
                |p: &[f64]| {
                    let tau: Vec<f64> = p[..nb].iter().map(|&t| tau_of(t)).collect();
                    let alpha: Vec<f64> = p[nb..].iter().map(|&z| alpha_of(z)).collect();
                    -surface.loglik(&tau, &alpha)
                },
                start_points(x0, vec![warm_x], spec.starts, spec.seed),
                opts,
            );
            let tau = s.best.x[..nb].iter().map(|&t| tau_of(t)).collect();
            let alpha = s.best.x[nb..].iter().map(|&z| alpha_of(z)).collect();
            (tau, alpha, warm.evaluations + s.evaluations, s.best.converged)
        }
    };

    // Boundary checks: the zero-variance faces are not reachable through the
    // log transform, so compare them directly.
    let mut best = surface.loglik(&tau, &alpha);
    let zeros = vec![0.0; nb];
    let null = surface.loglik(&zeros, &alpha);
    if null >= best {
        tau = zeros;
        best = null;
    }
    for b in 0..nb {
        if tau[b] > 0.0 {
            let mut trial = tau.clone();
            trial[b] = 0.0;
            let value = surface.loglik(&trial, &alpha);
            if value >= best {
                tau = trial;
                best = value;
            }
        }
    }
    if !best.is_finite() {
        return Err(Error::NumericalFailure("restricted likelihood is not finite at the optimum".into()));
    }
    for (b, t) in tau.iter().enumerate() {
        if *t == 0.0 {
            alpha[b] = f64::NAN;
        }
    }

    let mut coefs = vec![None; data.n_coefs()];
    for (b, &k) in blocks.iter().enumerate() {
        if tau[b] > 0.0 {
            coefs[k] = Some(CoefSmooth {
                tau: tau[b],
                alpha: alpha[b],
            });
        }
    }
    let theta = SmoothParams {
        coefs,
        mode: spec.mode,
    };
    let mut fit = evaluate_fixed(data, basis, &theta)?;
    fit.converged = converged;
    fit.evaluations = evaluations;
    Ok(fit)
}

/// Estimates, covariance and diagnostics at a fixed `Theta`. Coefficients
/// whose entry is `None`, or whose `tau` is zero, contribute no random block.
pub fn evaluate_fixed(data: &SpatialDataset, basis: &EigenBasis, theta: &SmoothParams) -> Result<ReesfSvcFit> {
    if theta.coefs.len() != data.n_coefs() {
        return Err(Error::ShapeError(format!(
            "{} smoothness entries for {} coefficients",
            theta.coefs.len(),
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
    theta.validate()?;
    let (n, k, l) = (data.n_sites(), data.n_coefs(), basis.n_vectors());
    let active = SmoothParams {
        coefs: theta.coefs.iter().map(|c| c.filter(|c| c.tau > 0.0)).collect(),
        mode: theta.mode,
    };
    let blocks: Vec<usize> = (0..k).filter(|&j| active.coefs[j].is_some()).collect();
    let e_tilde = expand_columns(&data.x, basis, &blocks);
    let v = v_diag_for(basis, &active)?;
    let problem = MixedProblem::new(&data.y, &data.x, &e_tilde)?;
    let (chol, rhs) = problem.factor(&v)?;
    let sol = chol.solve(&rhs);
    let beta = sol.rows(0, k).into_owned();
    let u = sol.rows(k, v.len()).into_owned();
    let gamma_tilde = DVector::from_iterator(v.len(), v.iter().zip(u.iter()).map(|(a, b)| a * b));

    let residual = &data.y - &data.x * &beta - &e_tilde * &gamma_tilde;
    let rss = residual.norm_squared();
    let sigma2 = rss / (n - k) as f64;
    if !(sigma2 > 0.0) {
        return Err(Error::NumericalFailure("residual variance is not positive".into()));
    }
    let logdet = crate::linalg::chol_logdet(&chol);
    let loglik_r = problem.loglik_from(logdet, rss + u.norm_squared());

    // sigma^2 [X'X, X'E~; E~'X, E~'E~ + V~^-2]^-1 = sigma^2 D A^-1 D with
    // D = diag(I, V~) and A the bordered matrix; this form needs no V~^-1.
    let a_inv = chol.inverse();
    let scale: Vec<f64> = std::iter::repeat_n(1.0, k).chain(v.iter().cloned()).collect();
    let mut cov = DMatrix::from_fn(k + v.len(), k + v.len(), |i, j| sigma2 * scale[i] * a_inv[(i, j)] * scale[j]);
    cov = (&cov + cov.transpose()) * 0.5;

    let mut gamma = vec![DVector::zeros(l); k];
    for (b, &j) in blocks.iter().enumerate() {
        gamma[j] = gamma_tilde.rows(b * l, l).into_owned();
    }
    let mut svc = DMatrix::zeros(n, k);
    for j in 0..k {
        let mut col = basis.vectors() * &gamma[j];
        col.add_scalar_mut(beta[j]);
        svc.set_column(j, &col);
    }
    let mc = gamma
        .iter()
        .map(|g| if g.iter().any(|&x| x != 0.0) { mc_of_svc(g.as_slice(), basis).ok() } else { None })
        .collect();

    let mut fit = ReesfSvcFit {
        mode: theta.mode,
        names: data.names.clone(),
        beta,
        gamma,
        svc,
        svc_se: DMatrix::zeros(n, k),
        sigma2,
        theta: active,
        cov,
        blocks,
        loglik_r,
        mc,
        converged: true,
        evaluations: 0,
    };
    fit.svc_se = svc_inference(&fit, basis)?.svc_se;
    Ok(fit)
}

/// Pointwise standard errors of the coefficient surfaces.
pub fn svc_inference(fit: &ReesfSvcFit, basis: &EigenBasis) -> Result<SvcInference> {
    let k = fit.beta.len();
    let l = basis.n_vectors();
    let n = basis.n_sites();
    if fit.cov.nrows() != k + l * fit.blocks.len() {
        return Err(Error::ShapeError("covariance does not match the basis size".into()));
    }
    let tol = 1e-10 * fit.cov.diagonal().amax().max(1.0);
    if fit.cov.diagonal().iter().any(|&d| d < -tol) {
        return Err(Error::NumericalFailure("coefficient covariance has a negative diagonal entry".into()));
    }

    let constant_se: Vec<f64> = (0..k).map(|j| fit.cov[(j, j)].max(0.0).sqrt()).collect();
    let mut varying_se = DMatrix::zeros(n, k);
    let mut svc_se = DMatrix::from_fn(n, k, |_, j| constant_se[j]);
    let mut varying_z = DMatrix::zeros(n, k);
    let e = basis.vectors();
    for (b, &j) in fit.blocks.iter().enumerate() {
        let off = k + b * l;
        let cov_gamma = fit.cov.view((off, off), (l, l));
        let cross = fit.cov.view((j, off), (1, l)).transpose();
        let e_cov = e * cov_gamma;
        let e_cross = e * cross;
        let surface = e * &fit.gamma[j];
        for i in 0..n {
            let var_varying = e_cov.row(i).dot(&e.row(i));
            if var_varying < -tol {
                return Err(Error::NumericalFailure(format!(
                    "negative variance {var_varying} for the varying part of coefficient {j} at site {i}"
                )));
            }
            let var_varying = var_varying.max(0.0);
            let total = (fit.cov[(j, j)] + 2.0 * e_cross[i] + var_varying).max(0.0);
            varying_se[(i, j)] = var_varying.sqrt();
            svc_se[(i, j)] = total.sqrt();
            if var_varying > 0.0 {
                varying_z[(i, j)] = surface[i] / var_varying.sqrt();
            }
        }
    }
    Ok(SvcInference {
        constant_se,
        varying_se,
        svc_se,
        varying_z,
    })
}
