#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use reesf::{build_connectivity, eigen_basis, mst_range, Coordinates, EigenBasis, SpatialDataset};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

pub fn uniform_coords(rng: &mut ChaCha8Rng, n: usize) -> Coordinates {
    Coordinates::new((0..n).map(|_| [rng.gen::<f64>() * 5.0, rng.gen::<f64>() * 5.0]).collect()).unwrap()
}

/// Basis at the MST range, truncated to at most `max_l` leading vectors.
pub fn basis_for(coords: &Coordinates, max_l: usize) -> EigenBasis {
    let c = build_connectivity(coords, mst_range(coords.points()).unwrap()).unwrap();
    let full = eigen_basis(&c, reesf::DEFAULT_EIGEN_TOL).unwrap();
    let l = full.n_vectors().min(max_l);
    EigenBasis::from_parts(
        full.vectors().columns(0, l).into_owned(),
        full.values()[..l].to_vec(),
        full.scale(),
    )
    .unwrap()
}

/// Random dataset with `k` design columns and a spatial signal in the response.
pub fn random_instance(seed: u64, n: usize, k: usize, max_l: usize) -> (SpatialDataset, EigenBasis) {
    let mut r = rng(seed);
    let coords = uniform_coords(&mut r, n);
    let basis = basis_for(&coords, max_l);
    let cov = DMatrix::from_fn(n, k - 1, |_, _| r.sample::<f64, _>(StandardNormal));
    let names = (1..k).map(|j| format!("x{j}")).collect();
    let l = basis.n_vectors();
    let mut y = normal_vec(&mut r, n);
    y += basis.vectors() * normal_vec(&mut r, l) * 2.0;
    for j in 0..(k - 1) {
        let slope = (basis.vectors() * normal_vec(&mut r, l) * 0.5).add_scalar(1.0);
        y += cov.column(j).component_mul(&slope);
    }
    let data = SpatialDataset::new(coords, y, cov, names).unwrap();
    (data, basis)
}

/// Marginal-covariance route: `Sigma = E~ V~^2 E~' + I`.
pub struct DenseOracle {
    pub beta: DVector<f64>,
    pub u: DVector<f64>,
    pub reml: f64,
}

pub fn dense_oracle(y: &DVector<f64>, x: &DMatrix<f64>, e_tilde: &DMatrix<f64>, v: &[f64]) -> DenseOracle {
    let n = y.len();
    let k = x.ncols();
    let ev = DMatrix::from_fn(n, v.len(), |i, j| e_tilde[(i, j)] * v[j]);
    let sigma = &ev * ev.transpose() + DMatrix::identity(n, n);
    let sigma_inv = sigma.clone().try_inverse().unwrap();
    let xs = x.transpose() * &sigma_inv;
    let info = &xs * x;
    let beta = info.clone().try_inverse().unwrap() * (&xs * y);
    let resid = y - x * &beta;
    let u = ev.transpose() * (&sigma_inv * &resid);
    let quad = resid.dot(&(&sigma_inv * &resid));
    let dof = (n - k) as f64;
    let reml = -0.5 * sigma.determinant().ln() - 0.5 * info.determinant().ln()
        - 0.5 * dof * (1.0 + (2.0 * std::f64::consts::PI * quad / dof).ln());
    DenseOracle { beta, u, reml }
}

pub fn rel_err(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}
