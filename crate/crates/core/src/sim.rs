//! Synthetic data with spatially varying coefficients, and accuracy metrics.
//!
//! Coefficient surfaces are centered moving-average processes: white noise
//! smoothed by the row-standardized matrix of `I + C(r)` and centered, so the
//! range `r` controls how smooth each surface is. Covariates mix centered
//! noise with a spatially smoothed component in proportion `w_s`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{build_connectivity, Coordinates};
use crate::data::SpatialDataset;
use crate::error::{Error, Result};
use crate::linalg::centered;

/// One cell of the simulation design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub n: usize,
    /// Share of the spatially dependent component in each covariate.
    pub ws: f64,
    /// Range of the moving average behind `beta_1`.
    pub r1: f64,
    /// Range of the moving average behind `beta_2`.
    pub r2: f64,
    #[serde(default = "default_r0")]
    pub r0: f64,
    #[serde(default = "default_means")]
    pub means: [f64; 3],
    #[serde(default = "default_noise_sd")]
    pub noise_sd: f64,
}

fn default_r0() -> f64 {
    1.0
}
fn default_means() -> [f64; 3] {
    [1.0, -2.0, 0.5]
}
fn default_noise_sd() -> f64 {
    2.0
}

impl SimConfig {
    pub fn new(n: usize, ws: f64, r1: f64, r2: f64) -> Self {
        Self {
            n,
            ws,
            r1,
            r2,
            r0: default_r0(),
            means: default_means(),
            noise_sd: default_noise_sd(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 3 {
            return Err(Error::InvalidInput(format!("need at least 3 sites, got {}", self.n)));
        }
        if !(0.0..=1.0).contains(&self.ws) {
            return Err(Error::InvalidInput(format!("w_s must lie in [0, 1], got {}", self.ws)));
        }
        for r in [self.r0, self.r1, self.r2] {
            if !(r > 0.0 && r.is_finite()) {
                return Err(Error::InvalidRange(r));
            }
        }
        if !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidInput(format!("noise sd must be >= 0, got {}", self.noise_sd)));
        }
        Ok(())
    }

    /// Stable identifier of the cell, independent of where it sits in a grid.
    pub fn cell_id(&self) -> u64 {
        [
            self.n as u64,
            self.ws.to_bits(),
            self.r1.to_bits(),
            self.r2.to_bits(),
            self.r0.to_bits(),
            self.noise_sd.to_bits(),
        ]
        .into_iter()
        .chain(self.means.iter().map(|m| m.to_bits()))
        .fold(0x5eed_u64, |h, v| splitmix64(h ^ v))
    }
}

/// Independent random streams within one replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Coords,
    /// White noise behind coefficient surface `k`.
    Coefficient(u8),
    /// Non-spatial part of covariate `k`.
    CovariateNoise(u8),
    /// Spatial part of covariate `k`.
    CovariateSpatial(u8),
    ResponseNoise,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Coords => 1,
            Stream::Coefficient(k) => 0x100 + k as u64,
            Stream::CovariateNoise(k) => 0x200 + k as u64,
            Stream::CovariateSpatial(k) => 0x300 + k as u64,
            Stream::ResponseNoise => 0x400,
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Key of one replicate; every random draw is a pure function of the key and
/// the stream it belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedKey {
    pub master: u64,
    pub cell: u64,
    pub replicate: u64,
}

impl SeedKey {
    pub fn new(master: u64, cell: u64, replicate: u64) -> Self {
        Self {
            master,
            cell,
            replicate,
        }
    }

    pub fn rng(&self, stream: Stream) -> ChaCha20Rng {
        let mut seed = [0u8; 32];
        let mut h = splitmix64(self.master);
        for (i, word) in [self.cell, self.replicate, stream.tag(), 0].into_iter().enumerate() {
            h = splitmix64(h ^ word);
            seed[i * 8..(i + 1) * 8].copy_from_slice(&h.to_le_bytes());
        }
        ChaCha20Rng::from_seed(seed)
    }
}

fn normal_vector<R: Rng>(rng: &mut R, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Both coordinate axes drawn independently from the standard normal.
pub fn gen_coords<R: Rng>(n: usize, rng: &mut R) -> Result<Coordinates> {
    let points = (0..n)
        .map(|_| [rng.sample(StandardNormal), rng.sample(StandardNormal)])
        .collect();
    Coordinates::new(points)
}

/// `I + C(r)` with each row scaled to sum to one.
pub fn row_standardized(coords: &Coordinates, range: f64) -> Result<DMatrix<f64>> {
    let mut m = build_connectivity(coords, range)?.matrix().clone();
    for i in 0..m.nrows() {
        m[(i, i)] += 1.0;
        let s = m.row(i).sum();
        m.row_mut(i).scale_mut(1.0 / s);
    }
    Ok(m)
}

/// `M * C~(r) * e`: a centered moving average of `e`.
fn centered_moving_average(smoother: &DMatrix<f64>, e: &DVector<f64>) -> DVector<f64> {
    centered(&(smoother * e))
}

/// True surfaces `beta_k = mean_k + M C~(r_k) eps_k`, `N x 3`.
pub fn gen_true_coefficients(config: &SimConfig, coords: &Coordinates, key: &SeedKey) -> Result<DMatrix<f64>> {
    config.validate()?;
    let n = coords.len();
    let mut beta = DMatrix::zeros(n, 3);
    for (k, range) in [config.r0, config.r1, config.r2].into_iter().enumerate() {
        let smoother = row_standardized(coords, range)?;
        let eps = normal_vector(&mut key.rng(Stream::Coefficient(k as u8)), n);
        let mut col = centered_moving_average(&smoother, &eps);
        col.add_scalar_mut(config.means[k]);
        beta.set_column(k, &col);
    }
    Ok(beta)
}

/// `x = (1 - w_s) M e_ns + w_s M C~(1) e_s`.
pub fn gen_covariate<R: Rng>(
    coords: &Coordinates,
    ws: f64,
    noise_rng: &mut R,
    spatial_rng: &mut R,
) -> Result<DVector<f64>> {
    if !(0.0..=1.0).contains(&ws) {
        return Err(Error::InvalidInput(format!("w_s must lie in [0, 1], got {ws}")));
    }
    let n = coords.len();
    let e_ns = normal_vector(noise_rng, n);
    let e_s = normal_vector(spatial_rng, n);
    let smoother = row_standardized(coords, 1.0)?;
    Ok(centered(&e_ns) * (1.0 - ws) + centered_moving_average(&smoother, &e_s) * ws)
}

/// `y = sum_k x_k o beta_k + eps` with `eps ~ N(0, noise_sd^2 I)`.
pub fn gen_response<R: Rng>(
    x: &DMatrix<f64>,
    beta: &DMatrix<f64>,
    noise_sd: f64,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if x.shape() != beta.shape() {
        return Err(Error::ShapeError(format!(
            "design {:?} and coefficients {:?} differ",
            x.shape(),
            beta.shape()
        )));
    }
    let signal = x.component_mul(beta).column_sum();
    if noise_sd == 0.0 {
        return Ok(signal);
    }
    Ok(signal + normal_vector(rng, x.nrows()) * noise_sd)
}

/// A simulated dataset together with the coefficient surfaces behind it.
#[derive(Debug, Clone)]
pub struct Simulated {
    pub data: SpatialDataset,
    /// `N x 3` true coefficient surfaces.
    pub truth: DMatrix<f64>,
}

pub fn simulate(config: &SimConfig, key: &SeedKey) -> Result<Simulated> {
    config.validate()?;
    let coords = gen_coords(config.n, &mut key.rng(Stream::Coords))?;
    let truth = gen_true_coefficients(config, &coords, key)?;
    let mut covariates = DMatrix::zeros(config.n, 2);
    for k in 0..2u8 {
        let x = gen_covariate(
            &coords,
            config.ws,
            &mut key.rng(Stream::CovariateNoise(k)),
            &mut key.rng(Stream::CovariateSpatial(k)),
        )?;
        covariates.set_column(k as usize, &x);
    }
    let mut x = DMatrix::from_element(config.n, 3, 1.0);
    x.columns_mut(1, 2).copy_from(&covariates);
    let y = gen_response(&x, &truth, config.noise_sd, &mut key.rng(Stream::ResponseNoise))?;
    let data = SpatialDataset::new(coords, y, covariates, vec!["x1".into(), "x2".into()])?;
    Ok(Simulated { data, truth })
}

fn check_lengths(est: &[f64], truth: &[f64]) -> Result<()> {
    if est.len() != truth.len() || est.is_empty() {
        return Err(Error::ShapeError(format!(
            "estimate has {} entries, truth {}",
            est.len(),
            truth.len()
        )));
    }
    Ok(())
}

/// Root mean squared error across sites.
pub fn rmse(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est, truth)?;
    let sse: f64 = est.iter().zip(truth).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((sse / est.len() as f64).sqrt())
}

/// Mean of `est - truth` across sites; positive for upward bias.
pub fn mean_bias(est: &[f64], truth: &[f64]) -> Result<f64> {
    check_lengths(est, truth)?;
    Ok(est.iter().zip(truth).map(|(a, b)| a - b).sum::<f64>() / est.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[2.0, 3.0, 4.0], &[1.0, 2.0, 3.0]).unwrap() - 1.0).abs() < 1e-15);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 12.5_f64.sqrt()).abs() < 1e-15);
        assert!((rmse(&[3.0, 4.0], &[0.0, 0.0]).unwrap() - 3.5355).abs() < 1e-4);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::ShapeError(_))));
    }

    #[test]
    fn mean_bias_examples() {
        assert_eq!(mean_bias(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((mean_bias(&[1.5, 2.5, 3.5], &[1.0, 2.0, 3.0]).unwrap() - 0.5).abs() < 1e-15);
        assert!(mean_bias(&[1.3, 0.7], &[1.0, 1.0]).unwrap().abs() < 1e-15);
        assert!(matches!(mean_bias(&[], &[]), Err(Error::ShapeError(_))));
    }

    #[test]
    fn row_standardized_rows_sum_to_one() {
        let coords = gen_coords(30, &mut SeedKey::new(1, 2, 3).rng(Stream::Coords)).unwrap();
        let m = row_standardized(&coords, 0.8).unwrap();
        for i in 0..30 {
            assert!((m.row(i).sum() - 1.0).abs() < 1e-12);
        }
        let tiny = row_standardized(&coords, 1e-6).unwrap();
        assert!((tiny - DMatrix::<f64>::identity(30, 30)).amax() < 1e-12);
    }

    /// Hand computation on a 3-4-5 triangle with r = 5.
    #[test]
    fn row_standardized_hand_instance() {
        let coords = Coordinates::new(vec![[0.0, 0.0], [3.0, 0.0], [0.0, 4.0]]).unwrap();
        let m = row_standardized(&coords, 5.0).unwrap();
        let (a, b, c) = ((-0.6_f64).exp(), (-0.8_f64).exp(), (-1.0_f64).exp());
        let rows = [[1.0, a, b], [a, 1.0, c], [b, c, 1.0]];
        for (i, row) in rows.iter().enumerate() {
            let s: f64 = row.iter().sum();
            for j in 0..3 {
                assert!((m[(i, j)] - row[j] / s).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn seed_keys_are_deterministic_and_distinct() {
        let k = SeedKey::new(42, 7, 3);
        let a: Vec<u64> = (0..4).map(|_| k.rng(Stream::Coords).gen()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut r1 = k.rng(Stream::Coords);
        let mut r2 = k.rng(Stream::ResponseNoise);
        let mut r3 = SeedKey::new(42, 7, 4).rng(Stream::Coords);
        let (x1, x2, x3): (u64, u64, u64) = (r1.gen(), r2.gen(), r3.gen());
        assert!(x1 != x2 && x1 != x3);
    }

    #[test]
    fn cell_id_depends_on_parameters_only() {
        let a = SimConfig::new(150, 0.8, 1.0, 1.0);
        let b = SimConfig::new(150, 0.8, 1.0, 1.0);
        assert_eq!(a.cell_id(), b.cell_id());
        assert_ne!(a.cell_id(), SimConfig::new(150, 0.8, 1.0, 2.0).cell_id());
    }

    #[test]
    fn config_validation() {
        assert!(SimConfig::new(50, 1.2, 1.0, 1.0).validate().is_err());
        assert!(SimConfig::new(50, 0.4, 0.0, 1.0).validate().is_err());
        assert!(SimConfig::new(2, 0.4, 1.0, 1.0).validate().is_err());
        assert!(SimConfig::new(50, 0.4, 1.0, 1.0).validate().is_ok());
    }
}
