//! Spatially varying coefficient regression by Moran-eigenvector
//! random-effects spatial filtering, with ESF and GWR baselines and a
//! Monte Carlo benchmark harness.
//!
//! - [`basis`]: connectivity, Moran eigenvectors, Moran coefficients
//! - [`esf`]: fixed-effects eigenvector spatial filtering with stepwise selection
//! - [`reesf`]: random-effects SVC model estimated by restricted likelihood
//! - [`gwr`]: geographically weighted regression and its ridge variants
//! - [`sim`]: data generator and accuracy metrics
//! - [`bench`]: Monte Carlo benchmark driver and result tables
//! - [`io`]: dataset files, fit reports and tables

pub mod basis;
pub mod bench;
pub mod data;
pub mod error;
pub mod esf;
mod linalg;
pub mod optim;
pub mod gwr;
pub mod io;
pub mod reesf;
pub mod sim;

pub use basis::{
    build_connectivity, eigen_basis, mc_of_svc, moran_coefficient, mst_range, ConnectivityMatrix,
    Coordinates, EigenBasis, DEFAULT_EIGEN_TOL,
};
pub use data::SpatialDataset;
pub use error::{Error, Result};
