use nalgebra::{DMatrix, DVector};

use crate::basis::Coordinates;
use crate::error::{Error, Result};

pub const INTERCEPT: &str = "intercept";

/// Sites, response and design matrix. The first design column is the
/// intercept (all ones).
#[derive(Debug, Clone)]
pub struct SpatialDataset {
    pub coords: Coordinates,
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    /// One name per design column; `names[0]` is [`INTERCEPT`].
    pub names: Vec<String>,
}

impl SpatialDataset {
    /// Build a dataset from covariates without the intercept column.
    pub fn new(
        coords: Coordinates,
        y: DVector<f64>,
        covariates: DMatrix<f64>,
        covariate_names: Vec<String>,
    ) -> Result<Self> {
        let n = coords.len();
        if covariates.nrows() != n || covariate_names.len() != covariates.ncols() {
            return Err(Error::ShapeError(format!(
                "covariates are {}x{} with {} names for {n} sites",
                covariates.nrows(),
                covariates.ncols(),
                covariate_names.len()
            )));
        }
        let mut x = DMatrix::from_element(n, covariates.ncols() + 1, 1.0);
        x.columns_mut(1, covariates.ncols()).copy_from(&covariates);
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(covariate_names);
        Self::with_design(coords, y, x, names)
    }

    pub fn with_design(
        coords: Coordinates,
        y: DVector<f64>,
        x: DMatrix<f64>,
        names: Vec<String>,
    ) -> Result<Self> {
        let n = coords.len();
        if y.len() != n || x.nrows() != n || names.len() != x.ncols() || x.ncols() == 0 {
            return Err(Error::ShapeError(format!(
                "{n} sites, response length {}, design {}x{}, {} names",
                y.len(),
                x.nrows(),
                x.ncols(),
                names.len()
            )));
        }
        if x.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::InvalidInput("first design column must be the all-ones intercept".into()));
        }
        if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("response and covariates must be finite".into()));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(Error::InvalidInput(format!("duplicate coefficient name {dup:?}")));
        }
        Ok(Self { coords, y, x, names })
    }

    pub fn n_sites(&self) -> usize {
        self.y.len()
    }

    pub fn n_coefs(&self) -> usize {
        self.x.ncols()
    }

    pub fn coef_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Reorder sites; `order[i]` is the old index of new site `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            coords: self.coords.permuted(order),
            y: DVector::from_iterator(order.len(), order.iter().map(|&i| self.y[i])),
            x: self.x.select_rows(order),
            names: self.names.clone(),
        }
    }

    /// Copy with every non-intercept covariate shifted to mean zero.
    pub fn centered(&self) -> Self {
        let mut out = self.clone();
        for k in 1..out.x.ncols() {
            let mean = out.x.column(k).mean();
            out.x.column_mut(k).add_scalar_mut(-mean);
        }
        out
    }
}
