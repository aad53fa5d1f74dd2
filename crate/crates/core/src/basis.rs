//! Connectivity matrices, Moran eigenvectors and Moran coefficients.
//!
//! Every eigenvector model in this crate consumes an [`EigenBasis`]: the
//! eigenpairs of the doubly-centered connectivity matrix `MCM` whose
//! eigenvalues are positive. Each eigenvector is a map pattern whose Moran
//! coefficient is proportional to its eigenvalue.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalues at or below this fraction of the leading one are dropped.
pub const DEFAULT_EIGEN_TOL: f64 = 1e-9;

/// Planar site locations. At least three distinct points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coordinates {
    points: Vec<[f64; 2]>,
}

impl Coordinates {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::DegenerateGeometry(format!(
                "need at least 3 sites, got {}",
                points.len()
            )));
        }
        check_distinct(&points)?;
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        euclid(self.points[i], self.points[j])
    }

    /// Dense `N x N` Euclidean distance matrix.
    pub fn distance_matrix(&self) -> DMatrix<f64> {
        let n = self.len();
        let mut d = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let v = self.distance(i, j);
                d[(i, j)] = v;
                d[(j, i)] = v;
            }
        }
        d
    }

    /// Reorder sites; `order[i]` is the old index of new site `i`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        Self {
            points: order.iter().map(|&i| self.points[i]).collect(),
        }
    }
}

fn euclid(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn check_distinct(points: &[[f64; 2]]) -> Result<()> {
    if let Some(p) = points.iter().find(|p| !(p[0].is_finite() && p[1].is_finite())) {
        return Err(Error::DegenerateGeometry(format!("non-finite coordinate {p:?}")));
    }
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            if euclid(points[i], points[j]) == 0.0 {
                return Err(Error::DegenerateGeometry(format!(
                    "sites {i} and {j} coincide"
                )));
            }
        }
    }
    Ok(())
}

/// Length of the longest edge of the Euclidean minimum spanning tree.
///
/// Prim's algorithm on the complete graph, `O(N^2)`. Ties in the frontier go
/// to the lower vertex index.
pub fn mst_range(points: &[[f64; 2]]) -> Result<f64> {
    let n = points.len();
    if n < 2 {
        return Err(Error::DegenerateGeometry(format!(
            "minimum spanning tree needs at least 2 sites, got {n}"
        )));
    }
    check_distinct(points)?;

    let mut in_tree = vec![false; n];
    let mut best = vec![f64::INFINITY; n];
    best[0] = 0.0;
    let mut longest = 0.0_f64;
    for _ in 0..n {
        let mut next = usize::MAX;
        for v in 0..n {
            if !in_tree[v] && (next == usize::MAX || best[v] < best[next]) {
                next = v;
            }
        }
        in_tree[next] = true;
        longest = longest.max(best[next]);
        for v in 0..n {
            if !in_tree[v] {
                best[v] = best[v].min(euclid(points[next], points[v]));
            }
        }
    }
    Ok(longest)
}

/// Exponential-kernel connectivity `c_ij = exp(-d_ij / r)` with a zero diagonal.
#[derive(Debug, Clone)]
pub struct ConnectivityMatrix {
    c: DMatrix<f64>,
    range: f64,
    scale: f64,
}

impl ConnectivityMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn range(&self) -> f64 {
        self.range
    }

    /// `1'C1`, the sum of all entries.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.c.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.c.nrows() == 0
    }
}

pub fn build_connectivity(coords: &Coordinates, range: f64) -> Result<ConnectivityMatrix> {
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidRange(range));
    }
    let n = coords.len();
    let mut c = DMatrix::zeros(n, n);
    let mut scale = 0.0;
    for j in 0..n {
        for i in (j + 1)..n {
            let v = (-coords.distance(i, j) / range).exp();
            c[(i, j)] = v;
            c[(j, i)] = v;
            scale += 2.0 * v;
        }
    }
    Ok(ConnectivityMatrix { c, range, scale })
}

/// `MCM` with `M = I - 11'/N`, formed without explicit products.
pub fn double_centered(c: &DMatrix<f64>) -> DMatrix<f64> {
    let n = c.nrows();
    let nf = n as f64;
    let row_means: Vec<f64> = (0..n).map(|i| c.row(i).sum() / nf).collect();
    let col_means: Vec<f64> = (0..n).map(|j| c.column(j).sum() / nf).collect();
    let grand = row_means.iter().sum::<f64>() / nf;
    DMatrix::from_fn(n, n, |i, j| c[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Eigenpairs of `MCM` with positive eigenvalues, sorted in descending order.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    vectors: DMatrix<f64>,
    values: Vec<f64>,
    scale: f64,
}

impl EigenBasis {
    /// Assemble a basis from parts, checking shapes and eigenvalue ordering.
    pub fn from_parts(vectors: DMatrix<f64>, values: Vec<f64>, scale: f64) -> Result<Self> {
        if vectors.ncols() != values.len() {
            return Err(Error::ShapeError(format!(
                "{} eigenvectors but {} eigenvalues",
                vectors.ncols(),
                values.len()
            )));
        }
        if values.is_empty() {
            return Err(Error::EmptyBasis);
        }
        if values.iter().any(|&v| !(v > 0.0)) || values.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput(
                "eigenvalues must be positive and sorted in descending order".into(),
            ));
        }
        if !(scale > 0.0) {
            return Err(Error::InvalidInput(format!("connectivity scale must be positive, got {scale}")));
        }
        Ok(Self {
            vectors,
            values,
            scale,
        })
    }

    /// `N x L` matrix of eigenvectors, one per column.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `1'C1` of the connectivity matrix the basis was built from.
    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn n_sites(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn n_vectors(&self) -> usize {
        self.values.len()
    }

    /// `N / 1'C1`, the factor turning an eigenvalue into a Moran coefficient.
    pub fn mc_factor(&self) -> f64 {
        self.n_sites() as f64 / self.scale
    }
}

/// Decompose `MCM` and keep eigenpairs with `lambda > tol * lambda_1`.
///
/// Eigenvector signs are fixed so that the entry with the largest magnitude
/// is positive.
pub fn eigen_basis(c: &ConnectivityMatrix, tol: f64) -> Result<EigenBasis> {
    let mcm = double_centered(c.matrix());
    let eig = mcm.symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));

    let lead = eig.eigenvalues[order[0]];
    let magnitude = eig.eigenvalues.amax();
    if !(lead > 1e-12 * magnitude) {
        return Err(Error::EmptyBasis);
    }
    let keep: Vec<usize> = order
        .into_iter()
        .take_while(|&i| eig.eigenvalues[i] > tol * lead)
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyBasis);
    }

    let n = c.len();
    let mut vectors = DMatrix::zeros(n, keep.len());
    for (col, &src) in keep.iter().enumerate() {
        let v = eig.eigenvectors.column(src);
        let pivot = v.iter().cloned().fold(0.0_f64, |m, x| if x.abs() > m.abs() { x } else { m });
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        vectors.column_mut(col).copy_from(&(v * sign));
    }
    let values = keep.iter().map(|&i| eig.eigenvalues[i]).collect();
    Ok(EigenBasis {
        vectors,
        values,
        scale: c.scale(),
    })
}

/// Moran coefficient `(N / 1'C1) * (y'MCMy) / (y'My)`.
pub fn moran_coefficient(y: &DVector<f64>, c: &ConnectivityMatrix) -> Result<f64> {
    if y.len() != c.len() {
        return Err(Error::ShapeError(format!(
            "vector of length {} against {} sites",
            y.len(),
            c.len()
        )));
    }
    let z = crate::linalg::centered(y);
    let denom = z.norm_squared();
    if !(denom > f64::EPSILON * y.norm_squared().max(f64::MIN_POSITIVE)) {
        return Err(Error::ZeroVariance);
    }
    let num = z.dot(&(c.matrix() * &z));
    Ok(c.len() as f64 / c.scale() * num / denom)
}

/// Moran coefficient of the surface `E * gamma`, computed from the
/// coefficients alone as an eigenvalue average weighted by `gamma^2`.
pub fn mc_of_svc(gamma: &[f64], basis: &EigenBasis) -> Result<f64> {
    if gamma.len() != basis.n_vectors() {
        return Err(Error::ShapeError(format!(
            "{} coefficients for {} eigenvectors",
            gamma.len(),
            basis.n_vectors()
        )));
    }
    let weight: f64 = gamma.iter().map(|g| g * g).sum();
    if weight == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let num: f64 = gamma
        .iter()
        .zip(basis.values())
        .map(|(g, l)| g * g * l)
        .sum();
    Ok(basis.mc_factor() * num / weight)
}
