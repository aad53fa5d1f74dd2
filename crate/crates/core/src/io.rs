//! Dataset files, coefficient-surface tables, fit reports and eigenbasis
//! export.
//!
//! Dataset CSV: `id,coord_x,coord_y,y,<covariate>...`; the intercept is
//! implicit. Surface CSV: `id,coord_x,coord_y` followed by `svc_<name>` and,
//! when standard errors are known, `se_<name>` for each coefficient.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::EigenBasis;
use crate::bench::fmt17;
use crate::data::{SpatialDataset, INTERCEPT};
use crate::error::{Error, Result};
use crate::sim::{mean_bias, rmse};
use crate::Coordinates;

const DATASET_HEAD: [&str; 4] = ["id", "coord_x", "coord_y", "y"];
const SITE_HEAD: [&str; 3] = ["id", "coord_x", "coord_y"];

#[derive(Debug, Clone)]
pub struct DatasetFile {
    pub ids: Vec<String>,
    pub data: SpatialDataset,
}

fn parse_cell(value: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidInput(format!("row {row}, column {column:?}: cannot parse {value:?} as a number")))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::InvalidInput(format!("row {row}, column {column:?}: value is not finite")))
    }
}

fn unique_ids(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::new();
    match ids.iter().find(|id| !seen.insert(id.as_str())) {
        Some(dup) => Err(Error::InvalidInput(format!("duplicate site id {dup:?}"))),
        None => Ok(()),
    }
}

/// Parse and validate a dataset: header layout, numeric cells, no missing
/// values, at least three rows, unique ids.
pub fn parse_dataset(bytes: &[u8]) -> Result<DatasetFile> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 4 || header[..4] != DATASET_HEAD {
        return Err(Error::InvalidInput(format!(
            "dataset header must start with {}, got {}",
            DATASET_HEAD.join(","),
            header.join(",")
        )));
    }
    let covariates: Vec<String> = header[4..].to_vec();
    if let Some(bad) = covariates.iter().find(|c| c.is_empty() || c.as_str() == INTERCEPT) {
        return Err(Error::InvalidInput(format!("invalid covariate column name {bad:?}")));
    }
    let mut ids = Vec::new();
    let mut points = Vec::new();
    let mut y = Vec::new();
    let mut cov = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        if rec.len() != header.len() {
            return Err(Error::InvalidInput(format!(
                "row {row} has {} fields, header has {}",
                rec.len(),
                header.len()
            )));
        }
        if let Some((j, _)) = rec.iter().enumerate().find(|(_, v)| v.is_empty()) {
            return Err(Error::InvalidInput(format!("row {row}, column {:?}: missing value", header[j])));
        }
        ids.push(rec[0].to_string());
        points.push([parse_cell(&rec[1], row, "coord_x")?, parse_cell(&rec[2], row, "coord_y")?]);
        y.push(parse_cell(&rec[3], row, "y")?);
        for (j, name) in covariates.iter().enumerate() {
            cov.push(parse_cell(&rec[4 + j], row, name)?);
        }
    }
    let n = ids.len();
    if n < 3 {
        return Err(Error::InvalidInput(format!("dataset needs at least 3 rows, got {n}")));
    }
    unique_ids(&ids)?;
    let coords = Coordinates::new(points)?;
    let cov = DMatrix::from_row_slice(n, covariates.len(), &cov);
    let data = SpatialDataset::new(coords, DVector::from_vec(y), cov, covariates)?;
    Ok(DatasetFile { ids, data })
}

pub fn read_dataset(path: &Path) -> Result<(DatasetFile, String)> {
    let bytes = std::fs::read(path)?;
    let digest = sha256_hex(&bytes);
    Ok((parse_dataset(&bytes)?, digest))
}

pub fn dataset_csv(ids: &[String], data: &SpatialDataset) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head: Vec<&str> = DATASET_HEAD.to_vec();
    head.extend(data.names[1..].iter().map(String::as_str));
    w.write_record(&head)?;
    for i in 0..data.n_sites() {
        let p = data.coords.points()[i];
        let mut rec = vec![ids[i].clone(), fmt17(p[0]), fmt17(p[1]), fmt17(data.y[i])];
        rec.extend((1..data.n_coefs()).map(|k| fmt17(data.x[(i, k)])));
        w.write_record(&rec)?;
    }
    finish(w)
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Coefficient surfaces at each site, optionally with standard errors.
#[derive(Debug, Clone)]
pub struct SurfaceTable {
    pub ids: Vec<String>,
    pub points: Vec<[f64; 2]>,
    pub names: Vec<String>,
    /// `N x K`.
    pub values: DMatrix<f64>,
    pub se: Option<DMatrix<f64>>,
}

impl SurfaceTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut head: Vec<String> = SITE_HEAD.iter().map(|s| s.to_string()).collect();
        for name in &self.names {
            head.push(format!("svc_{name}"));
            if self.se.is_some() {
                head.push(format!("se_{name}"));
            }
        }
        w.write_record(&head)?;
        for i in 0..self.ids.len() {
            let mut rec = vec![self.ids[i].clone(), fmt17(self.points[i][0]), fmt17(self.points[i][1])];
            for k in 0..self.names.len() {
                rec.push(fmt17(self.values[(i, k)]));
                if let Some(se) = &self.se {
                    rec.push(fmt17(se[(i, k)]));
                }
            }
            w.write_record(&rec)?;
        }
        finish(w)
    }

    /// Read the `svc_` columns (and `se_` columns when all are present) of a
    /// surface file; other extra columns are ignored.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let pos = |name: &str| header.iter().position(|h| h == name);
        let id_col = pos("id").ok_or_else(|| Error::InvalidInput("surface file has no id column".into()))?;
        let (xc, yc) = (pos("coord_x"), pos("coord_y"));
        let names: Vec<String> = header.iter().filter_map(|h| h.strip_prefix("svc_")).map(str::to_string).collect();
        if names.is_empty() {
            return Err(Error::InvalidInput("surface file has no svc_ columns".into()));
        }
        let svc_cols: Vec<usize> = names.iter().map(|n| pos(&format!("svc_{n}")).expect("listed")).collect();
        let se_cols: Option<Vec<usize>> = names.iter().map(|n| pos(&format!("se_{n}"))).collect();
        let mut ids = Vec::new();
        let mut points = Vec::new();
        let mut vals = Vec::new();
        let mut ses = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let row = i + 2;
            ids.push(rec[id_col].to_string());
            let coord = |c: Option<usize>, name: &str| c.map(|c| parse_cell(&rec[c], row, name)).unwrap_or(Ok(f64::NAN));
            points.push([coord(xc, "coord_x")?, coord(yc, "coord_y")?]);
            for (&c, n) in svc_cols.iter().zip(&names) {
                vals.push(parse_cell(&rec[c], row, &format!("svc_{n}"))?);
            }
            if let Some(se_cols) = &se_cols {
                for (&c, n) in se_cols.iter().zip(&names) {
                    ses.push(parse_cell(&rec[c], row, &format!("se_{n}"))?);
                }
            }
        }
        unique_ids(&ids)?;
        let n = ids.len();
        let k = names.len();
        Ok(Self {
            ids,
            points,
            names,
            values: DMatrix::from_row_slice(n, k, &vals),
            se: se_cols.map(|_| DMatrix::from_row_slice(n, k, &ses)),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoefScore {
    pub coefficient: String,
    pub rmse: f64,
    pub mean_bias: f64,
}

/// RMSE and mean bias per coefficient, joining sites on id and coefficients
/// on name. Both files must list the same ids; coefficients present in only
/// one file are skipped.
pub fn score_surfaces(est: &SurfaceTable, truth: &SurfaceTable) -> Result<Vec<CoefScore>> {
    let truth_rows: HashMap<&str, usize> = truth.ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    if est.ids.len() != truth.ids.len() {
        return Err(Error::InvalidInput(format!(
            "estimate has {} sites, truth has {}",
            est.ids.len(),
            truth.ids.len()
        )));
    }
    let order: Vec<usize> = est
        .ids
        .iter()
        .map(|id| {
            truth_rows
                .get(id.as_str())
                .copied()
                .ok_or_else(|| Error::InvalidInput(format!("site id {id:?} is missing from the truth file")))
        })
        .collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (k, name) in est.names.iter().enumerate() {
        let Some(tk) = truth.names.iter().position(|t| t == name) else {
            continue;
        };
        let e: Vec<f64> = est.values.column(k).iter().copied().collect();
        let t: Vec<f64> = order.iter().map(|&i| truth.values[(i, tk)]).collect();
        out.push(CoefScore {
            coefficient: name.clone(),
            rmse: rmse(&e, &t)?,
            mean_bias: mean_bias(&e, &t)?,
        });
    }
    if out.is_empty() {
        return Err(Error::InvalidInput("no coefficient name is shared by the two files".into()));
    }
    Ok(out)
}

/// Machine-readable summary of one fit. Undefined quantities are `null`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub model: String,
    pub coefficients: Vec<String>,
    /// Constant part of each coefficient; for GWR models, the mean of the
    /// local estimates.
    pub beta: Vec<f64>,
    /// Random-effect variance ratio per coefficient (RE-ESF models).
    pub tau: Option<Vec<Option<f64>>>,
    /// Smoothness per coefficient; a single shared value for `reesf-a2`.
    pub alpha: Option<Vec<Option<f64>>>,
    pub bandwidth: Option<f64>,
    /// Per-site ridge parameters (LCR-GWR).
    pub eta: Option<Vec<f64>>,
    pub connectivity_range: Option<f64>,
    pub n_eigenvectors: Option<usize>,
    /// Selected `(coefficient, eigenvector)` terms (ESF models, 0-based).
    pub selected: Option<Vec<(String, usize)>>,
    pub sigma2: Option<f64>,
    pub loglik: Option<f64>,
    pub adjusted_r2: Option<f64>,
    /// Moran coefficient of each varying part.
    pub mc: Option<Vec<Option<f64>>>,
    pub converged: bool,
    pub evaluations: Option<usize>,
    pub n_sites: usize,
    pub version: String,
    pub input_sha256: String,
    pub created_unix: u64,
}

impl FitReport {
    pub fn new(model: &str, data: &SpatialDataset, beta: Vec<f64>, input_sha256: String) -> Self {
        Self {
            model: model.to_string(),
            coefficients: data.names.clone(),
            beta,
            tau: None,
            alpha: None,
            bandwidth: None,
            eta: None,
            connectivity_range: None,
            n_eigenvectors: None,
            selected: None,
            sigma2: None,
            loglik: None,
            adjusted_r2: None,
            mc: None,
            converged: true,
            evaluations: None,
            n_sites: data.n_sites(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            input_sha256,
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Finite values as `Some`, NaN and infinities as `None`.
pub fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasisSidecar {
    pub connectivity_range: f64,
    /// `1'C1`.
    pub connectivity_sum: f64,
    pub eigenvalues: Vec<f64>,
    /// Moran coefficient of each eigenvector.
    pub moran: Vec<f64>,
}

/// `id,ev_1,...,ev_L` plus the sidecar document.
pub fn basis_export(ids: &[String], basis: &EigenBasis, range: f64) -> Result<(String, BasisSidecar)> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["id".to_string()];
    head.extend((1..=basis.n_vectors()).map(|l| format!("ev_{l}")));
    w.write_record(&head)?;
    for (i, id) in ids.iter().enumerate() {
        let mut rec = vec![id.clone()];
        rec.extend(basis.vectors().row(i).iter().map(|&v| fmt17(v)));
        w.write_record(&rec)?;
    }
    let sidecar = BasisSidecar {
        connectivity_range: range,
        connectivity_sum: basis.scale(),
        eigenvalues: basis.values().to_vec(),
        moran: basis.values().iter().map(|l| l * basis.mc_factor()).collect(),
    };
    Ok((finish(w)?, sidecar))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    Ok(std::fs::write(path, text)?)
}
