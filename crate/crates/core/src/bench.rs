//! Monte Carlo benchmark driver: simulate each cell of a design grid
//! repeatedly, fit every requested model, and aggregate accuracy and timing.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::basis::{build_connectivity, eigen_basis, mst_range, EigenBasis, DEFAULT_EIGEN_TOL};
use crate::data::SpatialDataset;
use crate::error::{Error, Result};
use crate::esf::fit_esf_svc;
use crate::gwr::{fit_gwr, fit_lcr_gwr, select_bandwidth, BandwidthCriterion};
use crate::reesf::{fit_reesf_svc, FitMode, ReesfSpec};
use crate::sim::{mean_bias, rmse, simulate, SeedKey, SimConfig};

/// A cell fails when more than this share of its replicates cannot be fitted.
pub const MAX_FAILURE_SHARE: f64 = 0.10;

pub const COEF_LABELS: [&str; 3] = ["beta_0", "beta_1", "beta_2"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Model {
    Gwr,
    LcrGwr,
    Esf,
    Reesf,
    ReesfA1,
    ReesfA2,
}

impl Model {
    pub const ALL: [Model; 6] = [
        Model::Gwr,
        Model::LcrGwr,
        Model::Esf,
        Model::Reesf,
        Model::ReesfA1,
        Model::ReesfA2,
    ];

    /// Machine tag, as used in configs and CSV output.
    pub fn tag(self) -> &'static str {
        match self {
            Model::Gwr => "gwr",
            Model::LcrGwr => "lcr-gwr",
            Model::Esf => "esf",
            Model::Reesf => "reesf",
            Model::ReesfA1 => "reesf-a1",
            Model::ReesfA2 => "reesf-a2",
        }
    }

    /// Column heading in the text tables.
    pub fn label(self) -> &'static str {
        match self {
            Model::Gwr => "GWR",
            Model::LcrGwr => "LCR-GWR",
            Model::Esf => "ESF",
            Model::Reesf => "RE-ESF",
            Model::ReesfA1 => "RE-ESF(A1)",
            Model::ReesfA2 => "RE-ESF(A2)",
        }
    }

    fn uses_basis(self) -> bool {
        matches!(self, Model::Esf | Model::Reesf | Model::ReesfA1 | Model::ReesfA2)
    }

    fn uses_bandwidth(self) -> bool {
        matches!(self, Model::Gwr | Model::LcrGwr)
    }
}

/// Cartesian-product shorthand for a design grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: Vec<usize>,
    pub ws: Vec<f64>,
    /// `(r_1, r_2)` pairs.
    pub ranges: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BenchConfig {
    /// Explicit cells, run before any `grid` cells.
    #[serde(default)]
    pub cells: Vec<SimConfig>,
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "all_models")]
    pub models: Vec<Model>,
    #[serde(default = "default_replicates")]
    pub replicates: usize,
    #[serde(default = "default_seed")]
    pub master_seed: u64,
    #[serde(default = "default_criterion")]
    pub bandwidth: BandwidthCriterion,
}

fn all_models() -> Vec<Model> {
    Model::ALL.to_vec()
}
fn default_replicates() -> usize {
    200
}
fn default_seed() -> u64 {
    20170101
}
fn default_criterion() -> BandwidthCriterion {
    BandwidthCriterion::Loocv
}

impl BenchConfig {
    pub fn new(cells: Vec<SimConfig>, models: Vec<Model>, replicates: usize, master_seed: u64) -> Self {
        Self {
            cells,
            grid: None,
            models,
            replicates,
            master_seed,
            bandwidth: default_criterion(),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidInput(format!("benchmark config: {}", e.message())))
    }

    /// Parse by file extension: `.toml`, otherwise JSON.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some("toml") => Self::from_toml_str(&text),
            _ => Self::from_json_str(&text),
        }
    }

    /// Explicit cells followed by the grid in `n`, `ws`, `ranges` order.
    pub fn expanded_cells(&self) -> Vec<SimConfig> {
        let mut out = self.cells.clone();
        if let Some(g) = &self.grid {
            for &n in &g.n {
                for &ws in &g.ws {
                    for r in &g.ranges {
                        out.push(SimConfig::new(n, ws, r[0], r[1]));
                    }
                }
            }
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let cells = self.expanded_cells();
        if cells.is_empty() {
            return Err(Error::InvalidInput("benchmark config has no cells".into()));
        }
        if self.models.is_empty() {
            return Err(Error::InvalidInput("benchmark config has no models".into()));
        }
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        for c in &cells {
            c.validate()?;
        }
        Ok(())
    }
}

/// Aggregate over the successful replicates of one model in one cell, for
/// one coefficient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub n: usize,
    pub ws: f64,
    pub r1: f64,
    pub r2: f64,
    pub model: Model,
    pub coef: usize,
    pub rmse: f64,
    pub mean_bias: f64,
    /// Mean wall time per fit in seconds; shared preprocessing (basis or
    /// bandwidth search) is included.
    pub seconds: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub replicates: usize,
    pub master_seed: u64,
    pub bandwidth: BandwidthCriterion,
}

impl BenchReport {
    /// `CellFailure` for the first cell/model whose failure share exceeds
    /// [`MAX_FAILURE_SHARE`].
    pub fn check(&self) -> Result<()> {
        for row in self.rows.iter().filter(|r| r.coef == 0) {
            if row.failures as f64 > MAX_FAILURE_SHARE * self.replicates as f64 {
                return Err(Error::CellFailure {
                    cell: format!(
                        "n={} ws={} r1={} r2={} model={}",
                        row.n,
                        row.ws,
                        row.r1,
                        row.r2,
                        row.model.tag()
                    ),
                    failed: row.failures,
                    replicates: self.replicates,
                });
            }
        }
        Ok(())
    }

    pub fn find(&self, cell: &SimConfig, model: Model, coef: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| {
            r.n == cell.n && r.ws == cell.ws && r.r1 == cell.r1 && r.r2 == cell.r2 && r.model == model && r.coef == coef
        })
    }
}

/// Per-replicate outcome of one model.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    rmse: [f64; 3],
    bias: [f64; 3],
    seconds: f64,
}

fn score(est: &DMatrix<f64>, truth: &DMatrix<f64>, seconds: f64) -> Result<Outcome> {
    let mut out = Outcome {
        rmse: [0.0; 3],
        bias: [0.0; 3],
        seconds,
    };
    for k in 0..3 {
        let e = est.column(k);
        let t = truth.column(k);
        out.rmse[k] = rmse(e.as_slice(), t.as_slice())?;
        out.bias[k] = mean_bias(e.as_slice(), t.as_slice())?;
    }
    if out.rmse.iter().chain(&out.bias).all(|v| v.is_finite()) {
        Ok(out)
    } else {
        Err(Error::NumericalFailure("non-finite coefficient estimates".into()))
    }
}

fn timed<T>(f: impl FnOnce() -> Result<T>) -> (Result<T>, f64) {
    let start = Instant::now();
    let out = f();
    (out, start.elapsed().as_secs_f64())
}

fn mst_basis(data: &SpatialDataset) -> Result<EigenBasis> {
    let range = mst_range(data.coords.points())?;
    eigen_basis(&build_connectivity(&data.coords, range)?, DEFAULT_EIGEN_TOL)
}

/// Simulate replicate `key` of `cell` and fit each model. Data generation is
/// not timed; the eigenbasis time is charged to every eigenvector model and
/// the bandwidth search to both GWR variants (LCR-GWR reuses the GWR
/// bandwidth).
fn run_replicate(cell: &SimConfig, key: &SeedKey, models: &[Model], criterion: BandwidthCriterion) -> Vec<Option<Outcome>> {
    let Ok(sim) = simulate(cell, key) else {
        return vec![None; models.len()];
    };
    let data = &sim.data;
    let (basis, basis_secs) = if models.iter().any(|m| m.uses_basis()) {
        timed(|| mst_basis(data))
    } else {
        (Err(Error::EmptyBasis), 0.0)
    };
    let (bandwidth, bw_secs) = if models.iter().any(|m| m.uses_bandwidth()) {
        timed(|| select_bandwidth(data, criterion).map(|s| s.bandwidth))
    } else {
        (Err(Error::SelectionFailure("not requested".into())), 0.0)
    };

    models
        .iter()
        .map(|&model| {
            let (svc, secs) = match model {
                Model::Gwr | Model::LcrGwr => {
                    let Ok(b) = bandwidth.as_ref() else { return None };
                    let (fit, t) = timed(|| if model == Model::Gwr { fit_gwr(data, *b) } else { fit_lcr_gwr(data, *b) });
                    (fit.map(|f| f.svc), t + bw_secs)
                }
                Model::Esf => {
                    let Ok(basis) = basis.as_ref() else { return None };
                    let (fit, t) = timed(|| fit_esf_svc(data, basis));
                    (fit.map(|f| f.svc), t + basis_secs)
                }
                Model::Reesf | Model::ReesfA1 | Model::ReesfA2 => {
                    let Ok(basis) = basis.as_ref() else { return None };
                    let mode = match model {
                        Model::Reesf => FitMode::Full,
                        Model::ReesfA1 => FitMode::A1,
                        _ => FitMode::A2,
                    };
                    let spec = ReesfSpec::all_varying(mode, data.n_coefs());
                    let (fit, t) = timed(|| fit_reesf_svc(data, basis, &spec));
                    (fit.map(|f| f.svc), t + basis_secs)
                }
            };
            svc.and_then(|s| score(&s, &sim.truth, secs)).ok()
        })
        .collect()
}

/// Run every cell of the configuration. Replicates run in parallel; the
/// aggregation is done in replicate order, so results do not depend on the
/// thread count. `progress` is called after each finished cell.
pub fn run_benchmark(config: &BenchConfig, mut progress: impl FnMut(usize, usize, &SimConfig)) -> Result<BenchReport> {
    config.validate()?;
    let cells = config.expanded_cells();
    let mut rows = Vec::new();
    for (ci, cell) in cells.iter().enumerate() {
        let outcomes: Vec<Vec<Option<Outcome>>> = (0..config.replicates as u64)
            .into_par_iter()
            .map(|rep| {
                let key = SeedKey::new(config.master_seed, cell.cell_id(), rep);
                run_replicate(cell, &key, &config.models, config.bandwidth)
            })
            .collect();
        for (mi, &model) in config.models.iter().enumerate() {
            let ok: Vec<Outcome> = outcomes.iter().filter_map(|o| o[mi]).collect();
            let failures = config.replicates - ok.len();
            let denom = ok.len().max(1) as f64;
            let nan_if_empty = |v: f64| if ok.is_empty() { f64::NAN } else { v };
            let seconds = nan_if_empty(ok.iter().map(|o| o.seconds).sum::<f64>() / denom);
            for k in 0..3 {
                rows.push(BenchRow {
                    n: cell.n,
                    ws: cell.ws,
                    r1: cell.r1,
                    r2: cell.r2,
                    model,
                    coef: k,
                    rmse: nan_if_empty(ok.iter().map(|o| o.rmse[k]).sum::<f64>() / denom),
                    mean_bias: nan_if_empty(ok.iter().map(|o| o.bias[k]).sum::<f64>() / denom),
                    seconds,
                    replicates: ok.len(),
                    failures,
                });
            }
        }
        progress(ci + 1, cells.len(), cell);
    }
    Ok(BenchReport {
        rows,
        replicates: config.replicates,
        master_seed: config.master_seed,
        bandwidth: config.bandwidth,
    })
}

/// Accuracy columns as CSV, one row per cell, model and coefficient, with
/// round-trippable floats. Timing is written separately by
/// [`timing_csv`] so that this output is a pure function of the config.
pub fn results_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "ws", "r1", "r2", "model", "coef", "rmse", "mean_bias", "replicates", "failures"])?;
    for r in &report.rows {
        w.write_record([
            r.n.to_string(),
            fmt17(r.ws),
            fmt17(r.r1),
            fmt17(r.r2),
            r.model.tag().to_string(),
            COEF_LABELS[r.coef].to_string(),
            fmt17(r.rmse),
            fmt17(r.mean_bias),
            r.replicates.to_string(),
            r.failures.to_string(),
        ])?;
    }
    csv_string(w)
}

/// Mean wall time per fit, one row per cell and model.
pub fn timing_csv(report: &BenchReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "ws", "r1", "r2", "model", "seconds"])?;
    for r in report.rows.iter().filter(|r| r.coef == 0) {
        w.write_record([
            r.n.to_string(),
            fmt17(r.ws),
            fmt17(r.r1),
            fmt17(r.r2),
            r.model.tag().to_string(),
            fmt17(r.seconds),
        ])?;
    }
    csv_string(w)
}

fn csv_string(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

/// Publication-style tables: one RMSE block per sample size with rows grouped by
/// coefficient, `w_s` and ranges, and a model per column; then the same
/// layout for mean bias. Only the slope coefficients are shown.
pub fn text_table(report: &BenchReport) -> String {
    let mut models: Vec<Model> = Vec::new();
    let mut sizes: Vec<usize> = Vec::new();
    for r in &report.rows {
        if !models.contains(&r.model) {
            models.push(r.model);
        }
        if !sizes.contains(&r.n) {
            sizes.push(r.n);
        }
    }
    let mut out = String::new();
    for (title, pick) in [("RMSE", true), ("Mean bias", false)] {
        for &n in &sizes {
            let _ = writeln!(out, "{title} of the estimated coefficients (N = {n})");
            let mut header = format!("{:<7} {:>4} {:>4} {:>4}", "Coef.", "w_s", "r_1", "r_2");
            for m in &models {
                let _ = write!(header, " {:>10}", m.label());
            }
            let _ = writeln!(out, "{header}");
            let _ = writeln!(out, "{}", "-".repeat(header.len()));
            for coef in 1..3 {
                let mut last_ws = None;
                let mut first = true;
                let mut cells: Vec<(f64, f64, f64)> = Vec::new();
                for r in report.rows.iter().filter(|r| r.n == n && r.coef == coef) {
                    if !cells.contains(&(r.ws, r.r1, r.r2)) {
                        cells.push((r.ws, r.r1, r.r2));
                    }
                }
                for (ws, r1, r2) in cells {
                    let coef_col = if first { COEF_LABELS[coef] } else { "" };
                    let ws_col = if last_ws != Some(ws) { format!("{ws:.1}") } else { String::new() };
                    let mut line = format!("{coef_col:<7} {ws_col:>4} {r1:>4.1} {r2:>4.1}");
                    for &m in &models {
                        let v = report
                            .rows
                            .iter()
                            .find(|r| r.n == n && r.coef == coef && r.ws == ws && r.r1 == r1 && r.r2 == r2 && r.model == m)
                            .map(|r| if pick { r.rmse } else { r.mean_bias });
                        match v {
                            Some(v) if v.is_finite() => {
                                let _ = write!(line, " {v:>10.2}");
                            }
                            _ => {
                                let _ = write!(line, " {:>10}", "-");
                            }
                        }
                    }
                    let _ = writeln!(out, "{line}");
                    first = false;
                    last_ws = Some(ws);
                }
            }
            let _ = writeln!(out);
        }
    }
    let _ = writeln!(
        out,
        "replicates per cell: {}; master seed: {}; GWR bandwidth: {}",
        report.replicates,
        report.master_seed,
        match report.bandwidth {
            BandwidthCriterion::Loocv => "leave-one-out cross-validation",
            BandwidthCriterion::Aicc => "corrected AIC",
        }
    );
    out
}
