use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use reesf::bench::{results_csv, run_benchmark, text_table, timing_csv, BenchConfig};
use reesf::esf::{fit_esf, fit_esf_svc_with};
use reesf::gwr::{fit_gwr, fit_lcr_gwr, select_bandwidth, BandwidthCriterion};
use reesf::io::{
    basis_export, dataset_csv, finite, read_dataset, score_surfaces, write_text, DatasetFile, FitReport,
    SurfaceTable,
};
use reesf::reesf::{fit_reesf_svc, FitMode, ReesfSpec};
use reesf::sim::{simulate, SeedKey, SimConfig};
use reesf::{build_connectivity, eigen_basis, mc_of_svc, mst_range, EigenBasis, Error, DEFAULT_EIGEN_TOL};

#[derive(Parser)]
#[command(name = "reesf", version, about = "Spatially varying coefficient regression with Moran eigenvectors")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model to a dataset CSV.
    Fit(FitArgs),
    /// Generate one simulated dataset and its true coefficient surfaces.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo benchmark grid from a JSON or TOML config.
    Benchmark(BenchArgs),
    /// RMSE and mean bias of estimated surfaces against true surfaces.
    Score(ScoreArgs),
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModelArg {
    Esf,
    EsfSvc,
    Reesf,
    ReesfA1,
    ReesfA2,
    Gwr,
    LcrGwr,
}

impl ModelArg {
    fn tag(self) -> &'static str {
        match self {
            ModelArg::Esf => "esf",
            ModelArg::EsfSvc => "esf-svc",
            ModelArg::Reesf => "reesf",
            ModelArg::ReesfA1 => "reesf-a1",
            ModelArg::ReesfA2 => "reesf-a2",
            ModelArg::Gwr => "gwr",
            ModelArg::LcrGwr => "lcr-gwr",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CriterionArg {
    Loocv,
    Aicc,
}

#[derive(clap::Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    #[arg(long)]
    data: PathBuf,
    /// Connectivity range; defaults to the longest minimum-spanning-tree edge.
    #[arg(long)]
    range: Option<f64>,
    /// Comma-separated coefficient names allowed to vary (default: all).
    #[arg(long, value_delimiter = ',')]
    varying: Option<Vec<String>>,
    /// Output prefix: writes <out>.report.json and <out>.svc.csv.
    #[arg(long)]
    out: PathBuf,
    /// Also write <out>.basis.csv and <out>.basis.json.
    #[arg(long)]
    export_basis: bool,
    /// GWR bandwidth; selected by --criterion when omitted.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long, value_enum, default_value = "loocv")]
    criterion: CriterionArg,
    /// Simplex searches per optimization stage (RE-ESF models).
    #[arg(long, default_value_t = 5)]
    starts: usize,
    /// Seed for the perturbed optimizer starts (RE-ESF models).
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::Args)]
struct SimulateArgs {
    #[arg(long)]
    n: usize,
    #[arg(long)]
    ws: f64,
    #[arg(long)]
    r1: f64,
    #[arg(long)]
    r2: f64,
    #[arg(long)]
    seed: u64,
    /// Replicate index within the (seed, cell) stream.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    /// Output prefix: writes <out>.data.csv and <out>.truth.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
struct BenchArgs {
    config: PathBuf,
    /// Output prefix: writes <out>.csv, <out>.timing.csv and <out>.txt.
    #[arg(long, default_value = "bench")]
    out: PathBuf,
    /// Worker threads (default: RAYON_NUM_THREADS or all cores).
    #[arg(long)]
    threads: Option<usize>,
    /// Override the replicate count of the config.
    #[arg(long)]
    replicates: Option<usize>,
}

#[derive(clap::Args)]
struct ScoreArgs {
    /// Estimated surfaces (svc_<name> columns).
    #[arg(long)]
    est: PathBuf,
    /// True surfaces (svc_<name> columns).
    #[arg(long)]
    truth: PathBuf,
    /// Write the JSON here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure carrying the process exit code.
struct Failure {
    code: u8,
    kind: &'static str,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let (code, kind) = match &e {
            Error::ConvergenceFailure { .. } => (3, "convergence"),
            Error::NumericalFailure(_)
            | Error::RankDeficient(_)
            | Error::EmptyBasis
            | Error::ZeroVariance
            | Error::LocalSingularity(_)
            | Error::SelectionFailure(_) => (4, "numerical"),
            Error::CellFailure { .. } => (5, "cell-failure"),
            _ => (2, "input"),
        };
        Failure {
            code,
            kind,
            message: e.to_string(),
        }
    }
}

fn malformed(message: String) -> Failure {
    Failure {
        code: 2,
        kind: "input",
        message,
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let line = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("error[input]: {line}");
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Benchmark(args) => cmd_benchmark(args),
        Command::Score(args) => cmd_score(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error[{}]: {}", f.kind, f.message.replace('\n', " "));
            ExitCode::from(f.code)
        }
    }
}

fn varying_flags(file: &DatasetFile, names: &Option<Vec<String>>) -> Result<Vec<bool>, Failure> {
    let data = &file.data;
    match names {
        None => Ok(vec![true; data.n_coefs()]),
        Some(list) => {
            let mut flags = vec![false; data.n_coefs()];
            for name in list.iter().map(|s| s.trim()).filter(|s| !s.is_empty()) {
                let k = data
                    .coef_index(name)
                    .ok_or_else(|| malformed(format!("--varying names unknown coefficient column {name:?}")))?;
                flags[k] = true;
            }
            if !flags.iter().any(|&f| f) {
                return Err(malformed("--varying lists no coefficient".into()));
            }
            Ok(flags)
        }
    }
}

fn build_basis(file: &DatasetFile, range: Option<f64>) -> Result<(EigenBasis, f64), Failure> {
    let range = match range {
        Some(r) => r,
        None => mst_range(file.data.coords.points())?,
    };
    let c = build_connectivity(&file.data.coords, range)?;
    Ok((eigen_basis(&c, DEFAULT_EIGEN_TOL)?, range))
}

fn column_vec(m: &DMatrix<f64>, k: usize) -> Vec<f64> {
    m.column(k).iter().copied().collect()
}

fn cmd_fit(args: FitArgs) -> Result<(), Failure> {
    let (file, digest) = read_dataset(&args.data)?;
    let flags = varying_flags(&file, &args.varying)?;
    let data = &file.data;
    let tag = args.model.tag();
    let eigen_model = !matches!(args.model, ModelArg::Gwr | ModelArg::LcrGwr);
    let basis = if eigen_model || args.export_basis {
        Some(build_basis(&file, args.range)?)
    } else {
        None
    };

    let mut deferred = None;
    let (report, svc, se) = match args.model {
        ModelArg::Gwr | ModelArg::LcrGwr => {
            let criterion = match args.criterion {
                CriterionArg::Loocv => BandwidthCriterion::Loocv,
                CriterionArg::Aicc => BandwidthCriterion::Aicc,
            };
            let b = match args.bandwidth {
                Some(b) => b,
                None => select_bandwidth(data, criterion)?.bandwidth,
            };
            let fit = if args.model == ModelArg::Gwr {
                fit_gwr(data, b)?
            } else {
                fit_lcr_gwr(data, b)?
            };
            let means = (0..data.n_coefs()).map(|k| fit.svc.column(k).mean()).collect();
            let mut report = FitReport::new(tag, data, means, digest);
            report.bandwidth = Some(fit.bandwidth);
            if args.model == ModelArg::LcrGwr {
                report.eta = Some(fit.eta.clone());
            }
            (report, fit.svc, None)
        }
        ModelArg::Esf => {
            let (basis, range) = basis.as_ref().expect("built");
            let fit = fit_esf(data, basis)?;
            let mut report = FitReport::new(tag, data, fit.beta.iter().copied().collect(), digest);
            report.connectivity_range = Some(*range);
            report.n_eigenvectors = Some(basis.n_vectors());
            report.selected = Some(fit.selected.iter().map(|&l| (reesf::data::INTERCEPT.to_string(), l)).collect());
            report.sigma2 = Some(fit.sigma2);
            report.adjusted_r2 = Some(fit.adjusted_r2);
            let filter: Vec<f64> = {
                let e = basis.vectors().select_columns(&fit.selected);
                (e * &fit.gamma).iter().copied().collect()
            };
            let mut svc = DMatrix::from_fn(data.n_sites(), data.n_coefs(), |_, k| fit.beta[k]);
            for (i, v) in filter.iter().enumerate() {
                svc[(i, 0)] += v;
            }
            let mut gamma = vec![0.0; basis.n_vectors()];
            for (&l, &g) in fit.selected.iter().zip(fit.gamma.iter()) {
                gamma[l] = g;
            }
            let mut mc = vec![None; data.n_coefs()];
            if !fit.selected.is_empty() {
                mc[0] = finite(mc_of_svc(&gamma, basis)?);
            }
            report.mc = Some(mc);
            (report, svc, None)
        }
        ModelArg::EsfSvc => {
            let (basis, range) = basis.as_ref().expect("built");
            let fit = fit_esf_svc_with(data, basis, &flags)?;
            let mut report = FitReport::new(tag, data, fit.beta.iter().copied().collect(), digest);
            report.connectivity_range = Some(*range);
            report.n_eigenvectors = Some(basis.n_vectors());
            report.selected = Some(fit.selected.iter().map(|&(k, l)| (data.names[k].clone(), l)).collect());
            report.sigma2 = Some(fit.sigma2);
            report.adjusted_r2 = Some(fit.adjusted_r2);
            let mut mc = Vec::with_capacity(data.n_coefs());
            for k in 0..data.n_coefs() {
                let g = column_vec(&fit.gamma, k);
                mc.push(if g.iter().any(|&v| v != 0.0) { finite(mc_of_svc(&g, basis)?) } else { None });
            }
            report.mc = Some(mc);
            (report, fit.svc, None)
        }
        ModelArg::Reesf | ModelArg::ReesfA1 | ModelArg::ReesfA2 => {
            let (basis, range) = basis.as_ref().expect("built");
            let mode = match args.model {
                ModelArg::Reesf => FitMode::Full,
                ModelArg::ReesfA1 => FitMode::A1,
                _ => FitMode::A2,
            };
            let mut spec = ReesfSpec::all_varying(mode, data.n_coefs());
            spec.varying = flags.clone();
            spec.starts = args.starts.max(1);
            spec.seed = args.seed;
            let fit = fit_reesf_svc(data, basis, &spec)?;
            let mut report = FitReport::new(tag, data, fit.beta.iter().copied().collect(), digest);
            report.connectivity_range = Some(*range);
            report.n_eigenvectors = Some(basis.n_vectors());
            report.tau = Some(
                (0..data.n_coefs())
                    .map(|k| if flags[k] { Some(fit.theta.coefs[k].map_or(0.0, |c| c.tau)) } else { None })
                    .collect(),
            );
            let alphas: Vec<Option<f64>> =
                fit.theta.coefs.iter().map(|c| c.and_then(|c| finite(c.alpha))).collect();
            report.alpha = Some(if mode == FitMode::A2 {
                vec![alphas.iter().flatten().next().copied()]
            } else {
                alphas
            });
            report.sigma2 = Some(fit.sigma2);
            report.loglik = Some(fit.loglik_r);
            report.mc = Some(fit.mc.iter().map(|m| m.and_then(finite)).collect());
            report.converged = fit.converged;
            report.evaluations = Some(fit.evaluations);
            if let Err(e) = fit.ensure_converged() {
                deferred = Some(e);
            }
            (report, fit.svc.clone(), Some(fit.svc_se.clone()))
        }
    };

    write_text(&with_suffix(&args.out, ".report.json"), &report.to_json()?)?;
    let table = SurfaceTable {
        ids: file.ids.clone(),
        points: data.coords.points().to_vec(),
        names: data.names.clone(),
        values: svc,
        se,
    };
    write_text(&with_suffix(&args.out, ".svc.csv"), &table.to_csv()?)?;
    if args.export_basis {
        let (basis, range) = basis.as_ref().expect("built");
        let (csv, sidecar) = basis_export(&file.ids, basis, *range)?;
        write_text(&with_suffix(&args.out, ".basis.csv"), &csv)?;
        let json = serde_json::to_string_pretty(&sidecar).map_err(Error::from)?;
        write_text(&with_suffix(&args.out, ".basis.json"), &json)?;
    }
    match deferred {
        Some(e) => Err(e.into()),
        None => Ok(()),
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Failure> {
    let config = SimConfig::new(args.n, args.ws, args.r1, args.r2);
    config.validate()?;
    let sim = simulate(&config, &SeedKey::new(args.seed, config.cell_id(), args.replicate))?;
    let ids: Vec<String> = (1..=args.n).map(|i| i.to_string()).collect();
    write_text(&with_suffix(&args.out, ".data.csv"), &dataset_csv(&ids, &sim.data)?)?;
    let truth = SurfaceTable {
        ids,
        points: sim.data.coords.points().to_vec(),
        names: sim.data.names.clone(),
        values: sim.truth,
        se: None,
    };
    write_text(&with_suffix(&args.out, ".truth.csv"), &truth.to_csv()?)?;
    Ok(())
}

fn cmd_benchmark(args: BenchArgs) -> Result<(), Failure> {
    let mut config = BenchConfig::from_path(&args.config)?;
    if let Some(r) = args.replicates {
        config.replicates = r;
    }
    let run = || {
        run_benchmark(&config, |done, total, cell| {
            eprintln!(
                "cell {done}/{total}: n={} ws={} r1={} r2={} done",
                cell.n, cell.ws, cell.r1, cell.r2
            );
        })
    };
    let report = match args.threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t.max(1))
            .build()
            .map_err(|e| malformed(format!("cannot start {t} threads: {e}")))?
            .install(run)?,
        None => run()?,
    };
    write_text(&with_suffix(&args.out, ".csv"), &results_csv(&report)?)?;
    write_text(&with_suffix(&args.out, ".timing.csv"), &timing_csv(&report)?)?;
    let table = text_table(&report);
    write_text(&with_suffix(&args.out, ".txt"), &table)?;
    print!("{table}");
    report.check()?;
    Ok(())
}

fn cmd_score(args: ScoreArgs) -> Result<(), Failure> {
    let read = |p: &Path| -> Result<SurfaceTable, Failure> {
        let bytes = std::fs::read(p).map_err(Error::from)?;
        Ok(SurfaceTable::parse(&bytes)?)
    };
    let scores = score_surfaces(&read(&args.est)?, &read(&args.truth)?)?;
    let json = serde_json::to_string_pretty(&scores).map_err(Error::from)?;
    match args.out {
        Some(path) => write_text(&path, &json)?,
        None => println!("{json}"),
    }
    Ok(())
}
