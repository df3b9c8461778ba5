//! Command-line front end. Every subcommand reads a TOML [`RunConfig`],
//! applies the global flag overrides and writes CSV (always), JSON and SVG
//! files into the output directory.

pub mod config;
pub mod svg;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde_json::json;

use crate::density::{density_from_sce, l1_distance, DensityCurve, DensityOptions, Histogram};
use crate::error::{Error, Result};
use crate::laws::{empirical_law_from_matrix, ShapeParams};
use crate::moments::compute_moments;
use crate::risk::{mixture_search, predict_test_error, predict_train_error, ErrorReport, TaskKind, TaskSpec};
use crate::sce::SceProblem;
use crate::simulate::kde::gaussian_kde;
use crate::simulate::matrix_io::ingest_matrix;
use crate::simulate::{self, kernel_eigen, train_error_sweep, DataSpec};
pub use config::{OutputFormat, RunConfig};
use svg::{Plot, Series};

#[derive(Debug, Parser)]
#[command(name = "rfmix", version, about = "Random-feature spectra and ridge errors: theory and simulation")]
pub struct Cli {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads. Outputs do not depend on this.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory (default `out`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Extra output formats; CSV is always written.
    #[arg(long, global = true, value_enum)]
    pub format: Vec<OutputFormat>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Limiting kernel eigenvalue density, optionally against a simulation.
    Density {
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        simulate: Option<bool>,
    },
    /// Predicted (and optionally simulated) training and test errors over a
    /// sweep of ridge constants and shapes.
    Errors {
        #[arg(long, num_args = 0..=1, default_missing_value = "true")]
        simulate: Option<bool>,
    },
    /// Test-error landscape of the Bernoulli activation mixture.
    MixtureSearch,
    /// Theory from the spectrum of a data file against features simulated
    /// on the same data.
    CompareSpectra,
    /// One or more seeded simulations: kernel spectrum and ridge fit.
    Simulate,
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Resolves the configuration and runs the selected command, returning the
/// files written.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::from_toml_str("")?,
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(t) = cli.threads {
        cfg.threads = Some(t);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    if !cli.format.is_empty() {
        cfg.formats = cli.format.clone();
    }
    match &cli.command {
        Command::Density { simulate: Some(s) } => cfg.density.simulate = *s,
        Command::Errors { simulate: Some(s) } => {
            if let Some(e) = cfg.errors.as_mut() {
                e.simulate = *s;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    let out = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("out"));
    std::fs::create_dir_all(&out)?;
    let work = || match &cli.command {
        Command::Density { .. } => cmd_density(&cfg, &out),
        Command::Errors { .. } => cmd_errors(&cfg, &out),
        Command::MixtureSearch => cmd_mixture_search(&cfg, &out),
        Command::CompareSpectra => cmd_compare_spectra(&cfg, &out),
        Command::Simulate => cmd_simulate(&cfg, &out),
    };
    match cfg.threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

struct Outputs<'a> {
    cfg: &'a RunConfig,
    dir: &'a Path,
    command: &'static str,
    written: Vec<PathBuf>,
}

impl<'a> Outputs<'a> {
    fn new(cfg: &'a RunConfig, dir: &'a Path, command: &'static str) -> Self {
        Self { cfg, dir, command, written: Vec::new() }
    }

    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn csv(&mut self, name: &str, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
        let comment = config::provenance(self.cfg, self.command);
        let mut w = self.create(name)?;
        writeln!(w, "# {comment}")?;
        writeln!(w, "{header}")?;
        for r in rows {
            writeln!(w, "{r}")?;
        }
        w.flush()?;
        Ok(())
    }

    fn json(&mut self, name: &str, value: &serde_json::Value) -> Result<()> {
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, value).map_err(|e| Error::Config(e.to_string()))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn svg(&mut self, name: &str, plot: &Plot) -> Result<()> {
        if self.cfg.wants(OutputFormat::Svg) {
            let mut w = self.create(name)?;
            w.write_all(plot.render().as_bytes())?;
            w.flush()?;
        }
        Ok(())
    }

    fn config_json(&self) -> serde_json::Value {
        json!({ "sha256": self.cfg.hash(), "resolved": self.cfg })
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.10e}")).unwrap_or_default()
}

fn write_density(out: &mut Outputs, curve: &DensityCurve) -> Result<()> {
    out.csv("density.csv", "lambda,density", curve.grid.iter().zip(&curve.values).map(|(l, d)| format!("{l:.10e},{d:.10e}")))?;
    out.json("atoms.json", &serde_json::to_value(&curve.atoms).expect("atoms serialize"))?;
    if out.cfg.wants(OutputFormat::Json) {
        out.json(
            "density.json",
            &json!({
                "config": out.config_json(),
                "grid": curve.grid,
                "density": curve.values,
                "atoms": curve.atoms,
                "mass_continuous": curve.mass_continuous,
                "total_mass": curve.total_mass(),
            }),
        )?;
    }
    Ok(())
}

/// Empirical side of a spectrum comparison: histogram, eigenvalues and L1.
fn write_comparison(out: &mut Outputs, curve: &DensityCurve, eigenvalues: &[f64], bins: usize, dims: serde_json::Value) -> Result<f64> {
    let hist = Histogram::matching(curve, eigenvalues, bins)?;
    let l1 = l1_distance(curve, &hist)?;
    let dens = hist.densities();
    out.csv(
        "histogram.csv",
        "bin_lo,bin_hi,density",
        hist.edges.windows(2).zip(&dens).map(|(e, d)| format!("{:.10e},{:.10e},{d:.10e}", e[0], e[1])),
    )?;
    out.csv("eigenvalues.csv", "eigenvalue", eigenvalues.iter().map(|v| format!("{v:.12e}")))?;
    out.json("l1.json", &json!({ "l1": l1, "bins": bins, "dims": dims, "config_sha256": out.cfg.hash() }))?;
    let mut plot = Plot::new(format!("kernel spectrum (L1 = {l1:.4})"), "eigenvalue", "density");
    plot.series.push(Series::line("theory", curve.grid.iter().copied().zip(curve.values.iter().copied()).collect()));
    plot.series.push(Series::dots("simulation", hist.edges.windows(2).zip(&dens).map(|(e, d)| (0.5 * (e[0] + e[1]), *d)).collect()));
    out.svg("density.svg", &plot)?;
    Ok(l1)
}

fn density_options(cfg: &RunConfig) -> DensityOptions {
    DensityOptions { points: cfg.density.points, lambda_max: cfg.density.lambda_max, ..DensityOptions::default() }
}

fn default_task(cfg: &RunConfig) -> TaskSpec {
    cfg.task.map(|t| t.spec()).unwrap_or_else(|| TaskSpec::autoencoder(1.0, 0.0, 1.0))
}

pub fn cmd_density(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(cfg, dir, "density");
    let shape = cfg.require_shape()?;
    let spec = cfg.activation_spec()?;
    let problem = SceProblem::new(compute_moments(&spec)?, cfg.spectral_law(shape.phi), shape)?;
    let curve = density_from_sce(&problem, &density_options(cfg))?;
    write_density(&mut out, &curve)?;
    if cfg.density.simulate {
        let sc = cfg.sim_config(shape, cfg.seed, default_task(cfg))?;
        let ev = simulate::generate_features(&sc)?.kernel_spectrum()?;
        write_comparison(&mut out, &curve, &ev, cfg.density.bins, json!({ "m": sc.m, "n0": sc.n0, "n1": sc.n1, "seed": sc.seed }))?;
    } else {
        let mut plot = Plot::new("kernel spectrum", "eigenvalue", "density");
        plot.series.push(Series::line("theory", curve.grid.iter().copied().zip(curve.values.iter().copied()).collect()));
        out.svg("density.svg", &plot)?;
    }
    Ok(out.written)
}

#[derive(Debug, Clone, Default)]
struct McStats {
    train: Vec<f64>,
    test: Vec<(f64, f64)>,
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

pub fn cmd_errors(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(cfg, dir, "errors");
    let task = cfg.require_task()?;
    let errs = cfg.errors.as_ref().ok_or_else(|| Error::Config("missing [errors] section".into()))?;
    if errs.gammas.is_empty() {
        return Err(Error::EmptyGrid("errors.gammas is empty".into()));
    }
    let shapes: Vec<ShapeParams> = if errs.shapes.is_empty() {
        vec![cfg.require_shape()?]
    } else {
        errs.shapes.iter().map(|&(phi, psi)| ShapeParams::new(phi, psi)).collect::<Result<_>>()?
    };
    let teacher = matches!(task.kind, TaskKind::LinearTeacher { .. });
    let table = compute_moments(&cfg.activation_spec()?)?;

    let mut reports: Vec<ErrorReport> = Vec::new();
    for shape in &shapes {
        let problem = SceProblem::new(table.clone(), cfg.spectral_law(shape.phi), *shape)?;
        for &g in &errs.gammas {
            let t = TaskSpec { gamma: g, ..task };
            reports.push(if teacher { predict_test_error(&problem, &t)? } else { predict_train_error(&problem, &t)? });
        }
    }

    let mut mc: Vec<McStats> = vec![McStats::default(); reports.len()];
    if errs.simulate {
        let trials = cfg.simulation.as_ref().map(|s| s.trials).unwrap_or(1);
        for (si, shape) in shapes.iter().enumerate() {
            for trial in 0..trials {
                let sc = cfg.sim_config(*shape, cfg.seed + trial as u64, task)?;
                let sim = simulate::generate_features(&sc)?;
                let targets = sim.targets();
                let eig = kernel_eigen(sim.f.as_ref())?;
                let sweep = train_error_sweep(&eig, targets.y.as_ref(), &errs.gammas)?;
                for (gi, pt) in sweep.iter().enumerate() {
                    let k = si * errs.gammas.len() + gi;
                    mc[k].train.push(pt.e_train);
                    if let Some(beta) = &targets.beta {
                        let fit = simulate::ridge_fit_and_errors(sim.f.as_ref(), targets.y.as_ref(), pt.gamma)?;
                        let est = sim.teacher_test_error(&fit.weights, beta)?;
                        mc[k].test.push((est.mean, est.std_err));
                    }
                }
            }
        }
    }

    let mut rows = Vec::new();
    let mut records = Vec::new();
    for (r, stats) in reports.iter().zip(&mc) {
        let (tr, tr_se) = if stats.train.is_empty() { (None, None) } else { let (m, s) = mean_se(&stats.train); (Some(m), Some(s)) };
        let (te, te_se) = match stats.test.len() {
            0 => (None, None),
            1 => (Some(stats.test[0].0), Some(stats.test[0].1)),
            _ => {
                let (m, s) = mean_se(&stats.test.iter().map(|t| t.0).collect::<Vec<_>>());
                (Some(m), Some(s))
            }
        };
        let shape = r.problem.shape;
        rows.push(format!(
            "{},{},{},{:.10e},{},{},{},{},{}",
            shape.phi,
            shape.psi,
            r.task.gamma,
            r.e_train,
            opt(r.e_test),
            opt(tr),
            opt(tr_se),
            opt(te),
            opt(te_se)
        ));
        let mut j = r.to_json();
        j["mc"] = json!({ "e_train": tr, "e_train_se": tr_se, "e_test": te, "e_test_se": te_se, "trials": stats.train.len() });
        records.push(j);
    }
    out.csv("errors.csv", "phi,psi,gamma,e_train_theory,e_test_theory,e_train_mc,e_train_mc_se,e_test_mc,e_test_mc_se", rows)?;
    if cfg.wants(OutputFormat::Json) {
        out.json("errors.json", &json!({ "config": out.config_json(), "points": records }))?;
    }
    let mut plot = Plot::new(if teacher { "test error" } else { "training error" }, "ridge constant", "error");
    plot.log_x = true;
    for (si, shape) in shapes.iter().enumerate() {
        let slice = &reports[si * errs.gammas.len()..(si + 1) * errs.gammas.len()];
        let label = format!("phi={} psi={}", shape.phi, shape.psi);
        plot.series.push(Series::line(
            label.clone(),
            slice.iter().map(|r| (r.task.gamma, if teacher { r.e_test.unwrap_or(f64::NAN) } else { r.e_train })).collect(),
        ));
        let sim: Vec<(f64, f64)> = slice
            .iter()
            .zip(&mc[si * errs.gammas.len()..])
            .filter_map(|(r, s)| {
                let v = if teacher { s.test.first().map(|_| mean_se(&s.test.iter().map(|t| t.0).collect::<Vec<_>>()).0) } else { (!s.train.is_empty()).then(|| mean_se(&s.train).0) };
                v.map(|v| (r.task.gamma, v))
            })
            .collect();
        if !sim.is_empty() {
            plot.series.push(Series::dots(format!("{label} (sim)"), sim));
        }
    }
    out.svg("errors.svg", &plot)?;
    Ok(out.written)
}

pub fn cmd_mixture_search(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(cfg, dir, "mixture-search");
    let shape = cfg.require_shape()?;
    let ms = cfg.mixture_search.as_ref().ok_or_else(|| Error::Config("missing [mixture_search] section".into()))?;
    let search = mixture_search(shape, ms.sigma_eps_sq, ms.gamma, &ms.grid())?;
    let mut grid = search.ranked.clone();
    grid.sort_by(|a, b| a.p.total_cmp(&b.p).then(a.zeta1.total_cmp(&b.zeta1)));
    out.csv(
        "mixture_grid.csv",
        "p,zeta1,e_test,improving",
        grid.iter().map(|m| format!("{},{},{:.10e},{}", m.p, m.zeta1, m.e_test, m.improving as u8)),
    )?;
    out.csv("single_baseline.csv", "zeta,e_test", search.baseline.curve.iter().map(|(z, e)| format!("{z},{e:.10e}")))?;
    let best = search.best().ok_or_else(|| Error::EmptyGrid("no admissible mixture grid points".into()))?;
    out.csv("argmin.csv", "p,zeta1,e_test,improving", [format!("{},{},{:.10e},{}", best.p, best.zeta1, best.e_test, best.improving as u8)])?;
    let improving = grid.iter().filter(|m| m.improving).count();
    out.json(
        "mixture_summary.json",
        &json!({
            "argmin": best,
            "single_best_zeta": search.baseline.best_zeta,
            "single_best_e_test": search.baseline.best_e_test,
            "improving_points": improving,
            "skipped_points": search.skipped,
            "config_sha256": cfg.hash(),
        }),
    )?;
    let mut plot = Plot::new("single-activation baseline", "zeta", "test error");
    plot.series.push(Series::line("single", search.baseline.curve.clone()));
    out.svg("single_baseline.svg", &plot)?;
    Ok(out.written)
}

pub fn cmd_compare_spectra(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(cfg, dir, "compare-spectra");
    let cmp = cfg.compare.as_ref().ok_or_else(|| Error::Config("missing [compare] section".into()))?;
    let psi = cfg.require_shape()?.psi;
    let x = ingest_matrix(&cmp.data, cmp.format, cmp.mean_subtract, cmp.rescale)?;
    let (n0, m) = (x.nrows(), x.ncols());
    let law = empirical_law_from_matrix(x.as_ref(), false)?;
    let crate::laws::SpectralLaw::Empirical { eigenvalues } = &law else { unreachable!() };
    let mean_eig = eigenvalues.iter().sum::<f64>() / m as f64;
    if !(mean_eig > 0.0) {
        return Err(Error::MatrixFormat(format!("{}: data matrix is zero", cmp.data.display())));
    }
    let mut spec = cfg.activation_spec()?;
    spec.sigma_x = mean_eig.sqrt();
    let shape = ShapeParams::new(n0 as f64 / m as f64, psi)?;
    let problem = SceProblem::new(compute_moments(&spec)?, law, shape)?;
    let curve = density_from_sce(&problem, &density_options(cfg))?;
    write_density(&mut out, &curve)?;
    if cmp.simulate {
        let n1 = (n0 as f64 / psi).round() as usize;
        let sc = simulate::SimConfig {
            m,
            n0,
            n1,
            n2: 1,
            seed: cfg.seed,
            activation: spec,
            data: DataSpec::FromFile { path: cmp.data.clone(), format: cmp.format, mean_subtract: cmp.mean_subtract, rescale: cmp.rescale },
            task: default_task(cfg),
            center_features: cfg.simulation.as_ref().map(|s| s.center_features).unwrap_or(true),
            n_test: None,
        };
        let ev = simulate::generate_features_on(&sc, x)?.kernel_spectrum()?;
        write_comparison(&mut out, &curve, &ev, cfg.density.bins, json!({ "m": m, "n0": n0, "n1": n1, "seed": cfg.seed, "sigma_x": mean_eig.sqrt() }))?;
    }
    Ok(out.written)
}

pub fn cmd_simulate(cfg: &RunConfig, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Outputs::new(cfg, dir, "simulate");
    let shape = cfg.require_shape()?;
    let task = cfg.require_task()?;
    let trials = cfg.simulation.as_ref().map(|s| s.trials).unwrap_or(1);
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    let mut first_spectrum = Vec::new();
    for trial in 0..trials {
        let sc = cfg.sim_config(shape, cfg.seed + trial as u64, task)?;
        let r = simulate::run_simulation(&sc, task.gamma)?;
        let (te, te_se) = r.e_test_emp.map(|t| (Some(t.mean), Some(t.std_err))).unwrap_or((None, None));
        rows.push(format!("{},{},{},{},{:.10e},{:.10e},{:.10e},{},{}", sc.seed, sc.m, sc.n0, sc.n1, r.e_train_emp, r.s_emp, r.gcv_emp, opt(te), opt(te_se)));
        summaries.push(json!({ "seed": sc.seed, "m": sc.m, "n0": sc.n0, "n1": sc.n1, "e_train_emp": r.e_train_emp, "s_emp": r.s_emp, "gcv_emp": r.gcv_emp, "e_test_emp": r.e_test_emp }));
        if trial == 0 {
            first_spectrum = r.eigenvalues;
        }
    }
    out.csv("simulation.csv", "seed,m,n0,n1,e_train_emp,s_emp,gcv_emp,e_test_emp,e_test_emp_se", rows)?;
    out.csv("eigenvalues.csv", "eigenvalue", first_spectrum.iter().map(|v| format!("{v:.12e}")))?;
    if cfg.wants(OutputFormat::Json) {
        out.json("simulation.json", &json!({ "config": out.config_json(), "trials": summaries }))?;
    }
    if cfg.wants(OutputFormat::Svg) {
        let hi = first_spectrum.last().copied().unwrap_or(1.0).max(1e-12);
        let grid: Vec<f64> = (0..=400).map(|i| hi * 1.05 * i as f64 / 400.0).collect();
        let kde = gaussian_kde(&first_spectrum, &grid, None)?;
        let mut plot = Plot::new("kernel spectrum (KDE)", "eigenvalue", "density");
        plot.series.push(Series::line(format!("seed {}", cfg.seed), grid.into_iter().zip(kde).collect()));
        out.svg("spectrum.svg", &plot)?;
    }
    Ok(out.written)
}
