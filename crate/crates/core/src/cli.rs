//! Batch command line front end.
//!
//! ```text
//! fieldfuse synth      --out DIR [--config F] [--seed N] [--conditions table-1] [--bank-size Q]
//! fieldfuse fuse-bayes --input DIR --out DIR [--theta X] [--tau2 ..] [--diag-only] [--plot]
//! fieldfuse fuse-cpod  --input DIR --out DIR [--T N] [--c N] [--eps-c X] [--beta X] [--plot]
//! fieldfuse compare    --input DIR --out DIR [...]
//! ```
//!
//! Exit codes: 0 success, 2 usage or input error, 3 numerical error or
//! infeasible constraints.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::bayes::{confidence_bands, run_bayesian_fusion, BayesOptions, BayesResult, SolveStrategy};
use crate::cpod::{cpod_ensemble, CpodEnsemble, CpodOptions, SnapshotSet};
use crate::error::{FuseError, Result};
use crate::geometry::{OutputOperator, SurfaceGrid};
use crate::io::{self, LoadedBundle};
use crate::plot::{Band, Plot, Series};
use crate::prior::{FlightCondition, Hyperparameters};
use crate::stats::relative_l2;
use crate::synth::{
    bank_entries, generate_scenario, generate_snapshot_bank, spec_for_condition, table1_conditions, ScenarioSpec,
};

// Like println!, but a closed stdout is not an error.
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

pub const THREADS_ENV: &str = "FIELDFUSE_THREADS";
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Hyperparameter overrides; unset values fall back to the airfoil or
/// surface defaults depending on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSection {
    pub sigma1_sq: Option<f64>,
    pub sigma2_sq: Option<f64>,
    pub tau2: Option<f64>,
    pub ell: Option<f64>,
    pub nugget: Option<f64>,
}

impl HyperSection {
    pub fn resolve(&self, three_d: bool) -> Hyperparameters {
        let base = if three_d {
            Hyperparameters::surface()
        } else {
            Hyperparameters::airfoil()
        };
        Hyperparameters {
            sigma1_sq: self.sigma1_sq.unwrap_or(base.sigma1_sq),
            sigma2_sq: self.sigma2_sq.unwrap_or(base.sigma2_sq),
            tau2: self.tau2.unwrap_or(base.tau2),
            ell: self.ell.unwrap_or(base.ell),
            nugget: self.nugget.unwrap_or(base.nugget),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BayesSection {
    pub theta: Option<f64>,
    pub diag_only: Option<bool>,
    pub strategy: SolveStrategy,
    /// Two-sided level of the pointwise bands.
    pub level: f64,
}

impl Default for BayesSection {
    fn default() -> Self {
        BayesSection {
            theta: None,
            diag_only: None,
            strategy: SolveStrategy::Auto,
            level: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CpodSection {
    pub c: usize,
    pub eps_c: f64,
    pub max_iter: usize,
    pub energy: f64,
    /// Ensemble size.
    #[serde(rename = "T")]
    pub t: usize,
    pub beta: f64,
    /// Snapshot bank size written by `synth`.
    pub bank: usize,
}

impl Default for CpodSection {
    fn default() -> Self {
        let o = CpodOptions::default();
        CpodSection {
            c: o.c,
            eps_c: o.eps_c,
            max_iter: o.max_iter,
            energy: o.energy,
            t: 1000,
            beta: 0.05,
            bank: 91,
        }
    }
}

impl CpodSection {
    pub fn options(&self) -> CpodOptions {
        CpodOptions {
            c: self.c,
            eps_c: self.eps_c,
            max_iter: self.max_iter,
            energy: self.energy,
        }
    }
}

/// Everything a command needs besides input and output paths. Read from
/// `--config` (TOML, or JSON by extension) and then overridden by flags.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scenario: ScenarioSpec,
    pub hyper: HyperSection,
    pub bayes: BayesSection,
    pub cpod: CpodSection,
    /// Master seed; overrides `scenario.seed` and seeds the ensemble.
    pub seed: Option<u64>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| FuseError::io(path, e))?;
        let cfg: RunConfig = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => serde_json::from_str(&text).map_err(|e| FuseError::parse(path, e))?,
            _ => toml::from_str(&text).map_err(|e| FuseError::parse(path, e))?,
        };
        cfg.scenario.validate()?;
        Ok(cfg)
    }

    fn scenario_spec(&self) -> ScenarioSpec {
        let mut spec = self.scenario.clone();
        if let Some(s) = self.seed {
            spec.seed = s;
        }
        spec
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ConditionSet {
    #[value(name = "table-1")]
    Table1,
}

#[derive(Debug, Parser)]
#[command(
    name = "fieldfuse",
    version,
    about = "Fuse simulated and measured surface fields under integral constraints"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic scenario bundle and snapshot bank.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Write one bundle per test condition.
        #[arg(long, value_enum)]
        conditions: Option<ConditionSet>,
        /// Snapshot bank size (at least 22).
        #[arg(long)]
        bank_size: Option<usize>,
    },
    /// Bayesian MAP fusion of a bundle.
    FuseBayes {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        bayes: BayesArgs,
    },
    /// Constrained POD ensemble fusion of a bundle.
    FuseCpod {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        cpod: CpodArgs,
    },
    /// Run both methods on a bundle and report errors, misfits and timings.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        input: InputArgs,
        #[command(flatten)]
        bayes: BayesArgs,
        #[command(flatten)]
        cpod: CpodArgs,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML or JSON run configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write SVG plots.
    #[arg(long)]
    pub plot: bool,
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Bundle directory written by `synth`.
    #[arg(long)]
    pub input: PathBuf,
    /// Snapshot bank directory; defaults to `bank` next to or inside the bundle.
    #[arg(long)]
    pub bank: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BayesArgs {
    /// Fixed fusion weight in [0, 1] instead of the fitted one.
    #[arg(long)]
    pub theta: Option<f64>,
    /// QoI noise variance.
    #[arg(long)]
    pub tau2: Option<f64>,
    /// Simulation field variance.
    #[arg(long)]
    pub sigma1sq: Option<f64>,
    /// Measured field variance.
    #[arg(long)]
    pub sigma2sq: Option<f64>,
    /// Kernel length scale.
    #[arg(long)]
    pub ell: Option<f64>,
    /// Keep only the diagonal of the posterior covariance.
    #[arg(long)]
    pub diag_only: bool,
}

#[derive(Debug, Args)]
pub struct CpodArgs {
    /// Ensemble size.
    #[arg(long = "T")]
    pub t: Option<usize>,
    /// Stopping window, in iterations.
    #[arg(long)]
    pub c: Option<usize>,
    /// Stopping threshold on the cost dispersion over the window.
    #[arg(long)]
    pub eps_c: Option<f64>,
    /// Two-sided significance of the ensemble bounds.
    #[arg(long)]
    pub beta: Option<f64>,
}

impl BayesArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let h = &mut cfg.hyper;
        h.tau2 = self.tau2.or(h.tau2);
        h.sigma1_sq = self.sigma1sq.or(h.sigma1_sq);
        h.sigma2_sq = self.sigma2sq.or(h.sigma2_sq);
        h.ell = self.ell.or(h.ell);
        cfg.bayes.theta = self.theta.or(cfg.bayes.theta);
        if self.diag_only {
            cfg.bayes.diag_only = Some(true);
        }
    }
}

impl CpodArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        let c = &mut cfg.cpod;
        c.t = self.t.unwrap_or(c.t);
        c.c = self.c.unwrap_or(c.c);
        c.eps_c = self.eps_c.unwrap_or(c.eps_c);
        c.beta = self.beta.unwrap_or(c.beta);
    }
}

fn base_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if common.seed.is_some() {
        cfg.seed = common.seed;
    }
    Ok(cfg)
}

/// One row of a QoI table: measured value against each field's prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QoiRow {
    pub qoi: String,
    #[serde(rename = "Measurements")]
    pub measurements: f64,
    /// One entry keyed by the method name, `MAP` or `CPOD`.
    #[serde(flatten)]
    pub fused: BTreeMap<String, f64>,
    #[serde(rename = "WT")]
    pub wt: f64,
    #[serde(rename = "CFD")]
    pub cfd: f64,
}

impl QoiRow {
    pub fn fused_value(&self) -> f64 {
        self.fused.values().next().copied().unwrap_or(f64::NAN)
    }
}

fn qoi_table(b: &LoadedBundle, method: &str, fused: &DVector<f64>) -> Result<Vec<QoiRow>> {
    let op = &b.operator;
    let (f, wt, cfd) = (op.apply(fused)?, op.apply(&b.mu_wt_filled)?, op.apply(&b.mu_cfd)?);
    Ok(op
        .names()
        .iter()
        .enumerate()
        .map(|(j, name)| QoiRow {
            qoi: name.clone(),
            measurements: b.z_measured[j],
            fused: BTreeMap::from([(method.to_string(), f[j])]),
            wt: wt[j],
            cfd: cfd[j],
        })
        .collect())
}

fn print_qoi_table(method: &str, rows: &[QoiRow]) {
    out!(
        "{:<6} {:>12} {:>12} {:>12} {:>12}",
        "QoI",
        "Measurements",
        method,
        "WT",
        "CFD"
    );
    for r in rows {
        out!(
            "{:<6} {:>12.6} {:>12.6} {:>12.6} {:>12.6}",
            r.qoi,
            r.measurements,
            r.fused_value(),
            r.wt,
            r.cfd
        );
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ConditionRow {
    pub case: usize,
    pub mach: f64,
    pub reynolds_millions: f64,
    pub alpha_deg: f64,
    pub bundle: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthReport {
    pub bundles: Vec<ConditionRow>,
    pub bank_size: usize,
    pub cells: usize,
}

/// Writes a bundle (or one per test condition) and a snapshot bank to `out`.
pub fn cmd_synth(
    cfg: &RunConfig,
    out: &Path,
    conditions: Option<ConditionSet>,
    bank_size: Option<usize>,
) -> Result<SynthReport> {
    let base = cfg.scenario_spec();
    base.validate()?;
    let q = bank_size.unwrap_or(cfg.cpod.bank);
    let entries = bank_entries(q, base.seed)?;
    io::create_dir(out)?;
    let mut rows = Vec::new();
    let mut cells = 0;
    match conditions {
        None => {
            let b = generate_scenario(&base)?;
            cells = b.grid.len();
            io::write_bundle(out, &b)?;
            rows.push(condition_row(0, &base.condition, "."));
        }
        Some(ConditionSet::Table1) => {
            for (i, c) in table1_conditions().into_iter().enumerate() {
                let spec = spec_for_condition(&base, c, i);
                let b = generate_scenario(&spec)?;
                cells = b.grid.len();
                let name = format!("case_{:02}", i + 1);
                io::write_bundle(&out.join(&name), &b)?;
                rows.push(condition_row(i + 1, &c, &name));
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            for r in &rows {
                w.serialize(r).map_err(|e| FuseError::numerical(e.to_string()))?;
            }
            let bytes = w.into_inner().map_err(|e| FuseError::numerical(e.to_string()))?;
            io::atomic_write(&out.join("conditions.csv"), &bytes)?;
        }
    }
    let bank = generate_snapshot_bank(&base, &entries)?;
    io::write_bank(&out.join("bank"), &bank)?;
    Ok(SynthReport {
        bundles: rows,
        bank_size: q,
        cells,
    })
}

fn condition_row(case: usize, c: &FlightCondition, bundle: &str) -> ConditionRow {
    ConditionRow {
        case,
        mach: c.mach,
        reynolds_millions: c.reynolds_millions,
        alpha_deg: c.alpha_deg,
        bundle: bundle.to_string(),
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BayesSummary {
    pub theta: f64,
    pub misfit: f64,
    pub hyperparameters: Hyperparameters,
    pub strategy: SolveStrategy,
    pub diag_only: bool,
    pub level: f64,
    pub cells: usize,
    pub qoi: Vec<QoiRow>,
}

fn bayes_on(cfg: &RunConfig, b: &LoadedBundle) -> Result<(BayesResult, Hyperparameters)> {
    let hyper = cfg.hyper.resolve(b.grid.is_three_d());
    let options = BayesOptions {
        theta: cfg.bayes.theta,
        diag_only: cfg.bayes.diag_only,
        strategy: cfg.bayes.strategy,
    };
    let r = run_bayesian_fusion(
        &b.mu_wt_filled,
        &b.mu_cfd,
        &b.z_measured,
        &b.operator,
        &b.grid,
        &hyper,
        &options,
    )?;
    Ok((r, hyper))
}

/// Bayesian fusion of the bundle in `input`; writes `bayes_field.csv`,
/// `bayes_summary.json` and optionally `bayes_plot.svg`.
pub fn cmd_fuse_bayes(cfg: &RunConfig, input: &Path, out: &Path, plot: bool) -> Result<BayesSummary> {
    let b = io::read_bundle(input)?;
    let (r, hyper) = bayes_on(cfg, &b)?;
    let summary = write_bayes(cfg, &b, &r, hyper, out, plot)?;
    Ok(summary)
}

fn write_bayes(
    cfg: &RunConfig,
    b: &LoadedBundle,
    r: &BayesResult,
    hyper: Hyperparameters,
    out: &Path,
    plot: bool,
) -> Result<BayesSummary> {
    io::create_dir(out)?;
    let (lo, hi) = confidence_bands(r, cfg.bayes.level)?;
    let std = r.std();
    io::write_columns_csv(
        &out.join("bayes_field.csv"),
        &["y_map", "std", "lower", "upper"],
        &[&r.y_map, &std, &lo, &hi],
    )?;
    let summary = BayesSummary {
        theta: r.theta,
        misfit: r.misfit,
        hyperparameters: hyper,
        strategy: r.strategy,
        diag_only: r.full_cov.is_none(),
        level: cfg.bayes.level,
        cells: r.y_map.len(),
        qoi: qoi_table(b, "MAP", &r.y_map)?,
    };
    io::write_json(&out.join("bayes_summary.json"), &summary)?;
    if plot {
        field_plot(b, "MAP", &r.y_map, &lo, &hi).save(&out.join("bayes_plot.svg"))?;
    }
    Ok(summary)
}

/// Plot abscissa: chord position for sections, cell index for surfaces.
fn abscissa(grid: &SurfaceGrid) -> Vec<f64> {
    if grid.is_three_d() {
        (0..grid.len()).map(|i| i as f64).collect()
    } else {
        grid.centers().iter().map(|c| c.x).collect()
    }
}

fn field_plot(b: &LoadedBundle, method: &str, fused: &DVector<f64>, lo: &DVector<f64>, hi: &DVector<f64>) -> Plot {
    let x = abscissa(&b.grid);
    let xl = if b.grid.is_three_d() { "cell" } else { "x/c" };
    let mut p = Plot::new(format!("{method} fusion"), xl, "Cp");
    p.invert_y = !b.grid.is_three_d();
    let pts = |v: &DVector<f64>| x.iter().zip(v.iter()).map(|(&a, &b)| (a, b)).collect();
    p.bands.push(Band {
        x: x.clone(),
        lower: lo.iter().copied().collect(),
        upper: hi.iter().copied().collect(),
    });
    p.series.push(Series::line(method, pts(fused)));
    p.series.push(Series::line("CFD", pts(&b.mu_cfd)));
    let wt = x.iter().zip(&b.mu_wt).filter_map(|(&a, v)| v.map(|v| (a, v))).collect();
    p.series.push(Series::markers("WT", wt));
    if let Some(y) = &b.y_true {
        p.series.push(Series::line("truth", pts(y)));
    }
    p
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CpodSummary {
    #[serde(rename = "T")]
    pub t: usize,
    pub requested: usize,
    pub nu: usize,
    pub beta: f64,
    pub t_quantile: f64,
    pub c: usize,
    pub eps_c: f64,
    pub seed: u64,
    pub bank_size: usize,
    pub misfit: f64,
    pub converged: usize,
    pub failures: Vec<(usize, String)>,
    pub qoi: Vec<QoiRow>,
    pub thetas: Vec<f64>,
    pub iterations: Vec<usize>,
    pub cost_histories: Vec<Vec<f64>>,
}

fn find_bank(input: &Path, bank: Option<&Path>) -> Result<PathBuf> {
    if let Some(b) = bank {
        return Ok(b.to_path_buf());
    }
    let inside = input.join("bank");
    if inside.join(io::MANIFEST).exists() {
        return Ok(inside);
    }
    let beside = input.parent().map(|p| p.join("bank"));
    match beside {
        Some(p) if p.join(io::MANIFEST).exists() => Ok(p),
        _ => Err(FuseError::Data(format!(
            "no snapshot bank found for {}; pass --bank",
            input.display()
        ))),
    }
}

fn ensemble_seed(cfg: &RunConfig, b: &LoadedBundle) -> u64 {
    cfg.seed
        .or_else(|| b.manifest.spec.as_ref().map(|s| s.seed))
        .unwrap_or(cfg.scenario.seed)
}

fn cpod_on(cfg: &RunConfig, b: &LoadedBundle, bank: &SnapshotSet) -> Result<CpodEnsemble> {
    cpod_ensemble(
        bank,
        &b.mu_cfd,
        &b.mu_wt_filled,
        &b.z_measured,
        &b.operator,
        &cfg.cpod.options(),
        cfg.cpod.t,
        cfg.cpod.beta,
        ensemble_seed(cfg, b),
    )
}

/// Constrained POD ensemble on the bundle in `input`; writes
/// `cpod_field.csv`, `cpod_costs.csv`, `cpod_summary.json` and optionally
/// `cpod_plot.svg`.
pub fn cmd_fuse_cpod(
    cfg: &RunConfig,
    input: &Path,
    bank: Option<&Path>,
    out: &Path,
    plot: bool,
) -> Result<CpodSummary> {
    let b = io::read_bundle(input)?;
    let snapshots = io::read_bank(&find_bank(input, bank)?, &b.grid)?;
    let e = cpod_on(cfg, &b, &snapshots)?;
    write_cpod(cfg, &b, &e, snapshots.len(), out, plot)
}

fn write_cpod(
    cfg: &RunConfig,
    b: &LoadedBundle,
    e: &CpodEnsemble,
    bank_size: usize,
    out: &Path,
    plot: bool,
) -> Result<CpodSummary> {
    io::create_dir(out)?;
    let std = e.cov_diag.map(f64::sqrt);
    io::write_columns_csv(
        &out.join("cpod_field.csv"),
        &["mean", "std", "lower", "upper"],
        &[&e.mean, &std, &e.lower, &e.upper],
    )?;
    write_costs(&out.join("cpod_costs.csv"), &e.cost_histories)?;
    let summary = CpodSummary {
        t: e.t,
        requested: e.requested,
        nu: e.nu,
        beta: e.beta,
        t_quantile: e.t_quantile,
        c: cfg.cpod.c,
        eps_c: cfg.cpod.eps_c,
        seed: ensemble_seed(cfg, b),
        bank_size,
        misfit: qoi_misfit(&b.operator, &e.mean, &b.z_measured)?,
        converged: e.converged.iter().filter(|&&c| c).count(),
        failures: e.failures.clone(),
        qoi: qoi_table(b, "CPOD", &e.mean)?,
        thetas: e.thetas.clone(),
        iterations: e.iterations.clone(),
        cost_histories: e.cost_histories.clone(),
    };
    io::write_json(&out.join("cpod_summary.json"), &summary)?;
    if plot {
        field_plot(b, "CPOD", &e.mean, &e.lower, &e.upper).save(&out.join("cpod_plot.svg"))?;
        let mut p = Plot::new("CPOD cost", "iteration", "J");
        p.log_y = true;
        for (i, h) in e.cost_histories.iter().take(5).enumerate() {
            let pts = h.iter().enumerate().map(|(k, &j)| ((k + 1) as f64, j)).collect();
            p.series.push(Series::line(format!("replicate {i}"), pts));
        }
        p.save(&out.join("cpod_costs.svg"))?;
    }
    Ok(summary)
}

fn write_costs(path: &Path, histories: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let enc = |e: csv::Error| FuseError::numerical(e.to_string());
    w.write_record(["replicate", "iteration", "cost"]).map_err(enc)?;
    for (r, h) in histories.iter().enumerate() {
        for (k, j) in h.iter().enumerate() {
            w.write_record([r.to_string(), (k + 1).to_string(), format!("{j}")])
                .map_err(enc)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| FuseError::numerical(e.to_string()))?;
    io::atomic_write(path, &bytes)
}

fn qoi_misfit(op: &OutputOperator, y: &DVector<f64>, z: &DVector<f64>) -> Result<f64> {
    Ok((op.apply(y)? - z).norm())
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct MethodErrors {
    pub map: f64,
    pub cpod: f64,
    pub wt: f64,
    pub cfd: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct Timings {
    pub load_s: f64,
    pub bayes_s: f64,
    pub cpod_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareReport {
    /// `|cpod - map| / |map|`.
    pub cpod_vs_map: f64,
    pub misfit_map: f64,
    pub misfit_cpod: f64,
    /// Relative L2 error of each field against the truth, when the bundle has one.
    pub error_vs_truth: Option<MethodErrors>,
    pub theta: f64,
    #[serde(rename = "T")]
    pub t: usize,
    pub timings: Timings,
}

/// Runs both methods on one bundle. Writes their outputs under `out/bayes`
/// and `out/cpod`, plus `compare.json` and `compare_fields.csv`.
pub fn cmd_compare(
    cfg: &RunConfig,
    input: &Path,
    bank: Option<&Path>,
    out: &Path,
    plot: bool,
) -> Result<CompareReport> {
    let t0 = Instant::now();
    let b = io::read_bundle(input)?;
    let snapshots = io::read_bank(&find_bank(input, bank)?, &b.grid)?;
    let load_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let (r, hyper) = bayes_on(cfg, &b)?;
    let bayes_s = t1.elapsed().as_secs_f64();

    let t2 = Instant::now();
    let e = cpod_on(cfg, &b, &snapshots)?;
    let cpod_s = t2.elapsed().as_secs_f64();

    write_bayes(cfg, &b, &r, hyper, &out.join("bayes"), plot)?;
    write_cpod(cfg, &b, &e, snapshots.len(), &out.join("cpod"), plot)?;

    let error_vs_truth = b.y_true.as_ref().map(|y| MethodErrors {
        map: relative_l2(&r.y_map, y),
        cpod: relative_l2(&e.mean, y),
        wt: relative_l2(&b.mu_wt_filled, y),
        cfd: relative_l2(&b.mu_cfd, y),
    });
    let report = CompareReport {
        cpod_vs_map: relative_l2(&e.mean, &r.y_map),
        misfit_map: r.misfit,
        misfit_cpod: qoi_misfit(&b.operator, &e.mean, &b.z_measured)?,
        error_vs_truth,
        theta: r.theta,
        t: e.t,
        timings: Timings {
            load_s,
            bayes_s,
            cpod_s,
            total_s: t0.elapsed().as_secs_f64(),
        },
    };
    let mut names = vec!["mu_cfd", "mu_wt", "y_map", "cpod_mean"];
    let mut cols = vec![&b.mu_cfd, &b.mu_wt_filled, &r.y_map, &e.mean];
    if let Some(y) = &b.y_true {
        names.insert(0, "y_true");
        cols.insert(0, y);
    }
    io::write_columns_csv(&out.join("compare_fields.csv"), &names, &cols)?;
    io::write_json(&out.join("compare.json"), &report)?;
    Ok(report)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| FuseError::arg(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
    // A second call in the same process keeps the first pool.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

pub fn exit_code(e: &FuseError) -> i32 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_NUMERICAL
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    configure_threads()?;
    match cli.command {
        Command::Synth {
            common,
            conditions,
            bank_size,
        } => {
            let cfg = base_config(&common)?;
            let r = cmd_synth(&cfg, &common.out, conditions, bank_size)?;
            out!(
                "wrote {} bundle(s) of {} cells and a {}-snapshot bank to {}",
                r.bundles.len(),
                r.cells,
                r.bank_size,
                common.out.display()
            );
            if conditions.is_some() {
                out!("{:>4} {:>6} {:>6} {:>6}", "case", "M", "Re/1e6", "alpha");
                for c in &r.bundles {
                    out!(
                        "{:>4} {:>6.3} {:>6.1} {:>6.2}",
                        c.case,
                        c.mach,
                        c.reynolds_millions,
                        c.alpha_deg
                    );
                }
            }
        }
        Command::FuseBayes { common, input, bayes } => {
            let mut cfg = base_config(&common)?;
            bayes.apply(&mut cfg);
            let s = cmd_fuse_bayes(&cfg, &input.input, &common.out, common.plot)?;
            out!("theta = {}, misfit = {:.3e}", s.theta, s.misfit);
            print_qoi_table("MAP", &s.qoi);
        }
        Command::FuseCpod { common, input, cpod } => {
            let mut cfg = base_config(&common)?;
            cpod.apply(&mut cfg);
            let s = cmd_fuse_cpod(&cfg, &input.input, input.bank.as_deref(), &common.out, common.plot)?;
            out!(
                "T = {} of {}, nu = {}, t = {:.4}, misfit = {:.3e}",
                s.t,
                s.requested,
                s.nu,
                s.t_quantile,
                s.misfit
            );
            print_qoi_table("CPOD", &s.qoi);
        }
        Command::Compare {
            common,
            input,
            bayes,
            cpod,
        } => {
            let mut cfg = base_config(&common)?;
            bayes.apply(&mut cfg);
            cpod.apply(&mut cfg);
            let r = cmd_compare(&cfg, &input.input, input.bank.as_deref(), &common.out, common.plot)?;
            out!("|cpod - map| / |map| = {:.4}", r.cpod_vs_map);
            out!("misfit: map {:.3e}, cpod {:.3e}", r.misfit_map, r.misfit_cpod);
            if let Some(e) = &r.error_vs_truth {
                out!(
                    "error vs truth: map {:.4}, cpod {:.4}, wt {:.4}, cfd {:.4}",
                    e.map,
                    e.cpod,
                    e.wt,
                    e.cfd
                );
            }
            let t = &r.timings;
            out!(
                "wall clock: load {:.3}s, bayes {:.3}s, cpod {:.3}s, total {:.3}s",
                t.load_s,
                t.bayes_s,
                t.cpod_s,
                t.total_s
            );
        }
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
