//! Batch front-end: a JSON run configuration in, fields and a JSON report out.
//!
//! ```json
//! {"command": "solve", "grid": 33, "extent": [1, 1], "k": {"constant": 1.0},
//!  "solver": {"tol_stationarity": 1e-8}, "out": "run", "seed": 0}
//! ```
//!
//! Exit status: 0 when the solve converged (or every check passed), 1 when
//! it did not, 2 for configuration or output errors.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::functional::{
    energy, energy_identity_laplacian, energy_identity_tracefree, KSpec,
    DEFAULT_FEASIBILITY_TOL,
};
use crate::grid::{integrate, GridDomain, ScalarField, MIN_NODES};
use crate::io::{write_field_csv, Nodes};
use crate::solver::{minimize, IterationRecord, SolveReport, SolverConfig};
use crate::verify::{
    compare_to_analytic, convergence_study, el_residual, identity_suite, perturbed_start,
    rows_to_csv, weak_el_defect, AnalyticComparison, ConvergenceRow, IdentityReport,
    StudyOptions,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;

/// Threshold on the last observed order of a `converge` run.
pub const MIN_OBSERVED_ORDER: f64 = 1.8;
/// Field error against the closed form accepted by `verify`.
pub const VERIFY_FIELD_TOL: f64 = 1e-6;
/// Relative agreement of the energy identities accepted by `verify`.
pub const VERIFY_IDENTITY_TOL: f64 = 1e-8;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("invalid `{field}`: {reason}")]
    Validation { field: String, reason: String },
}

impl ConfigError {
    fn invalid(field: &str, reason: impl Into<String>) -> Self {
        ConfigError::Validation {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Solve,
    Verify,
    Converge,
    Identities,
}

impl Command {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "solve" => Some(Command::Solve),
            "verify" => Some(Command::Verify),
            "converge" => Some(Command::Converge),
            "identities" => Some(Command::Identities),
            _ => None,
        }
    }
}

/// Validated run configuration with defaults filled in.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub grid: usize,
    pub extent: [f64; 2],
    pub k: KSpec,
    pub solver: SolverConfig,
    pub out: PathBuf,
    pub seed: u64,
    /// Grid sizes for `converge`.
    pub grids: Vec<usize>,
    /// Amplitude of the start perturbation.
    pub perturbation: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: String,
    grid: Option<usize>,
    extent: Option<[f64; 2]>,
    k: Option<KSpec>,
    solver: Option<SolverConfig>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    grids: Option<Vec<usize>>,
    perturbation: Option<f64>,
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub grid: Option<usize>,
    pub k_const: Option<f64>,
    pub out: Option<PathBuf>,
}

pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    parse_config_with(text, &Overrides::default())
}

pub fn parse_config_with(text: &str, overrides: &Overrides) -> Result<RunConfig, ConfigError> {
    let raw: RawConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let command = Command::parse(&raw.command).ok_or_else(|| {
        ConfigError::invalid(
            "command",
            format!("unknown command {:?}; expected solve, verify, converge or identities", raw.command),
        )
    })?;
    let cfg = RunConfig {
        command,
        grid: overrides.grid.or(raw.grid).unwrap_or(33),
        extent: raw.extent.unwrap_or([1.0, 1.0]),
        k: overrides
            .k_const
            .map(KSpec::Constant)
            .or(raw.k)
            .unwrap_or(KSpec::Constant(1.0)),
        solver: raw.solver.unwrap_or_default(),
        out: overrides.out.clone().or(raw.out).unwrap_or_else(|| PathBuf::from("out")),
        seed: raw.seed.unwrap_or(0),
        grids: raw.grids.unwrap_or_else(|| vec![17, 33, 65]),
        perturbation: raw.perturbation.unwrap_or(0.1),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &RunConfig) -> Result<(), ConfigError> {
    if cfg.grid < MIN_NODES {
        return Err(ConfigError::invalid("grid", format!("minimum {MIN_NODES}")));
    }
    if let Some(&n) = cfg.grids.iter().find(|&&n| n < MIN_NODES) {
        return Err(ConfigError::invalid("grids", format!("minimum {MIN_NODES}, got {n}")));
    }
    if cfg.grids.is_empty() {
        return Err(ConfigError::invalid("grids", "at least one grid size"));
    }
    if cfg.extent.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(ConfigError::invalid("extent", "side lengths must be positive and finite"));
    }
    if !cfg.perturbation.is_finite() {
        return Err(ConfigError::invalid("perturbation", "must be finite"));
    }
    let domain = GridDomain::new(cfg.extent[0], cfg.extent[1], cfg.grid, cfg.grid)
        .map_err(|e| ConfigError::invalid("grid", e.to_string()))?;
    if cfg.k.sample(domain).is_err() {
        return Err(ConfigError::invalid("k", "does not evaluate to finite nodal values"));
    }
    if cfg.command == Command::Converge && !matches!(cfg.k, KSpec::Constant(_)) {
        return Err(ConfigError::invalid("k", "converge needs a constant k"));
    }
    cfg.solver
        .validate()
        .map_err(|(field, reason)| ConfigError::invalid(&format!("solver.{field}"), reason))?;
    Ok(())
}

#[derive(Debug, Serialize)]
struct SolveSummary {
    energy: f64,
    constraint_inf: f64,
    stationarity_norm: f64,
    outer_iterations: usize,
    newton_iterations: usize,
    history: Vec<IterationRecord>,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            energy: r.energy,
            constraint_inf: r.constraint_inf,
            stationarity_norm: r.stationarity_norm,
            outer_iterations: r.outer_iterations,
            newton_iterations: r.newton_iterations_total,
            history: r.history.clone(),
        }
    }
}

#[derive(Debug, Serialize)]
struct VerifySummary {
    el_residual_inf: f64,
    /// `el_residual_inf / (tol_stationarity + h^2)`.
    el_residual_constant: f64,
    weak_el_defect_max: f64,
    weak_el_bound: f64,
    energy_identity_laplacian: Option<f64>,
    energy_identity_tracefree: Option<f64>,
    lower_bound_holds: bool,
    analytic: Option<AnalyticComparison>,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct ConvergeSummary {
    rows: Vec<ConvergenceRow>,
    final_order: Option<f64>,
    min_order: f64,
    passed: bool,
}

#[derive(Debug, Serialize)]
struct Report<'a> {
    artifact: &'static str,
    version: &'static str,
    config: &'a RunConfig,
    converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve: Option<SolveSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    verify: Option<VerifySummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    convergence: Option<ConvergeSummary>,
    #[serde(skip_serializing_if = "Option::is_none")]
    identities: Option<IdentityReport>,
}

impl<'a> Report<'a> {
    fn new(config: &'a RunConfig) -> Self {
        Self {
            artifact: env!("CARGO_PKG_NAME"),
            version: env!("CARGO_PKG_VERSION"),
            config,
            converged: false,
            error: None,
            solve: None,
            verify: None,
            convergence: None,
            identities: None,
        }
    }
}

#[derive(Debug, Error)]
enum RunError {
    #[error("output directory {path}: {source}")]
    Output {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Solver(#[from] crate::Error),
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::Output {
        path: path.to_path_buf(),
        source,
    })
}

fn write_report(out: &Path, report: &Report) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(report).expect("report serializes");
    text.push('\n');
    write_text(&out.join("report.json"), &text)
}

fn domain_of(cfg: &RunConfig) -> crate::Result<GridDomain> {
    GridDomain::new(cfg.extent[0], cfg.extent[1], cfg.grid, cfg.grid)
}

/// Solve from the perturbed start; non-convergence errors still hand back
/// their partial report.
fn run_solve(cfg: &RunConfig) -> crate::Result<(SolveReport, Option<String>)> {
    let domain = domain_of(cfg)?;
    let data = cfg.k.sample(domain)?;
    let start = if data.k_min() > 0.0 {
        Some(perturbed_start(domain, data.mean(), cfg.perturbation)?)
    } else {
        None
    };
    match minimize(start.as_ref(), &data, &cfg.solver) {
        Ok(r) => Ok((r, None)),
        Err(e) => match e.report() {
            Some(r) => Ok((r.clone(), Some(e.to_string()))),
            None => Err(e),
        },
    }
}

fn write_fields(out: &Path, r: &SolveReport) -> Result<(), RunError> {
    write_field_csv(out.join("v.csv"), &r.v, Nodes::All)?;
    write_field_csv(out.join("lambda.csv"), &r.lambda, Nodes::Interior)?;
    Ok(())
}

fn verify_solution(cfg: &RunConfig, r: &SolveReport) -> crate::Result<VerifySummary> {
    let domain = *r.v.domain();
    let data = cfg.k.sample(domain)?;
    let el = el_residual(&r.v, &r.lambda).max_abs();
    let h2 = domain.hx().max(domain.hy()).powi(2);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let bound_scale = cfg.solver.tol_stationarity * domain.area();
    let (mut weak_max, mut weak_ok) = (0.0_f64, true);
    for _ in 0..8 {
        let h = ScalarField::new(
            domain,
            (0..domain.len()).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )?;
        let defect = weak_el_defect(&r.v, &r.lambda, &h);
        weak_max = weak_max.max(defect);
        weak_ok &= defect <= bound_scale * h.norm();
    }

    let lap = energy_identity_laplacian(&r.v, &data, DEFAULT_FEASIBILITY_TOL).ok();
    let tf = energy_identity_tracefree(&r.v, &data, DEFAULT_FEASIBILITY_TOL).ok();
    let e = energy(&r.v);
    let identity_ok = [lap, tf]
        .iter()
        .all(|x| x.is_some_and(|x| (x - e).abs() <= VERIFY_IDENTITY_TOL * e.abs().max(1.0)));

    let lower = 2.0 * integrate(data.k()) - 2.0 * cfg.solver.tol_constraint * domain.interior_area();
    let lower_bound_holds = data.k_min() < 0.0 || r.history.iter().all(|h| h.energy >= lower);

    let analytic = compare_to_analytic(&r.v, &data).ok();
    let analytic_ok = analytic.is_none_or(|a| a.field_error_inf <= VERIFY_FIELD_TOL);

    Ok(VerifySummary {
        el_residual_inf: el,
        el_residual_constant: el / (cfg.solver.tol_stationarity + h2),
        weak_el_defect_max: weak_max,
        weak_el_bound: bound_scale,
        energy_identity_laplacian: lap,
        energy_identity_tracefree: tf,
        lower_bound_holds,
        analytic,
        passed: r.converged && weak_ok && identity_ok && lower_bound_holds && analytic_ok,
    })
}

fn execute(cfg: &RunConfig) -> Result<u8, RunError> {
    fs::create_dir_all(&cfg.out).map_err(|source| RunError::Output {
        path: cfg.out.clone(),
        source,
    })?;
    let mut report = Report::new(cfg);
    let status = match cfg.command {
        Command::Solve | Command::Verify => match run_solve(cfg) {
            Ok((r, err)) => {
                write_fields(&cfg.out, &r)?;
                report.converged = r.converged;
                report.error = err;
                report.solve = Some(SolveSummary::from(&r));
                let mut ok = r.converged;
                if cfg.command == Command::Verify {
                    let v = verify_solution(cfg, &r)?;
                    ok &= v.passed;
                    report.verify = Some(v);
                }
                ok
            }
            Err(e) => {
                report.error = Some(e.to_string());
                false
            }
        },
        Command::Converge => {
            let KSpec::Constant(k) = cfg.k else {
                unreachable!("validated");
            };
            let opts = StudyOptions {
                extent: (cfg.extent[0], cfg.extent[1]),
                perturbation: cfg.perturbation,
                solver: cfg.solver.clone(),
            };
            match convergence_study(k, &cfg.grids, &opts) {
                Ok(rows) => {
                    write_text(&cfg.out.join("convergence.csv"), &rows_to_csv(&rows))?;
                    let final_order = rows.last().and_then(|r| r.observed_order);
                    let passed = final_order.is_some_and(|o| o >= MIN_OBSERVED_ORDER);
                    report.converged = true;
                    report.convergence = Some(ConvergeSummary {
                        rows,
                        final_order,
                        min_order: MIN_OBSERVED_ORDER,
                        passed,
                    });
                    passed
                }
                Err(e) => {
                    report.error = Some(e.to_string());
                    false
                }
            }
        }
        Command::Identities => {
            let ids = identity_suite(cfg.seed);
            let passed = ids.passed;
            report.converged = true;
            report.identities = Some(ids);
            passed
        }
    };
    if let Some(msg) = &report.error {
        eprintln!("error: {msg}");
    }
    write_report(&cfg.out, &report)?;
    Ok(if status { EXIT_OK } else { EXIT_FAILED })
}

/// Runs one configuration; returns the process exit status.
pub fn run(cfg: &RunConfig) -> u8 {
    match execute(cfg) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}

/// Reads, parses and runs a configuration file.
pub fn run_file(path: &Path, overrides: &Overrides) -> u8 {
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    match parse_config_with(&text, overrides) {
        Ok(cfg) => run(&cfg),
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_CONFIG
        }
    }
}
