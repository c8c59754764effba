//! Configuration-driven experiment runner behind the `oncolyap` binary.
//!
//! Every command is a library function from a validated
//! [`ExperimentConfig`] to a serializable result; the binary only parses
//! flags, calls [`run`] and maps failures to exit codes.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::basin::{
    containment_report, map_basin, map_multipoint_basin, BasinDomain, BasinEstimate, BasinSummary, ContainmentReport,
    SamplingMode,
};
use crate::error::Error;
use crate::lyapunov::{
    build_certificate_with, compare_with_printed, CertificateOptions, EntryComparison, LyapunovCertificate, DEFAULT_BOX,
};
use crate::model::{DrugSchedule, ModelParams, SystemState};
use crate::multipoint::{
    contraction_diagnostics, solve_newton, solve_picard, ContractionReport, MultipointSolution, MultipointSpec, Region,
    DEFAULT_GRID,
};
use crate::ode::Tolerance;
use crate::plot;
use crate::sim::{integrate, Trajectory, DEFAULT_EPS_CONV};
use crate::stability::{
    boundary_equilibria, check_hypotheses, classify, find_equilibria, Equilibrium, EquilibriumId, EquilibriumSearch,
    HypothesisAudit, LocalLabel, StabilityReport, DEFAULT_EPS_EIG,
};

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;
pub const EXIT_SOLVER: u8 = 4;
pub const THREADS_ENV: &str = "ONCOLYAP_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Stability,
    Lyapunov,
    Basin,
    Multipoint,
    Sweep,
}

fn parse_tol(s: &str) -> Result<Tolerance, String> {
    let (a, r) = s.split_once(',').ok_or_else(|| format!("expected <abs,rel>, got {s:?}"))?;
    let parse = |v: &str| v.trim().parse::<f64>().map_err(|e| format!("{v:?}: {e}"));
    let tol = Tolerance::new(parse(a)?, parse(r)?);
    if tol.is_valid() {
        Ok(tol)
    } else {
        Err("tolerances must be positive".into())
    }
}

#[derive(Debug, Clone, Parser)]
#[command(name = "oncolyap", version, about = "Tumor-host-immune chemotherapy model: simulation, stability, Lyapunov certificates and basins")]
pub struct Args {
    #[arg(value_enum)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; overrides the config's `output`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write SVG plots.
    #[arg(long)]
    pub plot: bool,
    /// Seed for sampling; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Integrator tolerances as `abs,rel`.
    #[arg(long, value_parser = parse_tol)]
    pub tol: Option<Tolerance>,
    /// Fail with exit code 3 when a certificate cannot be built.
    #[arg(long)]
    pub require_certificate: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: EXIT_CONFIG, message: message.into() }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        Self { code: EXIT_NUMERIC, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::InvalidParams(_) | Error::Json(_) | Error::Io(_) | Error::MissingDimensional => EXIT_CONFIG,
            _ => EXIT_NUMERIC,
        };
        Self { code, message: e.to_string() }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn default_eps_eig() -> f64 {
    DEFAULT_EPS_EIG
}
fn default_box() -> [f64; 3] {
    DEFAULT_BOX
}
fn default_budget() -> usize {
    crate::lyapunov::DEFAULT_BUDGET
}
fn default_basin_budget() -> usize {
    4000
}
fn default_horizon() -> f64 {
    500.0
}
fn default_eps_conv() -> f64 {
    DEFAULT_EPS_CONV
}
fn default_mp_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    200
}
fn default_grid() -> usize {
    DEFAULT_GRID
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// `[x1, x2, x3, u]`.
    pub initial: [f64; 4],
    pub span: [f64; 2],
    #[serde(default)]
    pub tol: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StabilityConfig {
    pub doses: Vec<f64>,
    #[serde(default = "default_eps_eig")]
    pub eps_eig: f64,
    /// Extra Newton seeds for interior equilibria.
    #[serde(default)]
    pub seeds: Vec<[f64; 3]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovConfig {
    pub dose: f64,
    /// Defaults to every feasible boundary equilibrium.
    #[serde(default)]
    pub equilibria: Option<Vec<EquilibriumId>>,
    #[serde(rename = "box", default = "default_box")]
    pub box_bounds: [f64; 3],
    #[serde(default = "default_budget")]
    pub budget: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingKind {
    #[default]
    Grid,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinConfig {
    pub domain: BasinDomain,
    pub n: usize,
    #[serde(default)]
    pub sampling: SamplingKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_eps_conv")]
    pub eps_conv: f64,
    /// `x3` of the plotted slice; defaults to the domain's lower bound.
    #[serde(default)]
    pub slice_x3: Option<f64>,
    #[serde(rename = "box", default = "default_box")]
    pub box_bounds: [f64; 3],
    /// Certificate sampling budget.
    #[serde(default = "default_basin_budget")]
    pub budget: usize,
    /// Multipoint template; the sampled points become its offsets.
    #[serde(default)]
    pub multipoint: Option<MultipointSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipointConfig {
    pub spec: MultipointSpec,
    #[serde(default = "default_mp_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Diagnostics region; defaults to `[0, 2]^3`.
    #[serde(default)]
    pub region: Option<Region>,
    #[serde(default = "default_grid")]
    pub grid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub command: Command,
    /// Parameter path (e.g. `a12`, `response.a.0`) to the values it takes.
    pub values: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: ModelParams,
    #[serde(default)]
    pub schedule: DrugSchedule,
    #[serde(default)]
    pub simulate: Option<SimulateConfig>,
    #[serde(default)]
    pub stability: Option<StabilityConfig>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovConfig>,
    #[serde(default)]
    pub basin: Option<BasinConfig>,
    #[serde(default)]
    pub multipoint: Option<MultipointConfig>,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn missing(block: &str) -> CliError {
    CliError::config(format!("config has no `{block}` block"))
}

fn nonneg(name: &str, v: f64) -> CliResult<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(format!("{name} must be finite and >= 0, got {v}")))
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> CliResult<Self> {
        serde_json::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// Schema checks for the block `command` needs, before any computation.
    pub fn validate_for(&self, command: Command) -> CliResult<()> {
        let cfg = |e: Error| CliError::config(e.to_string());
        self.params.validate().map_err(cfg)?;
        self.schedule.validate().map_err(cfg)?;
        match command {
            Command::Simulate => {
                let s = self.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
                if !s.initial.iter().all(|v| v.is_finite()) || !(s.span[1] > s.span[0]) {
                    return Err(CliError::config("simulate needs a finite initial state and span[0] < span[1]"));
                }
                if let Some([a, r]) = s.tol {
                    if !Tolerance::new(a, r).is_valid() {
                        return Err(CliError::config("simulate tolerances must be positive"));
                    }
                }
            }
            Command::Stability => {
                let s = self.stability.as_ref().ok_or_else(|| missing("stability"))?;
                for &d in &s.doses {
                    nonneg("dose", d)?;
                }
                if !(s.eps_eig >= 0.0) {
                    return Err(CliError::config("eps_eig must be >= 0"));
                }
            }
            Command::Lyapunov => {
                let l = self.lyapunov.as_ref().ok_or_else(|| missing("lyapunov"))?;
                nonneg("dose", l.dose)?;
                if l.box_bounds.iter().any(|&k| !(k > 0.0)) || l.budget < 10 {
                    return Err(CliError::config("lyapunov needs positive box bounds and budget >= 10"));
                }
            }
            Command::Basin => {
                let b = self.basin.as_ref().ok_or_else(|| missing("basin"))?;
                let d = &b.domain;
                if !(0..3).all(|i| 0.0 <= d.lo[i] && d.lo[i] <= d.hi[i] && d.hi[i].is_finite()) {
                    return Err(CliError::config("basin domain needs 0 <= lo <= hi"));
                }
                nonneg("basin u0", d.u0)?;
                if b.n == 0 || !(b.horizon > 0.0) || !(b.eps_conv > 0.0) || b.budget < 10 {
                    return Err(CliError::config("basin needs n >= 1, horizon > 0, eps_conv > 0, budget >= 10"));
                }
                if let Some(t) = &b.multipoint {
                    t.validate().map_err(cfg)?;
                }
            }
            Command::Multipoint => {
                let m = self.multipoint.as_ref().ok_or_else(|| missing("multipoint"))?;
                m.spec.validate().map_err(cfg)?;
                if !(m.tol > 0.0) || m.max_iter == 0 || m.grid == 0 {
                    return Err(CliError::config("multipoint needs tol > 0, max_iter >= 1, grid >= 1"));
                }
                if let Some(r) = &m.region {
                    if !r.is_valid() {
                        return Err(CliError::config("multipoint region needs lo <= hi"));
                    }
                }
            }
            Command::Sweep => {
                let s = self.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
                if s.command == Command::Sweep {
                    return Err(CliError::config("a sweep cannot run another sweep"));
                }
                if s.values.is_empty() || s.values.values().any(|v| v.is_empty()) {
                    return Err(CliError::config("sweep needs at least one value per parameter"));
                }
                for point in sweep_points(s) {
                    let p = apply_overrides(&self.params, &point)?;
                    ExperimentConfig { params: p, ..self.clone() }.validate_for(s.command)?;
                }
            }
        }
        Ok(())
    }
}

/// Flag overrides applied on top of a config.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub tol: Option<Tolerance>,
    pub require_certificate: bool,
}

// ---------------------------------------------------------------- simulate

pub fn run_simulate(cfg: &ExperimentConfig, ov: &Overrides) -> CliResult<Trajectory> {
    let s = cfg.simulate.as_ref().ok_or_else(|| missing("simulate"))?;
    let tol = ov.tol.or(s.tol.map(|[a, r]| Tolerance::new(a, r))).unwrap_or_default();
    Ok(integrate(&SystemState::from_array(s.initial), &cfg.params, &cfg.schedule, (s.span[0], s.span[1]), tol)?)
}

// --------------------------------------------------------------- stability

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoseStability {
    pub dose: f64,
    pub drug_level: f64,
    pub equilibria: Vec<Equilibrium>,
    /// Reports for the feasible equilibria.
    pub reports: Vec<StabilityReport>,
    pub audit: HypothesisAudit,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub search: Option<EquilibriumSearch>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityOutput {
    pub doses: Vec<DoseStability>,
}

pub fn stability_at(params: &ModelParams, dose: f64, eps_eig: f64, seeds: &[[f64; 3]]) -> crate::Result<DoseStability> {
    let mut equilibria = boundary_equilibria(params, dose)?;
    let search = if seeds.is_empty() {
        None
    } else {
        let found = find_equilibria(params, dose, seeds)?;
        for r in &found.roots {
            let named = matches!(r.id, EquilibriumId::E0 | EquilibriumId::E1 | EquilibriumId::E2);
            if !named {
                equilibria.push(*r);
            }
        }
        Some(found)
    };
    let reports = equilibria
        .iter()
        .filter(|e| e.feasible)
        .map(|e| classify(e, params, dose, eps_eig))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(DoseStability {
        dose,
        drug_level: params.steady_drug(dose),
        equilibria,
        reports,
        audit: check_hypotheses(params, dose)?,
        search,
    })
}

pub fn run_stability(cfg: &ExperimentConfig) -> CliResult<StabilityOutput> {
    let s = cfg.stability.as_ref().ok_or_else(|| missing("stability"))?;
    let doses = s
        .doses
        .iter()
        .map(|&d| stability_at(&cfg.params, d, s.eps_eig, &s.seeds))
        .collect::<crate::Result<Vec<_>>>()?;
    Ok(StabilityOutput { doses })
}

// ---------------------------------------------------------------- lyapunov

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateAttempt {
    pub equilibrium: EquilibriumId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub certificate: Option<LyapunovCertificate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Solved entries next to the printed closed forms.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub printed_comparison: Vec<EntryComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovOutput {
    pub dose: f64,
    pub attempts: Vec<CertificateAttempt>,
}

fn attempt_certificates(
    params: &ModelParams,
    dose: f64,
    ids: Option<&[EquilibriumId]>,
    opts: &CertificateOptions,
) -> crate::Result<Vec<CertificateAttempt>> {
    let eqs = boundary_equilibria(params, dose)?;
    let chosen: Vec<Equilibrium> = match ids {
        Some(ids) => ids
            .iter()
            .map(|id| {
                eqs.iter()
                    .find(|e| e.id == *id)
                    .copied()
                    .ok_or_else(|| Error::InvalidParams(format!("no boundary equilibrium {id}")))
            })
            .collect::<crate::Result<_>>()?,
        None => eqs.into_iter().filter(|e| e.feasible).collect(),
    };
    Ok(chosen
        .iter()
        .map(|eq| {
            let (certificate, error) = match build_certificate_with(eq, params, dose, opts) {
                Ok(c) => (Some(c), None),
                Err(e) => (None, Some(e.to_string())),
            };
            let printed_comparison = if eq.feasible { compare_with_printed(eq, params).unwrap_or_default() } else { vec![] };
            CertificateAttempt { equilibrium: eq.id, certificate, error, printed_comparison }
        })
        .collect())
}

fn require(attempts: &[CertificateAttempt], ov: &Overrides) -> CliResult<()> {
    if ov.require_certificate {
        if let Some(a) = attempts.iter().find(|a| a.certificate.is_none()) {
            return Err(CliError::numeric(format!(
                "certificate for {} failed: {}",
                a.equilibrium,
                a.error.as_deref().unwrap_or("unknown")
            )));
        }
        if attempts.is_empty() {
            return Err(CliError::numeric("no certificate could be attempted"));
        }
    }
    Ok(())
}

pub fn run_lyapunov(cfg: &ExperimentConfig, ov: &Overrides) -> CliResult<LyapunovOutput> {
    let l = cfg.lyapunov.as_ref().ok_or_else(|| missing("lyapunov"))?;
    let opts = CertificateOptions {
        box_bounds: l.box_bounds,
        budget: l.budget,
        seed: ov.seed.unwrap_or(l.seed),
        ..Default::default()
    };
    let attempts = attempt_certificates(&cfg.params, l.dose, l.equilibria.as_deref(), &opts)?;
    require(&attempts, ov)?;
    Ok(LyapunovOutput { dose: l.dose, attempts })
}

// ------------------------------------------------------------------- basin

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentEntry {
    pub equilibrium: EquilibriumId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ContainmentReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinReport {
    pub summary: BasinSummary,
    pub dose: f64,
    pub certificates: Vec<CertificateAttempt>,
    pub containment: Vec<ContainmentEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinOutput {
    pub estimate: BasinEstimate,
    pub report: BasinReport,
}

pub fn run_basin(cfg: &ExperimentConfig, ov: &Overrides) -> CliResult<BasinOutput> {
    let b = cfg.basin.as_ref().ok_or_else(|| missing("basin"))?;
    let seed = ov.seed.unwrap_or(b.seed);
    let mode = match b.sampling {
        SamplingKind::Grid => SamplingMode::Grid,
        SamplingKind::Random => SamplingMode::Random { seed },
    };
    let dose = cfg.schedule.terminal_level();
    let estimate = match &b.multipoint {
        None => map_basin(&cfg.params, &cfg.schedule, &b.domain, b.n, b.horizon, b.eps_conv, mode)?,
        Some(t) => map_multipoint_basin(&cfg.params, &cfg.schedule, t, &b.domain, b.n, b.horizon, b.eps_conv, mode)?,
    };
    // certificates only for locally stable feasible equilibria
    let stable: Vec<EquilibriumId> = boundary_equilibria(&cfg.params, dose)?
        .into_iter()
        .filter(|e| e.feasible)
        .filter(|e| {
            classify(e, &cfg.params, dose, DEFAULT_EPS_EIG)
                .map(|r| r.label == LocalLabel::LocallyAsymptoticallyStable)
                .unwrap_or(false)
        })
        .map(|e| e.id)
        .collect();
    let opts = CertificateOptions { box_bounds: b.box_bounds, budget: b.budget, seed, ..Default::default() };
    let certificates = attempt_certificates(&cfg.params, dose, Some(&stable), &opts)?;
    require(&certificates, ov)?;
    let containment = certificates
        .iter()
        .filter_map(|a| a.certificate.as_ref())
        .map(|c| match containment_report(c, &estimate) {
            Ok(r) => ContainmentEntry { equilibrium: c.equilibrium.id, report: Some(r), error: None },
            Err(e) => ContainmentEntry { equilibrium: c.equilibrium.id, report: None, error: Some(e.to_string()) },
        })
        .collect();
    let report = BasinReport { summary: estimate.summary(), dose, certificates, containment };
    Ok(BasinOutput { estimate, report })
}

// -------------------------------------------------------------- multipoint

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverReport {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub y: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub ratios: Vec<f64>,
    /// `x_j0 + Σ_k α_jk x_j(t_k)` at the solution.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition_values: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feasible: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl SolverReport {
    fn from_result(r: &crate::Result<MultipointSolution>, spec: &MultipointSpec) -> Self {
        match r {
            Ok(s) => Self {
                ok: true,
                y: Some(s.y),
                residual: Some(s.residual),
                iterations: Some(s.iterations),
                ratios: s.ratios.clone(),
                condition_values: Some(s.condition_values(spec)),
                feasible: Some(s.feasible(spec)),
                error: None,
            },
            Err(e) => Self {
                ok: false,
                y: None,
                residual: None,
                iterations: None,
                ratios: vec![],
                condition_values: None,
                feasible: match e {
                    Error::Infeasible { .. } => Some(false),
                    _ => None,
                },
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultipointOutput {
    pub spec: MultipointSpec,
    pub picard: SolverReport,
    pub newton: SolverReport,
    /// `max |y_picard - y_newton|` when both succeed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agreement: Option<f64>,
    pub diagnostics: ContractionReport,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultipointRun {
    pub output: MultipointOutput,
    /// Trajectory of the first successful solver.
    pub trajectory: Option<Trajectory>,
}

pub fn run_multipoint(cfg: &ExperimentConfig) -> CliResult<MultipointRun> {
    let m = cfg.multipoint.as_ref().ok_or_else(|| missing("multipoint"))?;
    let pic = solve_picard(&m.spec, &cfg.params, &cfg.schedule, m.tol, m.max_iter);
    let newt = solve_newton(&m.spec, &cfg.params, &cfg.schedule, m.tol, m.max_iter);
    let region = m.region.unwrap_or(Region::new([0.0; 3], [2.0; 3]));
    let diagnostics = contraction_diagnostics(&m.spec, &cfg.params, &cfg.schedule, &region, m.grid)?;
    let agreement = match (&pic, &newt) {
        (Ok(a), Ok(b)) => Some((0..3).map(|i| (a.y[i] - b.y[i]).abs()).fold(0.0, f64::max)),
        _ => None,
    };
    let output = MultipointOutput {
        spec: m.spec.clone(),
        picard: SolverReport::from_result(&pic, &m.spec),
        newton: SolverReport::from_result(&newt, &m.spec),
        agreement,
        diagnostics,
    };
    let trajectory = pic.ok().or(newt.ok()).map(|s| s.trajectory);
    if trajectory.is_none() {
        return Err(CliError {
            code: EXIT_SOLVER,
            message: format!(
                "both multipoint solvers failed: picard: {}; newton: {}",
                output.picard.error.as_deref().unwrap_or(""),
                output.newton.error.as_deref().unwrap_or("")
            ),
        });
    }
    Ok(MultipointRun { output, trajectory })
}

// ------------------------------------------------------------------- sweep

/// Cartesian product of the sweep values in key order.
pub fn sweep_points(s: &SweepConfig) -> Vec<BTreeMap<String, f64>> {
    let mut points = vec![BTreeMap::new()];
    for (key, vals) in &s.values {
        points = points
            .into_iter()
            .flat_map(|p| {
                vals.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.insert(key.clone(), v);
                    q
                })
            })
            .collect();
    }
    points
}

/// Set dotted paths such as `a12` or `response.nu.2` on a parameter set.
pub fn apply_overrides(params: &ModelParams, values: &BTreeMap<String, f64>) -> CliResult<ModelParams> {
    let mut doc = serde_json::to_value(params).map_err(|e| CliError::config(e.to_string()))?;
    for (path, &v) in values {
        let mut node = &mut doc;
        for part in path.split('.') {
            node = match node {
                Value::Object(map) => map.get_mut(part),
                Value::Array(arr) => part.parse::<usize>().ok().and_then(move |i| arr.get_mut(i)),
                _ => None,
            }
            .ok_or_else(|| CliError::config(format!("unknown parameter path {path:?}")))?;
        }
        if !node.is_number() {
            return Err(CliError::config(format!("parameter path {path:?} is not numeric")));
        }
        *node = serde_json::json!(v);
    }
    let p: ModelParams = serde_json::from_value(doc).map_err(|e| CliError::config(e.to_string()))?;
    p.validate().map_err(|e| CliError::config(e.to_string()))?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub index: usize,
    pub values: BTreeMap<String, f64>,
    pub dir: String,
    pub exit_code: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub command: Command,
    pub points: Vec<SweepEntry>,
}

// ----------------------------------------------------------------- outputs

/// Write `contents` to `path` through a temporary file in the same
/// directory and a rename.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(contents)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

fn to_json<T: Serialize>(v: &T) -> CliResult<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::numeric(e.to_string()))?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write(dir: &Path, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
    let path = dir.join(name);
    write_atomic(&path, contents).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    Ok(path)
}

/// Run `command` and write its files into `out`. Returns written paths.
pub fn execute(command: Command, cfg: &ExperimentConfig, out: &Path, plot: bool, ov: &Overrides) -> CliResult<Vec<PathBuf>> {
    cfg.validate_for(command)?;
    let mut files = Vec::new();
    match command {
        Command::Simulate => {
            let traj = run_simulate(cfg, ov)?;
            files.push(write(out, "trajectory.csv", traj.to_csv_string().as_bytes())?);
            if plot {
                files.push(write(out, "trajectory.svg", plot::trajectory_svg(&traj).as_bytes())?);
            }
        }
        Command::Stability => {
            files.push(write(out, "stability.json", &to_json(&run_stability(cfg)?)?)?);
        }
        Command::Lyapunov => {
            files.push(write(out, "lyapunov.json", &to_json(&run_lyapunov(cfg, ov)?)?)?);
        }
        Command::Basin => {
            let res = run_basin(cfg, ov)?;
            files.push(write(out, "basin.csv", res.estimate.to_csv_string().as_bytes())?);
            files.push(write(out, "basin.json", &to_json(&res.report)?)?);
            if plot {
                let b = cfg.basin.as_ref().expect("validated");
                let x3 = b.slice_x3.unwrap_or(b.domain.lo[2]);
                files.push(write(out, "basin_slice.svg", plot::basin_slice_svg(&res.estimate, x3).as_bytes())?);
            }
        }
        Command::Multipoint => {
            let run = run_multipoint(cfg)?;
            files.push(write(out, "multipoint.json", &to_json(&run.output)?)?);
            if let Some(t) = &run.trajectory {
                files.push(write(out, "multipoint_trajectory.csv", t.to_csv_string().as_bytes())?);
                if plot {
                    files.push(write(out, "multipoint_trajectory.svg", plot::trajectory_svg(t).as_bytes())?);
                }
            }
        }
        Command::Sweep => {
            let s = cfg.sweep.as_ref().expect("validated");
            let points = sweep_points(s);
            let entries: Vec<SweepEntry> = points
                .into_par_iter()
                .enumerate()
                .map(|(index, values)| {
                    let dir = format!("point-{index:04}");
                    let result = apply_overrides(&cfg.params, &values).and_then(|params| {
                        let sub = ExperimentConfig { params, sweep: None, ..cfg.clone() };
                        execute(s.command, &sub, &out.join(&dir), plot, ov)
                    });
                    let (exit_code, error) = match result {
                        Ok(_) => (0, None),
                        Err(e) => (e.code, Some(e.message)),
                    };
                    SweepEntry { index, values, dir, exit_code, error }
                })
                .collect();
            files.push(write(out, "sweep.json", &to_json(&SweepIndex { command: s.command, points: entries })?)?);
        }
    }
    Ok(files)
}

fn configure_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|v| v.trim().parse::<usize>().ok()) {
        if n > 0 {
            // fails only if a pool already exists, in which case it is kept
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
}

/// Entry point used by the binary.
pub fn run(args: &Args) -> CliResult<Vec<PathBuf>> {
    configure_threads();
    let cfg = ExperimentConfig::load(&args.config)?;
    let out = args
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| CliError::config("no output directory: pass --out or set `output`"))?;
    let ov = Overrides { seed: args.seed, tol: args.tol, require_certificate: args.require_certificate };
    execute(args.command, &cfg, &out, args.plot, &ov)
}
