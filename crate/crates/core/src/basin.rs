//! Empirical basins of attraction by forward simulation, and their
//! comparison with certified sublevel sets.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lyapunov::{level_set_contains, LyapunovCertificate};
use crate::model::{DrugSchedule, ModelParams, SystemState};
use crate::multipoint::{solve_newton, solve_picard, MultipointSpec};
use crate::sim::{settle, ConvergenceLabel, SettleOptions, DEFAULT_EPS_CONV};
use crate::stability::{boundary_equilibria, Equilibrium, EquilibriumId};

/// Minimum number of estimate points inside `Ω_C` for a containment report.
pub const MIN_COVERAGE: usize = 30;
const MULTIPOINT_TOL: f64 = 1e-10;
const MULTIPOINT_MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasinDomain {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
    /// Initial drug amount for every sample.
    #[serde(default)]
    pub u0: f64,
}

impl BasinDomain {
    pub fn cube(lo: f64, hi: f64) -> Self {
        Self { lo: [lo; 3], hi: [hi; 3], u0: 0.0 }
    }

    pub fn contains(&self, x: &[f64; 3]) -> bool {
        (0..3).all(|i| x[i] >= self.lo[i] && x[i] <= self.hi[i])
    }

    fn validate(&self) -> Result<()> {
        let ok = (0..3).all(|i| self.lo[i].is_finite() && self.hi[i].is_finite() && 0.0 <= self.lo[i] && self.lo[i] <= self.hi[i]);
        if !ok {
            return Err(Error::Domain("basin domain needs finite 0 <= lo <= hi".into()));
        }
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return Err(Error::Domain("u0 must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum SamplingMode {
    /// `⌈n^(1/3)⌉` points per axis.
    Grid,
    Random { seed: u64 },
}

/// Outcome for one sampled initial condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PointLabel {
    Converged(EquilibriumId),
    NoConvergence,
    Diverged,
    /// The multipoint solution violated nonnegativity.
    Infeasible,
    /// The multipoint solvers failed.
    Unsolved,
    /// Integration failed for a reason other than divergence.
    Failed,
}

impl fmt::Display for PointLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointLabel::Converged(id) => id.fmt(f),
            PointLabel::NoConvergence => f.write_str("no-convergence"),
            PointLabel::Diverged => f.write_str("diverged"),
            PointLabel::Infeasible => f.write_str("infeasible"),
            PointLabel::Unsolved => f.write_str("unsolved"),
            PointLabel::Failed => f.write_str("failed"),
        }
    }
}

impl std::str::FromStr for PointLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "no-convergence" => PointLabel::NoConvergence,
            "diverged" => PointLabel::Diverged,
            "infeasible" => PointLabel::Infeasible,
            "unsolved" => PointLabel::Unsolved,
            "failed" => PointLabel::Failed,
            other => PointLabel::Converged(other.parse()?),
        })
    }
}

impl Serialize for PointLabel {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PointLabel {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl PointLabel {
    /// Excluded from basin fractions.
    pub fn is_excluded(&self) -> bool {
        matches!(self, PointLabel::Infeasible | PointLabel::Unsolved)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasinPoint {
    /// Sampled initial condition (the offset for multipoint runs).
    pub x: [f64; 3],
    pub label: PointLabel,
    /// Distance to the nearest candidate at classification time.
    pub terminal_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinEstimate {
    pub domain: BasinDomain,
    pub schedule: DrugSchedule,
    pub sampling: SamplingMode,
    pub horizon: f64,
    pub eps_conv: f64,
    pub candidates: Vec<Equilibrium>,
    pub points: Vec<BasinPoint>,
    pub counts: BTreeMap<String, usize>,
    /// Converged fraction per attractor over the non-excluded points.
    pub fractions: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasinSummary {
    pub sampling: SamplingMode,
    pub n: usize,
    pub horizon: f64,
    pub eps_conv: f64,
    pub domain: BasinDomain,
    pub counts: BTreeMap<String, usize>,
    pub fractions: BTreeMap<String, f64>,
}

impl BasinEstimate {
    pub fn fraction(&self, id: EquilibriumId) -> f64 {
        self.fractions.get(&id.to_string()).copied().unwrap_or(0.0)
    }

    pub fn summary(&self) -> BasinSummary {
        BasinSummary {
            sampling: self.sampling,
            n: self.points.len(),
            horizon: self.horizon,
            eps_conv: self.eps_conv,
            domain: self.domain,
            counts: self.counts.clone(),
            fractions: self.fractions.clone(),
        }
    }

    /// CSV with header `x1,x2,x3,attractor_label`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x1,x2,x3,attractor_label")?;
        for p in &self.points {
            writeln!(out, "{:.16e},{:.16e},{:.16e},{}", p.x[0], p.x[1], p.x[2], p.label)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("ascii output")
    }
}

/// Sample points for `n` requested samples.
pub fn sample_domain(domain: &BasinDomain, n: usize, mode: SamplingMode) -> Vec<[f64; 3]> {
    match mode {
        SamplingMode::Grid => {
            let n = n.max(1);
            let k = ((n as f64).cbrt().ceil() as usize).max(1);
            // guard against cbrt rounding just below an integer
            let k = if (k - 1).pow(3) >= n { k - 1 } else { k }.max(1);
            let axis = |i: usize, j: usize| {
                if k == 1 {
                    0.5 * (domain.lo[i] + domain.hi[i])
                } else {
                    domain.lo[i] + (domain.hi[i] - domain.lo[i]) * j as f64 / (k - 1) as f64
                }
            };
            let mut pts = Vec::with_capacity(k * k * k);
            for a in 0..k {
                for b in 0..k {
                    for c in 0..k {
                        pts.push([axis(0, a), axis(1, b), axis(2, c)]);
                    }
                }
            }
            pts
        }
        SamplingMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..n)
                .map(|_| {
                    std::array::from_fn(|i| {
                        if domain.hi[i] > domain.lo[i] {
                            rng.random_range(domain.lo[i]..=domain.hi[i])
                        } else {
                            domain.lo[i]
                        }
                    })
                })
                .collect()
        }
    }
}

/// Feasible boundary equilibria for the schedule's terminal dose.
pub fn candidates_for(params: &ModelParams, schedule: &DrugSchedule) -> Result<Vec<Equilibrium>> {
    Ok(boundary_equilibria(params, schedule.terminal_level())?.into_iter().filter(|e| e.feasible).collect())
}

fn settle_point(
    x: [f64; 3],
    u0: f64,
    params: &ModelParams,
    schedule: &DrugSchedule,
    candidates: &[Equilibrium],
    opts: &SettleOptions,
) -> (PointLabel, Option<f64>) {
    match settle(&SystemState::from_cells(x, u0), params, schedule, candidates, opts) {
        Ok(v) => {
            let label = match v.label {
                ConvergenceLabel::ConvergedTo(id) => PointLabel::Converged(id),
                ConvergenceLabel::NoConvergence => PointLabel::NoConvergence,
                ConvergenceLabel::Diverged => PointLabel::Diverged,
            };
            (label, Some(v.terminal_distance))
        }
        Err(_) => (PointLabel::Failed, None),
    }
}

fn settle_options(horizon: f64, eps_conv: f64, t0: f64) -> SettleOptions {
    let base = SettleOptions::default();
    SettleOptions {
        t0,
        initial_horizon: base.initial_horizon.min(horizon),
        max_horizon: horizon,
        eps_conv,
        ..base
    }
}

fn check_common(n: usize, horizon: f64, eps_conv: f64) -> Result<()> {
    if n == 0 {
        return Err(Error::Domain("need at least one sample".into()));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::Domain("horizon must be positive".into()));
    }
    if !(eps_conv > 0.0) {
        return Err(Error::Domain("eps_conv must be positive".into()));
    }
    Ok(())
}

fn aggregate(
    domain: BasinDomain,
    schedule: &DrugSchedule,
    sampling: SamplingMode,
    horizon: f64,
    eps_conv: f64,
    candidates: Vec<Equilibrium>,
    points: Vec<BasinPoint>,
) -> BasinEstimate {
    let mut counts = BTreeMap::new();
    for p in &points {
        *counts.entry(p.label.to_string()).or_insert(0) += 1;
    }
    let eligible = points.iter().filter(|p| !p.label.is_excluded()).count();
    let mut fractions = BTreeMap::new();
    for c in &candidates {
        let hits = points.iter().filter(|p| p.label == PointLabel::Converged(c.id)).count();
        let f = if eligible == 0 { 0.0 } else { hits as f64 / eligible as f64 };
        fractions.insert(c.id.to_string(), f);
    }
    BasinEstimate { domain, schedule: schedule.clone(), sampling, horizon, eps_conv, candidates, points, counts, fractions }
}

/// Integrate every sampled point (horizon doubling from 50 up to `horizon`)
/// and classify it against the feasible boundary equilibria.
pub fn map_basin(
    params: &ModelParams,
    schedule: &DrugSchedule,
    domain: &BasinDomain,
    n: usize,
    horizon: f64,
    eps_conv: f64,
    mode: SamplingMode,
) -> Result<BasinEstimate> {
    check_common(n, horizon, eps_conv)?;
    domain.validate()?;
    schedule.validate()?;
    let candidates = candidates_for(params, schedule)?;
    let opts = settle_options(horizon, eps_conv, 0.0);
    let points: Vec<BasinPoint> = sample_domain(domain, n, mode)
        .into_par_iter()
        .map(|x| {
            let (label, terminal_distance) = settle_point(x, domain.u0, params, schedule, &candidates, &opts);
            BasinPoint { x, label, terminal_distance }
        })
        .collect();
    Ok(aggregate(*domain, schedule, mode, horizon, eps_conv, candidates, points))
}

/// As [`map_basin`], with each sampled point used as the offset `x0` of
/// `template`; the solved state `x(t0)` is then integrated onward.
pub fn map_multipoint_basin(
    params: &ModelParams,
    schedule: &DrugSchedule,
    template: &MultipointSpec,
    domain: &BasinDomain,
    n: usize,
    horizon: f64,
    eps_conv: f64,
    mode: SamplingMode,
) -> Result<BasinEstimate> {
    check_common(n, horizon, eps_conv)?;
    domain.validate()?;
    schedule.validate()?;
    template.validate()?;
    let candidates = candidates_for(params, schedule)?;
    let opts = settle_options(horizon, eps_conv, template.t0);
    let points: Vec<BasinPoint> = sample_domain(domain, n, mode)
        .into_par_iter()
        .map(|x| {
            let spec = MultipointSpec { x0: x, u0: domain.u0, ..template.clone() };
            let solved = solve_picard(&spec, params, schedule, MULTIPOINT_TOL, MULTIPOINT_MAX_ITER)
                .or_else(|e| match e {
                    Error::Infeasible { .. } => Err(e),
                    _ => solve_newton(&spec, params, schedule, MULTIPOINT_TOL, MULTIPOINT_MAX_ITER),
                });
            let (label, terminal_distance) = match solved {
                Ok(sol) => settle_point(sol.y, spec.u0, params, schedule, &candidates, &opts),
                Err(Error::Infeasible { .. }) => (PointLabel::Infeasible, None),
                Err(_) => (PointLabel::Unsolved, None),
            };
            BasinPoint { x, label, terminal_distance }
        })
        .collect();
    Ok(aggregate(*domain, schedule, mode, horizon, eps_conv, candidates, points))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContainmentReport {
    pub equilibrium: EquilibriumId,
    /// Estimate points inside `Ω_C`.
    pub inside: usize,
    pub inside_converged: usize,
    /// Fraction of inside points converging to the certified equilibrium.
    pub soundness: f64,
    /// Estimate points converging to the certified equilibrium.
    pub empirical_basin: usize,
    /// `inside / empirical_basin`.
    pub conservativeness: f64,
}

pub fn containment_report(cert: &LyapunovCertificate, estimate: &BasinEstimate) -> Result<ContainmentReport> {
    let target = PointLabel::Converged(cert.equilibrium.id);
    let inside: Vec<&BasinPoint> = estimate.points.iter().filter(|p| level_set_contains(cert, &p.x)).collect();
    if inside.len() < MIN_COVERAGE {
        return Err(Error::InsufficientCoverage { found: inside.len(), required: MIN_COVERAGE });
    }
    let inside_converged = inside.iter().filter(|p| p.label == target).count();
    let empirical_basin = estimate.points.iter().filter(|p| p.label == target).count();
    Ok(ContainmentReport {
        equilibrium: cert.equilibrium.id,
        inside: inside.len(),
        inside_converged,
        soundness: inside_converged as f64 / inside.len() as f64,
        empirical_basin,
        conservativeness: if empirical_basin == 0 { f64::INFINITY } else { inside.len() as f64 / empirical_basin as f64 },
    })
}

/// Default convergence threshold re-exported for callers building configs.
pub const DEFAULT_EPS: f64 = DEFAULT_EPS_CONV;
