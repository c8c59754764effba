//! Nonlocal initial condition `x(t0) = x0 + Σ_k α_k ∘ x(t_k)` solved by
//! Picard iteration or Newton shooting.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_jacobian, cell_rates, DrugSchedule, ModelParams, SystemState};
use crate::ode::Tolerance;
use crate::sim::{integrate_with_stops, Trajectory};

/// Integrator tolerance for the flow inside the solvers.
pub const FLOW_TOL: Tolerance = Tolerance { abs: 1e-13, rel: 1e-12 };
pub const DEFAULT_GRID: usize = 9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MultipointSpec {
    pub t0: f64,
    #[serde(rename = "T")]
    pub horizon: f64,
    pub nodes: Vec<f64>,
    /// `alpha[j][k]` weights component `j` at node `k`.
    pub alpha: [Vec<f64>; 3],
    pub x0: [f64; 3],
    pub u0: f64,
}

impl MultipointSpec {
    /// The plain Cauchy problem from `x0`.
    pub fn cauchy(t0: f64, horizon: f64, x0: [f64; 3], u0: f64) -> Self {
        Self { t0, horizon, nodes: vec![], alpha: [vec![], vec![], vec![]], x0, u0 }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Domain(m));
        if !self.t0.is_finite() || !self.horizon.is_finite() || !(self.horizon > self.t0) {
            return bad(format!("need t0 < T, got t0 = {}, T = {}", self.t0, self.horizon));
        }
        for &t in &self.nodes {
            if !(t > self.t0 && t <= self.horizon) {
                return bad(format!("node {t} outside (t0, T]"));
            }
        }
        for row in &self.alpha {
            if row.len() != self.nodes.len() {
                return bad(format!("alpha rows need {} entries, got {}", self.nodes.len(), row.len()));
            }
            if row.iter().any(|a| !a.is_finite()) {
                return bad("alpha must be finite".into());
            }
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return bad("offsets must be finite".into());
        }
        if !(self.u0 >= 0.0 && self.u0.is_finite()) {
            return bad(format!("u0 must be >= 0, got {}", self.u0));
        }
        Ok(())
    }

    fn last_node(&self) -> Option<f64> {
        self.nodes.iter().copied().reduce(f64::max)
    }

    fn combine(&self, at_nodes: &[[f64; 3]]) -> [f64; 3] {
        std::array::from_fn(|j| self.x0[j] + self.alpha[j].iter().zip(at_nodes).map(|(a, x)| a * x[j]).sum::<f64>())
    }
}

/// `x(t_k)` for the trajectory starting at `(y, u0)`.
fn flow_at_nodes(y: &[f64; 3], spec: &MultipointSpec, params: &ModelParams, schedule: &DrugSchedule) -> Result<Vec<[f64; 3]>> {
    let Some(last) = spec.last_node() else {
        return Ok(vec![]);
    };
    let init = SystemState::from_cells(*y, spec.u0);
    let traj = integrate_with_stops(&init, params, schedule, (spec.t0, last), FLOW_TOL, &spec.nodes)?;
    Ok(spec.nodes.iter().map(|&t| traj.state_at(t).cells()).collect())
}

fn picard_map(y: &[f64; 3], spec: &MultipointSpec, params: &ModelParams, schedule: &DrugSchedule) -> Result<[f64; 3]> {
    Ok(spec.combine(&flow_at_nodes(y, spec, params, schedule)?))
}

fn sub(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn norm(a: &[f64; 3]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// `R(y) = y - x0 - Σ_k α_k ∘ x(t_k; y)`.
pub fn residual(y: &[f64; 3], spec: &MultipointSpec, params: &ModelParams, schedule: &DrugSchedule) -> Result<[f64; 3]> {
    spec.validate()?;
    if y.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Domain(format!("residual needs y >= 0, got {y:?}")));
    }
    Ok(sub(y, &picard_map(y, spec, params, schedule)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Picard,
    Newton,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultipointSolution {
    /// Solved initial cell state `x(t0)`.
    pub y: [f64; 3],
    pub residual: f64,
    pub iterations: usize,
    pub method: Method,
    /// Successive-step ratios of the Picard iteration.
    pub ratios: Vec<f64>,
    pub trajectory: Trajectory,
}

impl MultipointSolution {
    /// `x_j0 + Σ_k α_jk x_j(t_k)` at the solution, which equals `y` up to the residual.
    pub fn condition_values(&self, spec: &MultipointSpec) -> [f64; 3] {
        let at: Vec<[f64; 3]> = spec.nodes.iter().map(|&t| self.trajectory.state_at(t).cells()).collect();
        spec.combine(&at)
    }

    pub fn feasible(&self, spec: &MultipointSpec) -> bool {
        self.condition_values(spec).iter().all(|&v| v >= 0.0)
    }
}

fn finish(
    y: [f64; 3],
    residual: f64,
    iterations: usize,
    method: Method,
    ratios: Vec<f64>,
    spec: &MultipointSpec,
    params: &ModelParams,
    schedule: &DrugSchedule,
) -> Result<MultipointSolution> {
    if let Some(component) = (0..3).find(|&j| !(y[j] >= 0.0)) {
        return Err(Error::Infeasible { component, value: y[component] });
    }
    let init = SystemState::from_cells(y, spec.u0);
    let trajectory = integrate_with_stops(&init, params, schedule, (spec.t0, spec.horizon), FLOW_TOL, &spec.nodes)?;
    Ok(MultipointSolution { y, residual, iterations, method, ratios, trajectory })
}

/// Iterate `y ← x0 + Σ_k α_k ∘ x(t_k; y)` from `y = x0` until successive
/// iterates differ by at most `tol`; the returned residual is that step.
pub fn solve_picard(
    spec: &MultipointSpec,
    params: &ModelParams,
    schedule: &DrugSchedule,
    tol: f64,
    max_iter: usize,
) -> Result<MultipointSolution> {
    spec.validate()?;
    schedule.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let mut y = spec.x0;
    let mut ratios = Vec::new();
    let mut prev_step = f64::NAN;
    for it in 1..=max_iter {
        let next = picard_map(&y, spec, params, schedule)?;
        let step = norm(&sub(&next, &y));
        if prev_step > 0.0 {
            ratios.push(step / prev_step);
        }
        if step <= tol {
            return finish(y, step, it, Method::Picard, ratios, spec, params, schedule);
        }
        if !next.iter().all(|v| v.is_finite()) {
            break;
        }
        prev_step = step;
        y = next;
    }
    Err(Error::NonContraction { iterations: max_iter, ratio: ratios.last().copied().unwrap_or(f64::NAN) })
}

/// Damped Newton on `R(y)` with `∂R/∂y = I - Σ_k diag(α_k) S(t_k)` and
/// sensitivities `S` from central differences of the flow.
pub fn solve_newton(
    spec: &MultipointSpec,
    params: &ModelParams,
    schedule: &DrugSchedule,
    tol: f64,
    max_iter: usize,
) -> Result<MultipointSolution> {
    spec.validate()?;
    schedule.validate()?;
    if !(tol > 0.0) {
        return Err(Error::Domain("tolerance must be positive".into()));
    }
    let res = |y: &[f64; 3]| -> Result<[f64; 3]> { Ok(sub(y, &picard_map(y, spec, params, schedule)?)) };
    let mut y = spec.x0;
    let mut r = res(&y)?;
    let mut rn = norm(&r);
    for it in 1..=max_iter {
        if rn <= tol {
            return finish(y, rn, it, Method::Newton, vec![], spec, params, schedule);
        }
        let mut jac = Matrix3::<f64>::identity();
        for i in 0..3 {
            let h = 1e-6 * y[i].abs().max(1.0);
            let (mut yp, mut ym) = (y, y);
            yp[i] += h;
            ym[i] -= h;
            let fp = flow_at_nodes(&yp, spec, params, schedule)?;
            let fm = flow_at_nodes(&ym, spec, params, schedule)?;
            for (k, (p, m)) in fp.iter().zip(&fm).enumerate() {
                for j in 0..3 {
                    jac[(j, i)] -= spec.alpha[j][k] * (p[j] - m[j]) / (2.0 * h);
                }
            }
        }
        let delta = jac.lu().solve(&-Vector3::from(r)).ok_or(Error::SingularNewton)?;
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1.0 / 1024.0 {
            let trial = [y[0] + lambda * delta[0], y[1] + lambda * delta[1], y[2] + lambda * delta[2]];
            if let Ok(rt) = res(&trial) {
                let tn = norm(&rt);
                if tn < rn {
                    y = trial;
                    r = rt;
                    rn = tn;
                    accepted = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !accepted {
            if rn <= tol {
                continue;
            }
            return Err(Error::NoProgress { iterations: it, residual: rn });
        }
    }
    if rn <= tol {
        return finish(y, rn, max_iter, Method::Newton, vec![], spec, params, schedule);
    }
    Err(Error::NoProgress { iterations: max_iter, residual: rn })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub lo: [f64; 3],
    pub hi: [f64; 3],
}

impl Region {
    pub fn new(lo: [f64; 3], hi: [f64; 3]) -> Self {
        Self { lo, hi }
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| self.lo[i].is_finite() && self.hi[i].is_finite() && self.lo[i] <= self.hi[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionReport {
    /// Supremum of `||∂f/∂x||_inf` over the sample grid.
    pub lipschitz: f64,
    /// Supremum of `||f||_inf` over the sample grid.
    pub sup_field: f64,
    /// Smallest half-width of the region.
    pub radius: f64,
    /// `radius / sup_field`; `None` when the field vanishes on the region.
    pub horizon_bound: Option<f64>,
    /// `max_j Σ_k |α_jk| · exp(L (max t_k - t0))`.
    pub indicator: f64,
    pub contraction: bool,
    /// Range of drug amounts reachable on `[t0, T]`.
    pub drug_range: [f64; 2],
    pub grid: usize,
}

fn drug_range(spec: &MultipointSpec, params: &ModelParams, schedule: &DrugSchedule) -> [f64; 2] {
    let (vmin, vmax) = match schedule {
        DrugSchedule::Zero => (0.0, 0.0),
        DrugSchedule::Constant { level } => (*level, *level),
        DrugSchedule::Piecewise { segments } => {
            let hi = segments.iter().map(|s| s.2).fold(0.0, f64::max);
            (0.0, hi)
        }
    };
    [spec.u0.min(vmin / params.d2), spec.u0.max(vmax / params.d2)]
}

fn linspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let n = if hi > lo { n.max(2) } else { 1 };
    (0..n).map(move |i| if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
}

/// Lipschitz and bound estimates on `region × drug range` from a uniform
/// grid with `grid` points per axis.
pub fn contraction_diagnostics(
    spec: &MultipointSpec,
    params: &ModelParams,
    schedule: &DrugSchedule,
    region: &Region,
    grid: usize,
) -> Result<ContractionReport> {
    spec.validate()?;
    if !region.is_valid() {
        return Err(Error::Domain("region needs finite lo <= hi".into()));
    }
    if grid == 0 {
        return Err(Error::Domain("grid needs at least one point per axis".into()));
    }
    let urange = drug_range(spec, params, schedule);
    let (mut lip, mut sup) = (0.0f64, 0.0f64);
    for u in linspace(urange[0], urange[1], grid) {
        let g = params.kill(u);
        for a in linspace(region.lo[0], region.hi[0], grid) {
            for b in linspace(region.lo[1], region.hi[1], grid) {
                for c in linspace(region.lo[2], region.hi[2], grid) {
                    let x = [a, b, c];
                    let j = cell_jacobian(&x, &g, params);
                    let row = (0..3).map(|i| j.row(i).iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
                    lip = lip.max(row);
                    sup = sup.max(norm(&cell_rates(&x, &g, params)));
                }
            }
        }
    }
    let radius = (0..3).map(|i| 0.5 * (region.hi[i] - region.lo[i])).fold(f64::INFINITY, f64::min);
    let span = spec.last_node().map_or(0.0, |t| t - spec.t0);
    let growth = (lip * span).exp();
    let indicator = spec
        .alpha
        .iter()
        .map(|row| row.iter().map(|a| a.abs()).sum::<f64>() * growth)
        .fold(0.0, f64::max);
    Ok(ContractionReport {
        lipschitz: lip,
        sup_field: sup,
        radius,
        horizon_bound: (sup > 0.0).then(|| radius / sup),
        indicator,
        contraction: indicator < 1.0,
        drug_range: urange,
        grid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::integrate;

    fn spec(alpha: f64) -> MultipointSpec {
        MultipointSpec {
            t0: 0.0,
            horizon: 2.0,
            nodes: vec![0.5, 1.0],
            alpha: [vec![alpha, alpha], vec![alpha, 0.0], vec![0.0, alpha]],
            x0: [0.3, 0.4, 0.2],
            u0: 0.1,
        }
    }

    #[test]
    fn zero_alpha_is_cauchy() {
        let p = ModelParams::illustrative();
        let s = DrugSchedule::constant(0.5);
        let sp = spec(0.0);
        let r = residual(&sp.x0, &sp, &p, &s).unwrap();
        assert_eq!(r, [0.0; 3]);
        let pic = solve_picard(&sp, &p, &s, 1e-12, 50).unwrap();
        assert_eq!((pic.y, pic.iterations), (sp.x0, 1));
        let newt = solve_newton(&sp, &p, &s, 1e-12, 50).unwrap();
        assert_eq!((newt.y, newt.iterations), (sp.x0, 1));
        let direct = integrate(&SystemState::from_cells(sp.x0, sp.u0), &p, &s, (0.0, 2.0), FLOW_TOL).unwrap();
        let a = pic.trajectory.final_state().to_array();
        let b = direct.final_state().to_array();
        assert!(a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-10));
    }

    #[test]
    fn small_alpha_picard_and_newton_agree() {
        let p = ModelParams::illustrative();
        let s = DrugSchedule::constant(0.5);
        let sp = spec(0.05);
        let tol = 1e-11;
        let pic = solve_picard(&sp, &p, &s, tol, 200).unwrap();
        let newt = solve_newton(&sp, &p, &s, tol, 50).unwrap();
        assert!(pic.ratios.iter().all(|&q| q < 1.0));
        assert!(norm(&sub(&pic.y, &newt.y)) <= 10.0 * tol);
        assert!(norm(&residual(&pic.y, &sp, &p, &s).unwrap()) <= 1e-10);
        assert!(pic.feasible(&sp));
    }

    #[test]
    fn negative_offsets_are_infeasible() {
        let p = ModelParams::illustrative();
        let s = DrugSchedule::Zero;
        let mut sp = spec(0.05);
        sp.x0 = [0.3, 0.4, -0.05];
        assert!(matches!(solve_picard(&sp, &p, &s, 1e-10, 100), Err(Error::Infeasible { component: 2, .. })));
        assert!(matches!(solve_newton(&sp, &p, &s, 1e-10, 100), Err(Error::Infeasible { component: 2, .. })));
    }

    #[test]
    fn exhausted_budget_reports_ratio() {
        let p = ModelParams::illustrative();
        let s = DrugSchedule::Zero;
        let sp = spec(0.5);
        match solve_picard(&sp, &p, &s, 1e-14, 3) {
            Err(Error::NonContraction { iterations: 3, ratio }) => assert!(ratio.is_finite()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn spec_validation() {
        let mut sp = spec(0.1);
        sp.nodes[0] = 0.0;
        assert!(sp.validate().is_err());
        let mut sp = spec(0.1);
        sp.alpha[1].pop();
        assert!(sp.validate().is_err());
    }

    #[test]
    fn spec_json_shape() {
        let text = r#"{"t0":0,"T":3,"nodes":[1,2],"alpha":[[0.1,0],[0,0.1],[0,0]],"x0":[0.2,0.3,0.1],"u0":0}"#;
        let sp: MultipointSpec = serde_json::from_str(text).unwrap();
        assert_eq!(sp.horizon, 3.0);
        sp.validate().unwrap();
        let back = serde_json::to_value(&sp).unwrap();
        assert!(back.get("T").is_some());
    }

    #[test]
    fn diagnostics_zero_cases() {
        let p = ModelParams::illustrative();
        let sp = spec(0.0);
        let region = Region::new([0.0; 3], [1.0; 3]);
        let rep = contraction_diagnostics(&sp, &p, &DrugSchedule::Zero, &region, DEFAULT_GRID).unwrap();
        assert_eq!(rep.indicator, 0.0);
        assert!(rep.contraction);

        let mut sp = MultipointSpec::cauchy(0.0, 1.0, [0.0; 3], 0.0);
        sp.u0 = 0.0;
        let origin = Region::new([0.0; 3], [0.0; 3]);
        let rep = contraction_diagnostics(&sp, &p, &DrugSchedule::Zero, &origin, DEFAULT_GRID).unwrap();
        assert_eq!(rep.sup_field, 0.0);
        assert_eq!(rep.horizon_bound, None);
    }

    #[test]
    fn lipschitz_grid_refinement() {
        let p = ModelParams::illustrative();
        let sp = spec(0.05);
        let region = Region::new([0.0; 3], [1.0; 3]);
        let s = DrugSchedule::constant(0.5);
        let coarse = contraction_diagnostics(&sp, &p, &s, &region, DEFAULT_GRID).unwrap();
        let fine = contraction_diagnostics(&sp, &p, &s, &region, 33).unwrap();
        assert!((coarse.lipschitz - fine.lipschitz).abs() <= 0.2 * fine.lipschitz);
        assert!(coarse.horizon_bound.unwrap() > 0.0);
    }
}
