//! Time integration of the four-state system under a dosing schedule.

use std::fmt;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{rhs, DrugSchedule, ModelParams, SystemState};
use crate::ode::{self, DenseSolution, OdeFailure, OdeOptions, StepStats, Tolerance};
use crate::stability::{Equilibrium, EquilibriumId};

/// Component magnitude beyond which a trajectory counts as diverged.
pub const OVERFLOW_GUARD: f64 = 1e6;
pub const DEFAULT_EPS_CONV: f64 = 1e-6;
/// Trailing window as a fraction of the integrated horizon.
pub const DEFAULT_WINDOW_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dense: DenseSolution<4>,
    pub tol: Tolerance,
    /// Set on partial trajectories returned with a divergence error.
    pub diverged: bool,
}

impl Trajectory {
    pub fn times(&self) -> &[f64] {
        &self.dense.times
    }

    pub fn len(&self) -> usize {
        self.dense.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dense.times.is_empty()
    }

    pub fn state(&self, i: usize) -> SystemState {
        SystemState::from_array(self.dense.states[i])
    }

    pub fn states(&self) -> impl Iterator<Item = SystemState> + '_ {
        self.dense.states.iter().map(|&y| SystemState::from_array(y))
    }

    pub fn start_time(&self) -> f64 {
        self.dense.times[0]
    }

    pub fn end_time(&self) -> f64 {
        self.dense.last_time()
    }

    pub fn final_state(&self) -> SystemState {
        SystemState::from_array(self.dense.last_state())
    }

    pub fn stats(&self) -> StepStats {
        self.dense.stats
    }

    /// Dense output by cubic Hermite interpolation between accepted steps.
    pub fn state_at(&self, t: f64) -> SystemState {
        SystemState::from_array(self.dense.interpolate(t))
    }

    /// Write `t,x1,x2,x3,u` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,x1,x2,x3,u")?;
        for (t, y) in self.dense.times.iter().zip(&self.dense.states) {
            writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}", t, y[0], y[1], y[2], y[3])?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("write to Vec");
        String::from_utf8(buf).expect("ascii")
    }
}

fn check_inputs(initial: &SystemState, t0: f64, tf: f64, tol: &Tolerance) -> Result<()> {
    if !initial.is_finite() {
        return Err(Error::Domain("initial state must be finite".into()));
    }
    if !(tf > t0) || !t0.is_finite() || !tf.is_finite() {
        return Err(Error::Domain(format!("need t0 < tf, got [{t0}, {tf}]")));
    }
    if !tol.is_valid() {
        return Err(Error::Domain("tolerances must be positive".into()));
    }
    Ok(())
}

fn run(
    initial: [f64; 4],
    params: &ModelParams,
    schedule: &DrugSchedule,
    t0: f64,
    tf: f64,
    extra_stops: &[f64],
    tol: Tolerance,
    warm_step: Option<f64>,
) -> Result<DenseSolution<4>> {
    let mut stops = schedule.breakpoints(t0, tf);
    stops.extend_from_slice(extra_stops);
    let opts = OdeOptions { tol, guard: OVERFLOW_GUARD, initial_step: warm_step };
    // v is constant on every span between breakpoints
    let field = |span: &ode::Span, _t: f64, y: &[f64; 4]| rhs(y, params, schedule.level_at(span.midpoint()));
    ode::integrate(field, t0, initial, tf, &stops, &opts).map_err(|e| match e.kind {
        OdeFailure::Underflow { t, h } => Error::StepSizeUnderflow { t, h },
        OdeFailure::Diverged { t } => Error::Diverged {
            t,
            partial: Box::new(Trajectory { dense: e.partial, tol, diverged: true }),
        },
    })
}

/// Integrate from `initial` over `t_span` with adaptive Dormand–Prince 5(4).
pub fn integrate(
    initial: &SystemState,
    params: &ModelParams,
    schedule: &DrugSchedule,
    t_span: (f64, f64),
    tol: Tolerance,
) -> Result<Trajectory> {
    integrate_with_stops(initial, params, schedule, t_span, tol, &[])
}

/// As [`integrate`], additionally landing exactly on every time in `stops`.
pub fn integrate_with_stops(
    initial: &SystemState,
    params: &ModelParams,
    schedule: &DrugSchedule,
    t_span: (f64, f64),
    tol: Tolerance,
    stops: &[f64],
) -> Result<Trajectory> {
    let (t0, tf) = t_span;
    check_inputs(initial, t0, tf, &tol)?;
    schedule.validate()?;
    let dense = run(initial.to_array(), params, schedule, t0, tf, stops, tol, None)?;
    Ok(Trajectory { dense, tol, diverged: false })
}

/// Continue `traj` to `tf`.
pub fn extend(traj: &mut Trajectory, params: &ModelParams, schedule: &DrugSchedule, tf: f64) -> Result<()> {
    let t0 = traj.end_time();
    if !(tf > t0) {
        return Err(Error::Domain(format!("extension end {tf} must exceed {t0}")));
    }
    let warm = (traj.dense.last_step > 0.0).then_some(traj.dense.last_step);
    match run(traj.dense.last_state(), params, schedule, t0, tf, &[], traj.tol, warm) {
        Ok(more) => {
            traj.dense.append(more);
            Ok(())
        }
        Err(Error::Diverged { t, partial }) => {
            let mut whole = traj.clone();
            whole.dense.append(partial.dense);
            whole.diverged = true;
            Err(Error::Diverged { t, partial: Box::new(whole) })
        }
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "label", content = "equilibrium", rename_all = "kebab-case")]
pub enum ConvergenceLabel {
    ConvergedTo(EquilibriumId),
    NoConvergence,
    Diverged,
}

impl fmt::Display for ConvergenceLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConvergenceLabel::ConvergedTo(id) => write!(f, "{id}"),
            ConvergenceLabel::NoConvergence => f.write_str("no-convergence"),
            ConvergenceLabel::Diverged => f.write_str("diverged"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceVerdict {
    pub label: ConvergenceLabel,
    /// Distance from the final state to the nearest candidate.
    pub terminal_distance: f64,
    /// End of the classified time span.
    pub time: f64,
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt()
}

/// Label a trajectory by the candidate it stays within `eps_conv` of over
/// the trailing `window` of its time span.
pub fn classify_convergence(
    traj: &Trajectory,
    candidates: &[Equilibrium],
    eps_conv: f64,
    window: f64,
) -> Result<ConvergenceVerdict> {
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate equilibria".into()));
    }
    if traj.is_empty() {
        return Err(Error::Domain("empty trajectory".into()));
    }
    if !(eps_conv > 0.0) {
        return Err(Error::Domain("eps_conv must be positive".into()));
    }
    let end = traj.end_time();
    let last = traj.final_state().cells();
    let terminal_distance = candidates
        .iter()
        .map(|c| distance(&last, &c.point))
        .fold(f64::INFINITY, f64::min);

    let blown = traj.diverged
        || traj.dense.states.iter().any(|y| y.iter().any(|v| !v.is_finite() || v.abs() > OVERFLOW_GUARD));
    if blown {
        return Ok(ConvergenceVerdict { label: ConvergenceLabel::Diverged, terminal_distance, time: end });
    }

    let from = end - window.max(0.0);
    let start = traj.dense.times.partition_point(|&t| t < from);
    let tail = &traj.dense.states[start.min(traj.len() - 1)..];
    let hit = candidates.iter().find(|c| {
        tail.iter().all(|y| distance(&[y[0], y[1], y[2]], &c.point) <= eps_conv)
    });
    let label = match hit {
        Some(c) => ConvergenceLabel::ConvergedTo(c.id),
        None => ConvergenceLabel::NoConvergence,
    };
    Ok(ConvergenceVerdict { label, terminal_distance, time: end })
}

/// Settings for integrating until a trajectory settles on an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SettleOptions {
    pub t0: f64,
    /// First horizon tried; doubled until `max_horizon`.
    pub initial_horizon: f64,
    pub max_horizon: f64,
    pub eps_conv: f64,
    pub window_fraction: f64,
    pub tol: Tolerance,
}

impl Default for SettleOptions {
    fn default() -> Self {
        Self {
            t0: 0.0,
            initial_horizon: 50.0,
            max_horizon: 500.0,
            eps_conv: DEFAULT_EPS_CONV,
            window_fraction: DEFAULT_WINDOW_FRACTION,
            tol: Tolerance::new(1e-10, 1e-8),
        }
    }
}

/// Integrate with a growing horizon until the verdict is convergence or
/// `max_horizon` is reached.
pub fn settle(
    initial: &SystemState,
    params: &ModelParams,
    schedule: &DrugSchedule,
    candidates: &[Equilibrium],
    opts: &SettleOptions,
) -> Result<ConvergenceVerdict> {
    if candidates.is_empty() {
        return Err(Error::Domain("no candidate equilibria".into()));
    }
    let mut horizon = opts.initial_horizon.min(opts.max_horizon);
    let mut traj = match integrate(initial, params, schedule, (opts.t0, opts.t0 + horizon), opts.tol) {
        Ok(t) => t,
        Err(Error::Diverged { partial, .. }) => {
            return classify_convergence(&partial, candidates, opts.eps_conv, 0.0);
        }
        Err(e) => return Err(e),
    };
    loop {
        let window = opts.window_fraction * horizon;
        let verdict = classify_convergence(&traj, candidates, opts.eps_conv, window)?;
        if matches!(verdict.label, ConvergenceLabel::ConvergedTo(_)) || horizon >= opts.max_horizon {
            return Ok(verdict);
        }
        horizon = (2.0 * horizon).min(opts.max_horizon);
        match extend(&mut traj, params, schedule, opts.t0 + horizon) {
            Ok(()) => {}
            Err(Error::Diverged { partial, .. }) => {
                return classify_convergence(&partial, candidates, opts.eps_conv, 0.0);
            }
            Err(e) => return Err(e),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ResponseCurve;
    use crate::stability::boundary_equilibria;

    fn params() -> ModelParams {
        ModelParams {
            r2: 0.6,
            a12: 0.5,
            a13: 1.0,
            a21: 0.4,
            a31: 0.8,
            r3: 0.5,
            k3: 1.0,
            d3: 0.3,
            d2: 0.5,
            response: ResponseCurve::exponential([1.8, 1.2, 0.3], [1.0, 0.8, 0.5]),
            dimensional: None,
        }
    }

    #[test]
    fn origin_is_fixed() {
        let traj = integrate(&SystemState::default(), &params(), &DrugSchedule::Zero, (0.0, 20.0), Tolerance::default())
            .unwrap();
        assert!(traj.states().all(|s| s == SystemState::default()));
        assert_eq!(traj.start_time(), 0.0);
        assert_eq!(traj.end_time(), 20.0);
    }

    #[test]
    fn e1_without_drug_is_fixed() {
        let s = SystemState::new(1.0, 0.0, 0.0, 0.0);
        let traj = integrate(&s, &params(), &DrugSchedule::Zero, (0.0, 20.0), Tolerance::default()).unwrap();
        assert!(traj.states().all(|x| x == s));
    }

    #[test]
    fn times_strictly_increase_and_breakpoints_are_hit() {
        let sched = DrugSchedule::Piecewise { segments: vec![(1.0, 2.5, 3.0), (4.0, 4.75, 1.0)] };
        let traj = integrate(
            &SystemState::new(0.3, 0.6, 0.2, 0.0),
            &params(),
            &sched,
            (0.0, 10.0),
            Tolerance::uniform(1e-9),
        )
        .unwrap();
        assert!(traj.times().windows(2).all(|w| w[0] < w[1]));
        for b in [1.0, 2.5, 4.0, 4.75] {
            assert!(traj.times().contains(&b));
        }
    }

    #[test]
    fn tolerance_refinement_converges() {
        let s = SystemState::new(0.35, 0.5, 0.4, 0.2);
        let sched = DrugSchedule::constant(0.4);
        let coarse = integrate(&s, &params(), &sched, (0.0, 30.0), Tolerance::uniform(1e-6)).unwrap();
        let fine = integrate(&s, &params(), &sched, (0.0, 30.0), Tolerance::uniform(1e-10)).unwrap();
        let (a, b) = (coarse.final_state().to_array(), fine.final_state().to_array());
        let diff = a.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
        assert!(diff <= 1e-5, "diff {diff:e}");
    }

    #[test]
    fn dense_output_matches_stops() {
        let s = SystemState::new(0.35, 0.5, 0.4, 0.2);
        let p = params();
        let sched = DrugSchedule::constant(0.4);
        let with = integrate_with_stops(&s, &p, &sched, (0.0, 5.0), Tolerance::uniform(1e-12), &[1.234]).unwrap();
        let without = integrate(&s, &p, &sched, (0.0, 5.0), Tolerance::uniform(1e-12)).unwrap();
        let a = with.state_at(1.234).to_array();
        let b = without.state_at(1.234).to_array();
        for i in 0..4 {
            assert!((a[i] - b[i]).abs() < 1e-9);
        }
    }

    #[test]
    fn divergence_returns_partial_trajectory() {
        // negative tumor density below -k3 makes the immune term blow up
        let err = integrate(
            &SystemState::new(-3.0, 0.0, 0.5, 0.0),
            &params(),
            &DrugSchedule::Zero,
            (0.0, 10.0),
            Tolerance::default(),
        )
        .unwrap_err();
        match err {
            Error::Diverged { partial, .. } => assert!(partial.diverged),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn csv_header_and_precision() {
        let traj = integrate(&SystemState::default(), &params(), &DrugSchedule::Zero, (0.0, 1.0), Tolerance::default())
            .unwrap();
        let csv = traj.to_csv_string();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("t,x1,x2,x3,u"));
        let row = lines.next().unwrap();
        assert_eq!(row, "0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0,0.0000000000000000e0");
    }

    #[test]
    fn classification_semantics() {
        let p = params();
        let eqs = boundary_equilibria(&p, 0.0).unwrap();
        let at_e1 = integrate(&SystemState::from_cells(eqs[1].point, 0.0), &p, &DrugSchedule::Zero, (0.0, 10.0), Tolerance::default())
            .unwrap();
        let v = classify_convergence(&at_e1, &eqs, 1e-6, 1.0).unwrap();
        assert_eq!(v.label, ConvergenceLabel::ConvergedTo(EquilibriumId::E1));
        assert!(classify_convergence(&at_e1, &[], 1e-6, 1.0).is_err());

        // far from every candidate
        let far = [Equilibrium::new(EquilibriumId::E0, [1.0 + 10.0 * 1e-6, 0.0, 0.0], 0.0, 0.0)];
        let v = classify_convergence(&at_e1, &far, 1e-6, 1.0).unwrap();
        assert_eq!(v.label, ConvergenceLabel::NoConvergence);
    }

    #[test]
    fn settle_under_strong_dose_reaches_origin() {
        let p = params();
        let dose = 2.0 * p.d2 * 3.0; // u = 6, g1 ~ 1.8 > 1, g2 ~ 1.19 > r2
        let u = p.steady_drug(dose);
        let eqs: Vec<_> = boundary_equilibria(&p, dose).unwrap().into_iter().filter(|e| e.feasible).collect();
        let v = settle(&SystemState::new(1.5, 1.2, 0.7, u), &p, &DrugSchedule::constant(dose), &eqs, &SettleOptions::default())
            .unwrap();
        assert_eq!(v.label, ConvergenceLabel::ConvergedTo(EquilibriumId::E0));
    }
}
