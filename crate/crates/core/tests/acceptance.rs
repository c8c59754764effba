//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! with its measurements and runtime.

use std::io::Write;
use std::path::Path;
use std::process::Command;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use oncolyap::basin::{map_basin, BasinDomain, PointLabel, SamplingMode};
use oncolyap::lyapunov::{
    build_certificate_with, lyapunov_residual, sample_level_set, solve_lyapunov, vdot, CertificateOptions,
    EPS_INNER,
};
use oncolyap::model::{drug_closed_form, jacobian, response_eval, vector_field, DrugSchedule, ModelParams, SystemState};
use oncolyap::multipoint::{contraction_diagnostics, residual, solve_newton, solve_picard, MultipointSpec, Region};
use oncolyap::ode::{self, OdeOptions, Span, Tolerance};
use oncolyap::sim::{integrate, integrate_with_stops, settle, ConvergenceLabel, SettleOptions};
use oncolyap::stability::{boundary_equilibria, classify, EquilibriumId, LocalLabel, DEFAULT_EPS_EIG};
use oncolyap::{LyapunovCertificate, Matrix3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

mod common;
use common::{admissible, curative, tumor_dominant, tumor_free, uniform};

/// Print one line straight to the terminal (bypassing libtest capture) and
/// fail the test when the criterion fails.
fn report(n: u32, name: &str, pass: bool, elapsed: Duration, limit: Option<Duration>, detail: String) {
    let in_time = limit.is_none_or(|l| elapsed <= l);
    let ok = pass && in_time;
    let budget = limit.map_or(String::new(), |l| format!(" (limit {:.0} s)", l.as_secs_f64()));
    let line = format!(
        "[acceptance] criterion {n:>2} {}: {name}: {detail}; {:.2} s{budget}\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "criterion {n} ({name}) failed: {detail}");
    assert!(in_time, "criterion {n} ({name}) exceeded its runtime limit");
}

fn max_abs(m: &Matrix3<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

fn random_schedule(rng: &mut impl Rng, horizon: f64) -> DrugSchedule {
    let k = rng.random_range(1..6);
    let mut cuts: Vec<f64> = (0..2 * k).map(|_| uniform(rng, 0.0, horizon)).collect();
    cuts.sort_by(f64::total_cmp);
    let segments = cuts
        .chunks(2)
        .filter(|c| c[1] > c[0])
        .map(|c| (c[0], c[1], uniform(rng, 0.0, 3.0)))
        .collect();
    DrugSchedule::Piecewise { segments }
}

#[test]
fn criterion_01_equilibrium_correctness() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut worst, mut mismatches, mut checked, mut singular) = (0.0f64, 0usize, 0usize, 0usize);
    for _ in 0..200 {
        let p = admissible(&mut rng);
        for dose in [0.0, 0.5, 2.0] {
            let eqs = boundary_equilibria(&p, dose).unwrap();
            let u = dose / p.d2;
            let g = response_eval(&p.response, u).unwrap();
            let gamma = 1.0 - g[0];
            let delta = 1.0 - g[1] / p.r2;
            for e in &eqs {
                // the field is undefined where x1 + k3 <= 0
                if e.point[0] + p.k3 <= 0.0 {
                    singular += 1;
                    continue;
                }
                let f = vector_field(&SystemState::from_cells(e.point, u), &p, dose).unwrap();
                worst = worst.max(f[..3].iter().fold(0.0f64, |a, v| a.max(v.abs())));
                checked += 1;
            }
            if eqs[0].point != [0.0; 3] || eqs[1].point != [gamma, 0.0, 0.0] || eqs[2].point != [0.0, delta, 0.0] {
                mismatches += 1;
            }
            if eqs[1].feasible != (gamma >= 0.0) || eqs[2].feasible != (delta >= 0.0) {
                mismatches += 1;
            }
        }
    }
    report(
        1,
        "equilibrium correctness",
        worst <= 1e-10 && mismatches == 0,
        start.elapsed(),
        Some(Duration::from_secs(5)),
        format!(
            "{checked} equilibria, max |f| = {worst:.2e}, closed-form mismatches = {mismatches}, \
             skipped {singular} tumor-only points with x1 + k3 <= 0"
        ),
    );
}

#[test]
fn criterion_02_jacobian_fidelity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let p = admissible(&mut rng);
        let x: [f64; 3] = std::array::from_fn(|_| uniform(&mut rng, 0.0, 2.0));
        let u = uniform(&mut rng, 0.0, 4.0);
        let j = jacobian(&SystemState::from_cells(x, u), &p, u).unwrap();
        let mut fd = Matrix3::zeros();
        for c in 0..3 {
            let h = 1e-6 * x[c].abs().max(1.0);
            let (mut xp, mut xm) = (x, x);
            xp[c] += h;
            xm[c] -= h;
            let fp = vector_field(&SystemState::from_cells(xp, u), &p, 0.0).unwrap();
            let fm = vector_field(&SystemState::from_cells(xm, u), &p, 0.0).unwrap();
            for r in 0..3 {
                fd[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        worst = worst.max(max_abs(&(j - fd)) / max_abs(&j).max(1.0));
    }
    report(
        2,
        "Jacobian fidelity",
        worst <= 1e-6,
        start.elapsed(),
        Some(Duration::from_secs(5)),
        format!("100 states, max relative error = {worst:.2e}"),
    );
}

#[test]
fn criterion_03_lyapunov_residual() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let mut mats = Vec::new();
    let mut draws = 0;
    while mats.len() < 200 && draws < 20_000 {
        draws += 1;
        let p = admissible(&mut rng);
        let dose = [0.0, 0.5, 2.0][rng.random_range(0..3)];
        for e in boundary_equilibria(&p, dose).unwrap().into_iter().filter(|e| e.feasible) {
            let r = classify(&e, &p, dose, DEFAULT_EPS_EIG).unwrap();
            if r.label == LocalLabel::LocallyAsymptoticallyStable && mats.len() < 200 {
                mats.push(jacobian(&SystemState::from_cells(e.point, e.drug_level), &p, e.drug_level).unwrap());
            }
        }
    }
    let mut worst = 0.0f64;
    let mut failures = 0;
    for a in &mats {
        match solve_lyapunov(a) {
            Ok(b) => worst = worst.max(lyapunov_residual(a, &b)),
            Err(_) => failures += 1,
        }
    }

    let mut diag_err = 0.0f64;
    for _ in 0..50 {
        let (p, dose) = curative(&mut rng);
        let u = p.steady_drug(dose);
        let g = p.kill(u);
        let a0 = jacobian(&SystemState::from_cells([0.0; 3], u), &p, u).unwrap();
        let b = solve_lyapunov(&a0).unwrap();
        let printed = [1.0 / (2.0 * (g[0] - 1.0)), 1.0 / (2.0 * (g[1] - p.r2)), 1.0 / (2.0 * (g[2] + p.d3))];
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { printed[i] } else { 0.0 };
                diag_err = diag_err.max((b[(i, j)] - want).abs());
            }
        }
    }
    report(
        3,
        "Lyapunov residual",
        mats.len() == 200 && failures == 0 && worst <= 1e-10 && diag_err <= 1e-12,
        start.elapsed(),
        Some(Duration::from_secs(5)),
        format!(
            "{} stable linearizations, max residual = {worst:.2e}, solve failures = {failures}; \
             50 kill-dominant sets, max |B - printed diagonal| = {diag_err:.2e}",
            mats.len()
        ),
    );
}

#[test]
fn criterion_04_global_stability_reproduction() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (mut total, mut converged) = (0usize, 0usize);
    let mut misses = Vec::new();
    for set in 0..20 {
        let (p, dose) = curative(&mut rng);
        let u = p.steady_drug(dose);
        let g = p.kill(u);
        assert!(g[0] > 1.0 && g[1] > p.r2 && p.a31 * p.k3 > p.r3);
        let domain = BasinDomain { lo: [0.0; 3], hi: [2.0; 3], u0: u };
        let est = map_basin(&p, &DrugSchedule::constant(dose), &domain, 1000, 500.0, 1e-6, SamplingMode::Random {
            seed: 4000 + set,
        })
        .unwrap();
        total += est.points.len();
        for pt in &est.points {
            if pt.label == PointLabel::Converged(EquilibriumId::E0) {
                converged += 1;
            } else if misses.len() < 5 {
                misses.push(format!("set {set} x = {:?}: {}", pt.x, pt.label));
            }
        }
    }
    report(
        4,
        "global stability of the trivial point",
        total == 20_000 && converged == total,
        start.elapsed(),
        Some(Duration::from_secs(120)),
        format!("{converged}/{total} initial points converged to E0 {misses:?}"),
    );
}

struct CertCase {
    params: ModelParams,
    dose: f64,
    cert: LyapunovCertificate,
}

/// Certificates for stable trivial, tumor-only and tumor-free points.
fn certificates() -> &'static (Vec<CertCase>, Vec<String>, Duration) {
    static CERTS: OnceLock<(Vec<CertCase>, Vec<String>, Duration)> = OnceLock::new();
    CERTS.get_or_init(|| {
        let start = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        let mut jobs = Vec::new();
        for k in 0..4 {
            let (p, d) = curative(&mut rng);
            jobs.push((p, d, 0usize, k));
        }
        for k in 0..3 {
            let (p, d) = tumor_dominant(&mut rng);
            jobs.push((p, d, 1, 10 + k));
        }
        for k in 0..3 {
            let (p, d) = tumor_free(&mut rng);
            jobs.push((p, d, 2, 20 + k));
        }
        let results: Vec<Result<CertCase, String>> = jobs
            .into_par_iter()
            .map(|(params, dose, which, seed)| {
                let eq = boundary_equilibria(&params, dose).unwrap()[which];
                let opts = CertificateOptions { box_bounds: [2.0; 3], budget: 20_000, seed, ..Default::default() };
                build_certificate_with(&eq, &params, dose, &opts)
                    .map(|cert| CertCase { params, dose, cert })
                    .map_err(|e| format!("{}: {e}", eq.id))
            })
            .collect();
        let mut ok = Vec::new();
        let mut errs = Vec::new();
        for r in results {
            match r {
                Ok(c) => ok.push(c),
                Err(e) => errs.push(e),
            }
        }
        (ok, errs, start.elapsed())
    })
}

#[test]
fn criterion_05_certificate_soundness() {
    let start = Instant::now();
    let (cases, build_errors, build_time) = certificates();
    let mut lines = Vec::new();
    let mut all_sound = !cases.is_empty();
    let mut slowest = Duration::ZERO;
    for (i, c) in cases.iter().enumerate() {
        let t = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + i as u64);
        let pts = sample_level_set(&c.cert, 1000, &mut rng);
        let candidates: Vec<_> = boundary_equilibria(&c.params, c.dose).unwrap().into_iter().filter(|e| e.feasible).collect();
        let u = c.params.steady_drug(c.dose);
        let schedule = DrugSchedule::constant(c.dose);
        let opts = SettleOptions::default();
        let outcomes: Vec<Result<ConvergenceLabel, String>> = pts
            .par_iter()
            .map(|x| {
                settle(&SystemState::from_cells(*x, u), &c.params, &schedule, &candidates, &opts)
                    .map(|v| v.label)
                    .map_err(|e| e.to_string())
            })
            .collect();
        let target = ConvergenceLabel::ConvergedTo(c.cert.equilibrium.id);
        let good = outcomes.iter().filter(|o| o.as_ref().ok() == Some(&target)).count();
        let failures = outcomes.iter().filter(|o| o.is_err()).count();
        let sound = pts.len() >= 1000 && good == pts.len() && failures == 0;
        all_sound &= sound;
        slowest = slowest.max(t.elapsed());
        lines.push(format!(
            "{} r={:.3}: {good}/{} ({failures} integration failures)",
            c.cert.equilibrium.id,
            c.cert.r,
            pts.len()
        ));
    }
    let per_cert_ok = slowest <= Duration::from_secs(120);
    report(
        5,
        "certificate soundness",
        all_sound && per_cert_ok,
        start.elapsed(),
        None,
        format!(
            "{} certificates built in {:.2} s [{}], construction errors {:?}, slowest check {:.2} s (limit 120 s per certificate)",
            cases.len(),
            build_time.as_secs_f64(),
            lines.join("; "),
            build_errors,
            slowest.as_secs_f64()
        ),
    );
}

#[test]
fn criterion_06_vdot_negativity() {
    let (cases, _, _) = certificates();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    let (mut sampled, mut positive, mut worst_vdot) = (0usize, 0usize, f64::NEG_INFINITY);
    let (mut orbits, mut worst_rise) = (0usize, f64::NEG_INFINITY);
    for c in cases {
        let u = c.params.steady_drug(c.dose);
        let xbar = c.cert.equilibrium.point;
        for x in sample_level_set(&c.cert, 10_000, &mut rng) {
            if dist(&x, &xbar) <= EPS_INNER {
                continue;
            }
            sampled += 1;
            let vd = vdot(&x, &c.cert, &c.params, u);
            worst_vdot = worst_vdot.max(vd);
            if vd >= 0.0 {
                positive += 1;
            }
        }
        let schedule = DrugSchedule::constant(c.dose);
        for x in sample_level_set(&c.cert, 50, &mut rng) {
            let traj = integrate(&SystemState::from_cells(x, u), &c.params, &schedule, (0.0, 50.0), Tolerance::uniform(1e-11))
                .unwrap();
            let vs: Vec<f64> = traj.states().map(|s| c.cert.value(&s.cells())).collect();
            for w in vs.windows(2) {
                worst_rise = worst_rise.max(w[1] - w[0]);
            }
            orbits += 1;
        }
    }
    report(
        6,
        "V-dot negativity",
        !cases.is_empty() && positive == 0 && worst_rise <= 1e-8 && orbits == 50 * cases.len(),
        start.elapsed(),
        Some(Duration::from_secs(60)),
        format!(
            "{} certificates, {sampled} points, V-dot >= 0 at {positive} (max {worst_vdot:.2e}); \
             {orbits} orbits, max step increase of V = {worst_rise:.2e}",
            cases.len()
        ),
    );
}

#[test]
fn criterion_07_multipoint_reduction_and_consistency() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let tol = 1e-11;

    let mut reduction_err = 0.0f64;
    for _ in 0..20 {
        let p = admissible(&mut rng);
        let x0: [f64; 3] = std::array::from_fn(|_| uniform(&mut rng, 0.0, 2.0));
        let s = random_schedule(&mut rng, 5.0);
        let sol = solve_picard(&MultipointSpec::cauchy(0.0, 5.0, x0, 0.2), &p, &s, tol, 5).unwrap();
        let direct =
            integrate(&SystemState::from_cells(x0, 0.2), &p, &s, (0.0, 5.0), Tolerance::new(1e-13, 1e-12)).unwrap();
        reduction_err = reduction_err.max(dist(&sol.y, &x0));
        for k in 0..=20 {
            let t = 0.25 * k as f64;
            reduction_err = reduction_err.max(dist(&sol.trajectory.state_at(t).cells(), &direct.state_at(t).cells()));
        }
    }

    let region = Region::new([0.0; 3], [1.5; 3]);
    let (mut instances, mut picard_fail, mut newton_fail) = (0usize, 0usize, 0usize);
    let (mut worst_agree, mut worst_res, mut infeasible) = (0.0f64, 0.0f64, 0usize);
    while instances < 100 {
        let p = admissible(&mut rng);
        let horizon = uniform(&mut rng, 0.1, 0.5);
        let m = rng.random_range(1..4);
        let mut nodes: Vec<f64> = (0..m).map(|_| uniform(&mut rng, 0.05, 1.0) * horizon).collect();
        nodes.sort_by(f64::total_cmp);
        let mut spec = MultipointSpec {
            t0: 0.0,
            horizon,
            alpha: std::array::from_fn(|_| (0..m).map(|_| uniform(&mut rng, -0.1, 0.1)).collect()),
            nodes,
            x0: std::array::from_fn(|_| uniform(&mut rng, 0.1, 1.0)),
            u0: uniform(&mut rng, 0.0, 1.0),
        };
        let s = DrugSchedule::constant(uniform(&mut rng, 0.0, 1.0));
        let mut diag = contraction_diagnostics(&spec, &p, &s, &region, 7).unwrap();
        while diag.indicator >= 1.0 {
            for row in &mut spec.alpha {
                row.iter_mut().for_each(|a| *a *= 0.5);
            }
            diag = contraction_diagnostics(&spec, &p, &s, &region, 7).unwrap();
        }
        instances += 1;
        let pic = solve_picard(&spec, &p, &s, tol, 500);
        let newt = solve_newton(&spec, &p, &s, tol, 50);
        match (&pic, &newt) {
            (Ok(a), Ok(b)) => {
                let agree = (0..3).map(|i| (a.y[i] - b.y[i]).abs()).fold(0.0, f64::max);
                worst_agree = worst_agree.max(agree);
                for y in [&a.y, &b.y] {
                    let r = residual(y, &spec, &p, &s).unwrap();
                    worst_res = worst_res.max(r.iter().fold(0.0f64, |m, v| m.max(v.abs())));
                }
                if !a.feasible(&spec) {
                    infeasible += 1;
                }
            }
            _ => {
                picard_fail += usize::from(pic.is_err());
                newton_fail += usize::from(newt.is_err());
            }
        }
    }
    report(
        7,
        "multipoint reduction and consistency",
        reduction_err <= 1e-9 && picard_fail == 0 && newton_fail == 0 && worst_agree <= 10.0 * tol && worst_res <= 1e-10,
        start.elapsed(),
        Some(Duration::from_secs(120)),
        format!(
            "alpha = 0: max deviation from direct IVP {reduction_err:.2e}; {instances} contractive instances: \
             Picard failures {picard_fail}, Newton failures {newton_fail}, max |y_P - y_N| = {worst_agree:.2e}, \
             max residual {worst_res:.2e}, flagged infeasible {infeasible}"
        ),
    );
}

#[test]
fn criterion_08_local_stability_checks() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let margin = 1e-6;
    let (mut checks, mut wrong) = ([0usize; 3], Vec::new());
    for _ in 0..2000 {
        let p = admissible(&mut rng);
        let dose = uniform(&mut rng, 0.0, 3.0);
        let u = p.steady_drug(dose);
        let g = p.kill(u);
        let eqs = boundary_equilibria(&p, dose).unwrap();
        let label = |i: usize| classify(&eqs[i], &p, dose, DEFAULT_EPS_EIG).unwrap().label;

        // trivial point: stable iff g1 > 1 and g2 > r2
        let (m1, m2) = (g[0] - 1.0, g[1] - p.r2);
        if m1.abs() >= margin && m2.abs() >= margin {
            let stable = label(0) == LocalLabel::LocallyAsymptoticallyStable;
            let predicted = m1 > 0.0 && m2 > 0.0;
            let both_negative = m1 < 0.0 && m2 < 0.0;
            checks[0] += 1;
            if stable != predicted || (both_negative && label(0) != LocalLabel::Unstable) {
                wrong.push(format!("E0 g1-1={m1:.3e} g2-r2={m2:.3e}"));
            }
        }
        // tumor-only point
        let gamma = 1.0 - g[0];
        if eqs[1].feasible && gamma + p.k3 > 0.0 {
            let d = [-gamma, p.r2 - p.a21 * gamma - g[1], (p.r3 / (gamma + p.k3) - p.a31) * gamma - p.d3 - g[2]];
            if d.iter().all(|v| v.abs() >= margin) {
                checks[1] += 1;
                let stable = label(1) == LocalLabel::LocallyAsymptoticallyStable;
                if stable != d.iter().all(|&v| v < 0.0) {
                    wrong.push(format!("E1 d = {d:?}"));
                }
            }
        }
        // tumor-free point
        let delta = 1.0 - g[1] / p.r2;
        if eqs[2].feasible {
            let c = [1.0 - p.a12 * delta - g[0], -p.r2 * delta, -p.d3 - g[2]];
            if c.iter().all(|v| v.abs() >= margin) {
                checks[2] += 1;
                let stable = label(2) == LocalLabel::LocallyAsymptoticallyStable;
                if stable != c.iter().all(|&v| v < 0.0) {
                    wrong.push(format!("E2 c = {c:?}"));
                }
            }
        }
    }
    report(
        8,
        "local stability sign conditions",
        wrong.is_empty() && checks.iter().all(|&n| n >= 100),
        start.elapsed(),
        Some(Duration::from_secs(10)),
        format!("checked E0/E1/E2 = {checks:?}, disagreements = {} {:?}", wrong.len(), &wrong[..wrong.len().min(3)]),
    );
}

#[test]
fn criterion_09_drug_kinetics() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    let tight = OdeOptions { tol: Tolerance::uniform(1e-13), guard: 1e6, initial_step: None };
    let mut closed_err = 0.0f64;
    for _ in 0..100 {
        let s = random_schedule(&mut rng, 30.0);
        let d2 = uniform(&mut rng, 0.1, 2.0);
        let u0 = uniform(&mut rng, 0.0, 3.0);
        let stops = s.breakpoints(0.0, 40.0);
        let sol = ode::integrate(|span: &Span, _t, y: &[f64; 1]| [s.level_at(span.midpoint()) - d2 * y[0]], 0.0, [u0], 40.0, &stops, &tight)
            .unwrap();
        for (t, y) in sol.times.iter().zip(&sol.states) {
            closed_err = closed_err.max((drug_closed_form(*t, 0.0, u0, &s, d2).unwrap() - y[0]).abs());
        }
    }

    // Equivalence "to integrator tolerance": the gap between the forms must be
    // explained by their own global errors, estimated against tol / 100 runs.
    let grid: Vec<f64> = (1..=40).map(f64::from).collect();
    let at = |times: &[f64], t: f64| times.iter().position(|&s| s == t).unwrap();
    let (mut form_err, mut worst_ratio) = (0.0f64, 0.0f64);
    for _ in 0..30 {
        let p = admissible(&mut rng);
        let s = random_schedule(&mut rng, 30.0);
        let x: [f64; 3] = std::array::from_fn(|_| uniform(&mut rng, 0.0, 2.0));
        let full = |tol: f64| {
            let tr = integrate_with_stops(&SystemState::from_cells(x, 0.0), &p, &s, (0.0, 40.0), Tolerance::uniform(tol), &grid)
                .unwrap();
            grid.iter().map(|&t| tr.state(at(tr.times(), t)).cells()).collect::<Vec<_>>()
        };
        let reduced = |tol: f64| {
            let mut stops = s.breakpoints(0.0, 40.0);
            stops.extend(&grid);
            let opts = OdeOptions { tol: Tolerance::uniform(tol), guard: 1e6, initial_step: None };
            let sol = ode::integrate(
                |_span: &Span, t, y: &[f64; 3]| {
                    let u = drug_closed_form(t, 0.0, 0.0, &s, p.d2).unwrap();
                    let f = vector_field(&SystemState::from_cells(*y, u), &p, 0.0).unwrap();
                    [f[0], f[1], f[2]]
                },
                0.0,
                x,
                40.0,
                &stops,
                &opts,
            )
            .unwrap();
            grid.iter().map(|&t| sol.states[at(&sol.times, t)]).collect::<Vec<_>>()
        };
        let (f, fr, r, rr) = (full(1e-11), full(1e-13), reduced(1e-11), reduced(1e-13));
        for i in 0..grid.len() {
            let gap = dist(&f[i], &r[i]);
            let budget = dist(&f[i], &fr[i]) + dist(&r[i], &rr[i]);
            form_err = form_err.max(gap);
            worst_ratio = worst_ratio.max(gap / (budget + 1e-13));
        }
    }
    report(
        9,
        "drug kinetics",
        closed_err <= 1e-8 && worst_ratio <= 2.0,
        start.elapsed(),
        Some(Duration::from_secs(30)),
        format!(
            "closed form vs integration max error {closed_err:.2e} over 100 schedules; \
             four-state vs three-state form max gap {form_err:.2e} at tol 1e-11, \
             worst gap / estimated global error = {worst_ratio:.2} (limit 2) over 40 step times in 30 runs"
        ),
    );
}

fn run_cli(args: &[&str], config: &Path, out: &Path) -> bool {
    Command::new(env!("CARGO_BIN_EXE_oncolyap"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .map(|s| s.success())
        .unwrap_or(false)
}

fn same_files(a: &Path, b: &Path) -> (usize, Vec<String>) {
    let mut names: Vec<_> = std::fs::read_dir(a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    let differing = names
        .iter()
        .filter(|n| std::fs::read(a.join(n)).ok() != std::fs::read(b.join(n)).ok())
        .map(|n| n.to_string_lossy().into_owned())
        .collect();
    (names.len(), differing)
}

#[test]
fn criterion_10_determinism() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let params = serde_json::to_value(ModelParams::illustrative()).unwrap();
    let sim = serde_json::json!({
        "params": params,
        "schedule": {"kind": "piecewise", "segments": [[0, 5, 1.0], [10, 15, 2.0]]},
        "simulate": {"initial": [0.3, 0.5, 0.2, 0], "span": [0, 40]}
    });
    let basin = serde_json::json!({
        "params": params,
        "schedule": {"kind": "constant", "level": 1.0},
        "basin": {"domain": {"lo": [0, 0, 0], "hi": [2, 2, 2], "u0": 0}, "n": 200, "sampling": "random", "seed": 10,
                  "budget": 2000}
    });
    let mut ok = true;
    let mut detail = Vec::new();
    for (name, cfg, flags) in [("simulate", sim, vec!["simulate", "--plot"]), ("basin", basin, vec!["basin", "--plot", "--seed", "77"])] {
        let path = dir.path().join(format!("{name}.json"));
        std::fs::write(&path, cfg.to_string()).unwrap();
        let (a, b) = (dir.path().join(format!("{name}-1")), dir.path().join(format!("{name}-2")));
        let ran = run_cli(&flags, &path, &a) && run_cli(&flags, &path, &b);
        let (count, differing) = if ran { same_files(&a, &b) } else { (0, vec![]) };
        ok &= ran && count > 0 && differing.is_empty();
        detail.push(format!("{name}: {count} files, differing {differing:?}"));
    }
    report(10, "determinism", ok, start.elapsed(), None, detail.join("; "));
}
