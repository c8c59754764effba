//! Seeded parameter generators shared by the integration suites.
#![allow(dead_code)]

use oncolyap::model::{ModelParams, ResponseCurve};
use rand::Rng;

pub fn uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.random_range(lo..hi)
}

/// Any admissible parameter set.
pub fn admissible(rng: &mut impl Rng) -> ModelParams {
    ModelParams {
        r2: uniform(rng, 0.1, 0.95),
        a12: uniform(rng, 0.0, 1.5),
        a13: uniform(rng, 0.0, 1.5),
        a21: uniform(rng, 0.0, 1.5),
        a31: uniform(rng, 0.0, 2.0),
        r3: uniform(rng, 0.1, 1.5),
        k3: uniform(rng, 0.1, 2.0),
        d3: uniform(rng, 0.05, 1.0),
        d2: uniform(rng, 0.1, 2.0),
        response: ResponseCurve::exponential(
            [uniform(rng, 0.0, 3.0), uniform(rng, 0.0, 3.0), uniform(rng, 0.0, 1.5)],
            [uniform(rng, 0.2, 2.0), uniform(rng, 0.2, 2.0), uniform(rng, 0.2, 2.0)],
        ),
        dimensional: None,
    }
}

/// `a` such that `a (1 - e^{-nu u}) = g`.
fn amplitude_for(g: f64, nu: f64, u: f64) -> f64 {
    g / -(-nu * u).exp_m1()
}

/// Parameters and a dose under which the kill dominates every growth rate:
/// `g1 > 1`, `g2 > r2` and `a31 k3 > r3`, each with margin.
pub fn curative(rng: &mut impl Rng) -> (ModelParams, f64) {
    let mut p = admissible(rng);
    p.d3 = uniform(rng, 0.1, 1.0);
    let dose = uniform(rng, 0.5, 2.0);
    let u = p.steady_drug(dose);
    let nu = [uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0)];
    let g = [uniform(rng, 1.15, 2.5), p.r2 + uniform(rng, 0.15, 1.2), uniform(rng, 0.0, 1.0)];
    p.response = ResponseCurve::exponential(std::array::from_fn(|i| amplitude_for(g[i], nu[i], u)), nu);
    p.a31 = p.r3 / p.k3 * uniform(rng, 1.2, 3.0);
    (p, dose)
}

/// Parameters and a dose making the tumor-only point feasible and stable.
pub fn tumor_dominant(rng: &mut impl Rng) -> (ModelParams, f64) {
    loop {
        let mut p = admissible(rng);
        let dose = uniform(rng, 0.1, 1.0);
        let u = p.steady_drug(dose);
        let nu = [uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0)];
        let g1 = uniform(rng, 0.0, 0.6);
        let gamma = 1.0 - g1;
        // host loses to the tumor: r2 - a21 gamma - g2 < 0
        p.a21 = (p.r2 + uniform(rng, 0.15, 1.0)) / gamma;
        let g2 = uniform(rng, 0.0, 0.5);
        let g3 = uniform(rng, 0.0, 0.5);
        p.response = ResponseCurve::exponential(
            [amplitude_for(g1, nu[0], u), amplitude_for(g2, nu[1], u), amplitude_for(g3, nu[2], u)],
            nu,
        );
        let g = p.kill(u);
        let gamma = 1.0 - g[0];
        let d33 = (p.r3 / (gamma + p.k3) - p.a31) * gamma - p.d3 - g[2];
        if d33 < -0.1 && gamma > 0.2 && p.r2 - p.a21 * gamma - g[1] < -0.1 {
            return (p, dose);
        }
    }
}

/// Parameters and a dose making the tumor-free point feasible and stable.
pub fn tumor_free(rng: &mut impl Rng) -> (ModelParams, f64) {
    loop {
        let mut p = admissible(rng);
        let dose = uniform(rng, 0.1, 1.5);
        let u = p.steady_drug(dose);
        let nu = [uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0), uniform(rng, 0.3, 2.0)];
        let g2 = p.r2 * uniform(rng, 0.0, 0.6);
        let delta = 1.0 - g2 / p.r2;
        let g1 = uniform(rng, 0.2, 1.0);
        // tumor loses to the host: 1 - a12 delta - g1 < 0
        p.a12 = (1.0 - g1 + uniform(rng, 0.15, 1.0)) / delta;
        let g3 = uniform(rng, 0.0, 0.5);
        p.response = ResponseCurve::exponential(
            [amplitude_for(g1, nu[0], u), amplitude_for(g2, nu[1], u), amplitude_for(g3, nu[2], u)],
            nu,
        );
        let g = p.kill(u);
        let delta = 1.0 - g[1] / p.r2;
        if delta > 0.2 && 1.0 - p.a12 * delta - g[0] < -0.1 {
            return (p, dose);
        }
    }
}
