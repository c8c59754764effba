//! Quadratic Lyapunov certificates `V(x) = (x - x̄)ᵀ B (x - x̄)` with
//! `BA + AᵀB = -I`, a sampling-verified radius of V̇-negativity and the
//! certified sublevel set `Ω_C = {V ≤ C}`.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, SMatrix, SVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{cell_jacobian, cell_rates, ModelParams};
use crate::stability::{eigenvalues_sorted, to_rows, Equilibrium, EquilibriumId, PrintedQuantities};

pub const DEFAULT_BOX: [f64; 3] = [2.0, 2.0, 2.0];
pub const DEFAULT_BUDGET: usize = 20_000;
pub const EPS_INNER: f64 = 1e-4;
const LEVEL_SAFETY: f64 = 0.99;
const RESONANCE_TOL: f64 = 1e-12;

const PAIRS: [(usize, usize); 6] = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)];

fn symmetric_basis(p: usize, q: usize) -> Matrix3<f64> {
    let mut e = Matrix3::zeros();
    e[(p, q)] = 1.0;
    e[(q, p)] = 1.0;
    e
}

fn lyapunov_operator(a: &Matrix3<f64>) -> SMatrix<f64, 6, 6> {
    let mut m = SMatrix::<f64, 6, 6>::zeros();
    for (col, &(p, q)) in PAIRS.iter().enumerate() {
        let e = symmetric_basis(p, q);
        let image = e * a + a.transpose() * e;
        for (row, &(i, j)) in PAIRS.iter().enumerate() {
            m[(row, col)] = image[(i, j)];
        }
    }
    m
}

fn unpack(v: &SVector<f64, 6>) -> Matrix3<f64> {
    let mut b = Matrix3::zeros();
    for (k, &(p, q)) in PAIRS.iter().enumerate() {
        b[(p, q)] = v[k];
        b[(q, p)] = v[k];
    }
    b
}

/// `||BA + AᵀB + I||_max`.
pub fn lyapunov_residual(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    (b * a + a.transpose() * b + Matrix3::identity()).amax()
}

/// Solve `BA + AᵀB = -I` for symmetric `B` through the linear system over
/// the six independent entries.
pub fn solve_lyapunov(a: &Matrix3<f64>) -> Result<Matrix3<f64>> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix has non-finite entries".into()));
    }
    let ev = eigenvalues_sorted(a);
    let scale = a.amax().max(1.0);
    for i in 0..3 {
        for j in i..3 {
            let (re, im) = (ev[i][0] + ev[j][0], ev[i][1] + ev[j][1]);
            if re.hypot(im) <= RESONANCE_TOL * scale {
                let fmt = |e: [f64; 2]| format!("{}{:+}i", e[0], e[1]);
                return Err(Error::NoUniqueSolution(fmt(ev[i]), fmt(ev[j])));
            }
        }
    }
    let m = lyapunov_operator(a);
    let mut rhs = SVector::<f64, 6>::zeros();
    for (k, &(i, j)) in PAIRS.iter().enumerate() {
        if i == j {
            rhs[k] = -1.0;
        }
    }
    let lu = m.lu();
    let no_solution = || Error::NoUniqueSolution(format!("{:?}", ev[0]), format!("{:?}", ev[2]));
    let mut x = lu.solve(&rhs).ok_or_else(no_solution)?;
    // one round of iterative refinement
    let r = rhs - m * x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    Ok(unpack(&x))
}

pub fn lambda_min(b: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(*b).eigenvalues.min()
}

/// One entry of a solved Lyapunov matrix next to its closed-form value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntryComparison {
    pub entry: String,
    pub solved: f64,
    pub printed: f64,
    pub abs_diff: f64,
}

/// Closed-form `b_ij` exactly as printed for E0, E1 and E2, reading the
/// symbol `d13` as `d33`.
pub fn printed_solution(id: EquilibriumId, params: &ModelParams, drug_level: f64) -> Option<Vec<(&'static str, f64)>> {
    let p = params;
    let q = PrintedQuantities::at(p, drug_level);
    let [g1, g2, g3] = q.g;
    match id {
        EquilibriumId::E0 => Some(vec![
            ("b11", 1.0 / (2.0 * (g1 - 1.0))),
            ("b22", 1.0 / (2.0 * (g2 - p.r2))),
            ("b33", 1.0 / (2.0 * (g3 + p.d3))),
            ("b12", 0.0),
            ("b13", 0.0),
            ("b23", 0.0),
        ]),
        EquilibriumId::E1 => {
            let (d11, d22, d33, gm) = (q.d11, q.d22, q.d33, q.gamma);
            let b11 = -1.0 / (2.0 * d11);
            let b12 = -p.a12 * gm / (2.0 * d11 * (d11 + d22));
            let b13 = -p.a13 * gm / (2.0 * d11 * (d11 + d22));
            let b22 = (2.0 * p.a12 * b12 * gm - 1.0) / (2.0 * d22);
            let b23 = (p.a13 * b12 + p.a12 * b13) * gm / (d22 + d33);
            let b33 = -(2.0 * p.a13 * gm * b13 - 1.0) / (2.0 * d33);
            Some(vec![("b11", b11), ("b12", b12), ("b13", b13), ("b22", b22), ("b23", b23), ("b33", b33)])
        }
        EquilibriumId::E2 => {
            let (c11, c22, dl) = (q.c11, q.c22, q.delta);
            let b22 = -1.0 / (2.0 * c22);
            let b12 = -p.a21 * dl / (2.0 * c22 * (c11 + c22));
            let b11 = -(p.a21 * p.a21 * dl * dl / (2.0 * c22 * (c11 + c22)) + 0.5) / c11;
            let b33 = -1.0 / (2.0 * q.d33);
            Some(vec![("b11", b11), ("b12", b12), ("b13", 0.0), ("b22", b22), ("b23", 0.0), ("b33", b33)])
        }
        _ => None,
    }
}

/// Solve the Lyapunov equation at a named equilibrium and report how each
/// entry compares with the printed closed form.
pub fn compare_with_printed(eq: &Equilibrium, params: &ModelParams) -> Result<Vec<EntryComparison>> {
    let printed = printed_solution(eq.id, params, eq.drug_level)
        .ok_or_else(|| Error::Domain(format!("no closed form for {}", eq.id)))?;
    let g = params.kill(eq.drug_level);
    let b = solve_lyapunov(&cell_jacobian(&eq.point, &g, params))?;
    Ok(printed
        .into_iter()
        .map(|(name, value)| {
            let bytes = name.as_bytes();
            let (i, j) = ((bytes[1] - b'1') as usize, (bytes[2] - b'1') as usize);
            let solved = b[(i, j)];
            EntryComparison { entry: name.to_string(), solved, printed: value, abs_diff: (solved - value).abs() }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Halfspace {
    pub w: [f64; 3],
    pub c: f64,
}

impl Halfspace {
    pub fn contains(&self, x: &[f64; 3]) -> bool {
        dot(&self.w, x) <= self.c
    }
}

/// Coefficients of the closed-form half-space recipe and whether it was
/// adopted. It is kept only when its sign premises hold and it has the
/// equilibrium strictly inside.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HalfspaceConstruction {
    pub coefficients: BTreeMap<String, f64>,
    pub premises_hold: bool,
    pub contains_equilibrium: bool,
    pub adopted: bool,
    /// Closed-form radius where every symbol it needs is defined.
    pub printed_radius: Option<f64>,
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn halfspace_recipe(eq: &Equilibrium, params: &ModelParams, b: &Matrix3<f64>) -> Option<(HalfspaceConstruction, Halfspace)> {
    let p = params;
    let q = PrintedQuantities::at(p, eq.drug_level);
    let [g1, g2, g3] = q.g;
    let (b11, b12, b13, b22, b23, b33) = (b[(0, 0)], b[(0, 1)], b[(0, 2)], b[(1, 1)], b[(1, 2)], b[(2, 2)]);
    let mut k = BTreeMap::new();
    let (premises, hs, printed_radius) = match eq.id {
        EquilibriumId::E1 => {
            let gm = q.gamma;
            let eta11 = 2.0 * b11 * (1.0 + gm - g1);
            let eta22 = 2.0 * b12 * gm + 2.0 * p.r2 * b22 - 2.0 * b22 * g2;
            let eta33 = -2.0 * p.d3;
            let alpha = [2.0 * b11 * gm * (g1 - 1.0), 2.0 * b12 * gm * (g2 - p.r2), 2.0 * b13 * (g3 + p.d3)];
            let mu1 = eta11 + b11 * gm * p.a12;
            let mu2 = eta22 + b11 * gm * p.a13;
            for (name, v) in [
                ("eta11", eta11),
                ("eta22", eta22),
                ("eta33", eta33),
                ("alpha1", alpha[0]),
                ("alpha2", alpha[1]),
                ("alpha3", alpha[2]),
                ("mu1", mu1),
                ("mu2", mu2),
            ] {
                k.insert(name.to_string(), v);
            }
            let premises = b11 > 0.0
                && b22 > 0.0
                && b33 > 0.0
                && b12 < 0.0
                && b13 < 0.0
                && b23 > 0.0
                && eta11 > 0.0
                && eta22 > 0.0
                && eta33 > 0.0;
            let hs = Halfspace { w: [alpha[0] + 2.0 * mu1, alpha[1], alpha[2]], c: 0.0 };
            // the radius needs mu3, which is never defined
            (premises, hs, None)
        }
        EquilibriumId::E2 => {
            let dl = q.delta;
            let mu1 = 2.0 * b11 * (1.0 - g1) - 2.0 * dl * b12 * g1;
            let mu2 = 2.0 * dl * b22 * (p.r2 + g2);
            let mu3 = b33 * (p.d3 + g3);
            let mu0 = mu1.max(mu2).max(mu3);
            let cubic_a = -(2.0 * b12 * p.r2 + 2.0 * b22 * p.a21);
            let cubic_b = 2.0 * b12 * (g1 - p.a21) - 2.0 * b11 * p.a12;
            let eta = mu0 * dl * dl - b12 * (dl * p.a12 + g1) + dl * b22 * p.a21 + mu2 * dl * dl;
            for (name, v) in [
                ("mu0", mu0),
                ("mu1", mu1),
                ("mu2", mu2),
                ("mu3", mu3),
                ("eta", eta),
                ("x1x2x2_coefficient", cubic_a),
                ("x1x1x2_coefficient", cubic_b),
            ] {
                k.insert(name.to_string(), v);
            }
            let premises = mu1 > 0.0
                && mu2 > 0.0
                && mu3 > 0.0
                && b11 > 0.0
                && b22 > 0.0
                && b33 > 0.0
                && b12 < 0.0
                && cubic_a < 0.0
                && cubic_b < 0.0;
            let hs = Halfspace { w: [2.0 * dl * b12 * g1, 2.0 * b22 * g2 * (dl - p.r2) + 2.0 * mu0 * dl, 0.0], c: 0.0 };
            let radius = (mu0 > 0.0 && eta / mu0 >= 0.0).then(|| (eta / mu0).sqrt());
            (premises, hs, radius)
        }
        _ => return None,
    };
    let contains_equilibrium = dot(&hs.w, &eq.point) < hs.c;
    let adopted = premises && contains_equilibrium && hs.w.iter().all(|v| v.is_finite());
    Some((
        HalfspaceConstruction { coefficients: k, premises_hold: premises, contains_equilibrium, adopted, printed_radius },
        hs,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovCertificate {
    pub equilibrium: Equilibrium,
    #[serde(rename = "B")]
    pub b: [[f64; 3]; 3],
    pub lambda_min: f64,
    pub r: f64,
    #[serde(rename = "C")]
    pub c: f64,
    pub halfspace: Option<Halfspace>,
    pub verified_samples: usize,
    pub worst_vdot: f64,
    #[serde(rename = "box")]
    pub box_bounds: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub halfspace_construction: Option<HalfspaceConstruction>,
}

impl LyapunovCertificate {
    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|i, j| self.b[i][j])
    }

    pub fn center(&self) -> [f64; 3] {
        self.equilibrium.point
    }

    pub fn value(&self, x: &[f64; 3]) -> f64 {
        quadratic(&self.b, &self.equilibrium.point, x)
    }

    /// Axis-aligned bounds of `Ω_C` (ellipsoid ∩ box ∩ orthant).
    pub fn bounding_box(&self) -> [[f64; 2]; 3] {
        let inv = self.matrix().try_inverse().unwrap_or_else(Matrix3::zeros);
        std::array::from_fn(|i| {
            let half = (self.c * inv[(i, i)]).max(0.0).sqrt();
            let xb = self.equilibrium.point[i];
            [(xb - half).max(0.0), (xb + half).min(self.box_bounds[i])]
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

fn quadratic(b: &[[f64; 3]; 3], xbar: &[f64; 3], x: &[f64; 3]) -> f64 {
    let d = [x[0] - xbar[0], x[1] - xbar[1], x[2] - xbar[2]];
    let mut v = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            v += d[i] * b[i][j] * d[j];
        }
    }
    v
}

fn vdot_raw(x: &[f64; 3], b: &[[f64; 3]; 3], xbar: &[f64; 3], g: &[f64; 3], params: &ModelParams) -> f64 {
    let f = cell_rates(x, g, params);
    let d = [x[0] - xbar[0], x[1] - xbar[1], x[2] - xbar[2]];
    let mut v = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            v += d[i] * b[i][j] * f[j];
        }
    }
    2.0 * v
}

/// `V̇(x) = 2 (x - x̄)ᵀ B f(x)` with the drug frozen at `drug_level`.
pub fn vdot(x: &[f64; 3], cert: &LyapunovCertificate, params: &ModelParams, drug_level: f64) -> f64 {
    let g = params.kill(drug_level);
    vdot_raw(x, &cert.b, &cert.equilibrium.point, &g, params)
}

/// `V(x) ≤ C`, inside the box and the orthant, and inside the half-space
/// when one was adopted.
pub fn level_set_contains(cert: &LyapunovCertificate, x: &[f64; 3]) -> bool {
    x.iter().zip(&cert.box_bounds).all(|(&v, &k)| (0.0..=k).contains(&v))
        && cert.halfspace.as_ref().is_none_or(|h| h.contains(x))
        && cert.value(x) <= cert.c
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CertificateOptions {
    pub box_bounds: [f64; 3],
    /// Points sampled per radius test.
    pub budget: usize,
    pub seed: u64,
    pub eps_inner: f64,
}

impl Default for CertificateOptions {
    fn default() -> Self {
        Self { box_bounds: DEFAULT_BOX, budget: DEFAULT_BUDGET, seed: 0, eps_inner: EPS_INNER }
    }
}

/// Deterministic sample of `{ε ≤ |x - x̄| ≤ ρ} ∩ R³₊`: uniform points in the
/// shell, reflected into the orthant along coordinates where `x̄` is zero,
/// plus a spherical Fibonacci lattice on the outer sphere and points on the
/// coordinate faces through `x̄`.
pub fn sample_shell(xbar: &[f64; 3], rho: f64, eps: f64, n: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let zero_axes: Vec<usize> = (0..3).filter(|&i| xbar[i] == 0.0).collect();
    let fold = |mut d: [f64; 3]| {
        for &i in &zero_axes {
            d[i] = d[i].abs();
        }
        d
    };
    let place = |d: [f64; 3], s: f64| [xbar[0] + s * d[0], xbar[1] + s * d[1], xbar[2] + s * d[2]];
    let n_sphere = n / 5;
    let mut out = Vec::with_capacity(n);
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    for k in 0..n_sphere {
        let z = 1.0 - 2.0 * (k as f64 + 0.5) / n_sphere as f64;
        let ring = (1.0 - z * z).sqrt();
        let phi = golden * k as f64;
        let p = place(fold([ring * phi.cos(), ring * phi.sin(), z]), rho);
        if p.iter().all(|&v| v >= 0.0) {
            out.push(p);
        }
    }
    let lo = (eps / rho).powi(3).min(1.0);
    let mut k = 0usize;
    while out.len() < n && k < 20 * n {
        k += 1;
        let mut d: [f64; 3] = std::array::from_fn(|_| rng.sample::<f64, _>(StandardNormal));
        let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
        if norm == 0.0 {
            continue;
        }
        for v in &mut d {
            *v /= norm;
        }
        let mut d = fold(d);
        // put every fourth point on a coordinate face through x̄
        if k % 4 == 1 && !zero_axes.is_empty() {
            d[zero_axes[k / 4 % zero_axes.len()]] = 0.0;
            let m = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            if m == 0.0 {
                continue;
            }
            d.iter_mut().for_each(|v| *v /= m);
        }
        let s = rho * rng.random_range(lo..=1.0f64).cbrt();
        let p = place(d, s.max(eps));
        if p.iter().all(|&v| v >= 0.0) {
            out.push(p);
        }
    }
    out
}

struct SampleOutcome {
    worst: f64,
    /// Distance of the closest sample with `V̇ ≥ 0`.
    nearest_violation: Option<f64>,
    count: usize,
}

fn test_radius(
    b: &[[f64; 3]; 3],
    xbar: &[f64; 3],
    g: &[f64; 3],
    params: &ModelParams,
    rho: f64,
    opts: &CertificateOptions,
    rng: &mut ChaCha8Rng,
) -> SampleOutcome {
    let pts = sample_shell(xbar, rho, opts.eps_inner, opts.budget, rng);
    let vals: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|x| {
            let d = ((x[0] - xbar[0]).powi(2) + (x[1] - xbar[1]).powi(2) + (x[2] - xbar[2]).powi(2)).sqrt();
            (vdot_raw(x, b, xbar, g, params), d)
        })
        .collect();
    let worst = vals.iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.0));
    let nearest_violation = vals
        .iter()
        .filter(|v| !(v.0 < 0.0))
        .map(|v| v.1)
        .fold(None, |m: Option<f64>, d| Some(m.map_or(d, |m| m.min(d))));
    SampleOutcome { worst, nearest_violation, count: pts.len() }
}

pub fn build_certificate(
    eq: &Equilibrium,
    params: &ModelParams,
    dose: f64,
    box_bounds: [f64; 3],
    budget: usize,
) -> Result<LyapunovCertificate> {
    build_certificate_with(eq, params, dose, &CertificateOptions { box_bounds, budget, ..Default::default() })
}

/// Largest sampled-clean radius `r` below `min(|K|, min_i K_i - x̄_i)`,
/// level `C = 0.99 λ_min(B) r²`. The cap keeps `Ω_C` inside the box, and
/// V̇ is sampled on the whole ball ∩ orthant so the certificate does not
/// depend on the half-space.
pub fn build_certificate_with(
    eq: &Equilibrium,
    params: &ModelParams,
    dose: f64,
    opts: &CertificateOptions,
) -> Result<LyapunovCertificate> {
    if !(dose >= 0.0) {
        return Err(Error::Domain(format!("dose must be >= 0, got {dose}")));
    }
    if opts.box_bounds.iter().any(|&k| !(k > 0.0 && k.is_finite())) {
        return Err(Error::Domain("box bounds must be positive".into()));
    }
    if opts.budget < 10 {
        return Err(Error::Domain("sampling budget must be at least 10".into()));
    }
    if !eq.feasible {
        return Err(Error::Domain(format!("{} is not feasible", eq.id)));
    }
    let xbar = eq.point;
    let u = params.steady_drug(dose);
    let g = params.kill(u);
    let a = cell_jacobian(&xbar, &g, params);
    let max_re = eigenvalues_sorted(&a)[0][0];
    if !(max_re < 0.0) {
        return Err(Error::NotStable(max_re));
    }
    let bm = solve_lyapunov(&a)?;
    let lmin = lambda_min(&bm);
    if !(lmin > 0.0) {
        return Err(Error::NotPositiveDefinite(lmin));
    }
    let b = to_rows(&bm);

    let k = opts.box_bounds;
    let diam = (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]).sqrt();
    let face = (0..3).map(|i| k[i] - xbar[i]).fold(f64::INFINITY, f64::min);
    let r_max = diam.min(face);
    if !(r_max > opts.eps_inner) {
        return Err(Error::Domain(format!("{} lies outside the box", eq.id)));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut rho = r_max;
    let mut clean = None;
    for _ in 0..200 {
        if rho <= opts.eps_inner {
            break;
        }
        let first = test_radius(&b, &xbar, &g, params, rho, opts, &mut rng);
        if let Some(d) = first.nearest_violation {
            rho = 0.9 * d.min(rho);
            continue;
        }
        // confirm on a fresh sample
        let second = test_radius(&b, &xbar, &g, params, rho, opts, &mut rng);
        match second.nearest_violation {
            None => {
                clean = Some((rho, first.worst.max(second.worst), first.count + second.count));
                break;
            }
            Some(d) => rho = 0.9 * d.min(rho),
        }
    }
    let (r, worst_vdot, verified_samples) = clean.ok_or(Error::EmptyCertificate)?;

    let (construction, halfspace) = match halfspace_recipe(eq, params, &bm) {
        Some((rec, hs)) => {
            let adopted = rec.adopted.then_some(hs);
            (Some(rec), adopted)
        }
        None => (None, None),
    };
    Ok(LyapunovCertificate {
        equilibrium: *eq,
        b,
        lambda_min: lmin,
        r,
        c: LEVEL_SAFETY * lmin * r * r,
        halfspace,
        verified_samples,
        worst_vdot,
        box_bounds: k,
        halfspace_construction: construction,
    })
}

/// Uniform rejection samples from `Ω_C`.
pub fn sample_level_set(cert: &LyapunovCertificate, n: usize, rng: &mut impl Rng) -> Vec<[f64; 3]> {
    let bb = cert.bounding_box();
    let mut out = Vec::with_capacity(n);
    let mut tries = 0usize;
    while out.len() < n && tries < 1000 * n.max(1) {
        tries += 1;
        let x: [f64; 3] = std::array::from_fn(|i| {
            if bb[i][1] > bb[i][0] {
                rng.random_range(bb[i][0]..=bb[i][1])
            } else {
                bb[i][0]
            }
        });
        if level_set_contains(cert, &x) {
            out.push(x);
        }
    }
    out
}
