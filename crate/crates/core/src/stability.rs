//! Equilibria under a constant dose, their linearization and local
//! classification, plus an audit of the closed-form stability conditions.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::model::{cell_jacobian, cell_rates, ModelParams};

pub const DEFAULT_EPS_EIG: f64 = 1e-9;
/// Residual an equilibrium must meet under frozen drug.
const FACE_SNAP: f64 = 1e-14;
pub const EQUILIBRIUM_RESIDUAL: f64 = 1e-10;
const DEDUP_RADIUS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EquilibriumId {
    /// Everything extinct.
    E0,
    /// Tumor only.
    E1,
    /// Healthy cells only.
    E2,
    Interior(usize),
    /// Any other root on the boundary of the orthant.
    Boundary(usize),
}

impl fmt::Display for EquilibriumId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EquilibriumId::E0 => f.write_str("E0"),
            EquilibriumId::E1 => f.write_str("E1"),
            EquilibriumId::E2 => f.write_str("E2"),
            EquilibriumId::Interior(n) => write!(f, "interior-{n}"),
            EquilibriumId::Boundary(n) => write!(f, "boundary-{n}"),
        }
    }
}

impl FromStr for EquilibriumId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "E0" => Ok(EquilibriumId::E0),
            "E1" => Ok(EquilibriumId::E1),
            "E2" => Ok(EquilibriumId::E2),
            _ => {
                let parse = |rest: &str| rest.parse::<usize>().map_err(|_| Error::Domain(format!("bad equilibrium id {s:?}")));
                if let Some(rest) = s.strip_prefix("interior-") {
                    Ok(EquilibriumId::Interior(parse(rest)?))
                } else if let Some(rest) = s.strip_prefix("boundary-") {
                    Ok(EquilibriumId::Boundary(parse(rest)?))
                } else {
                    Err(Error::Domain(format!("bad equilibrium id {s:?}")))
                }
            }
        }
    }
}

impl Serialize for EquilibriumId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for EquilibriumId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub id: EquilibriumId,
    pub point: [f64; 3],
    /// Constant dose rate `v̄`.
    pub dose: f64,
    /// Steady drug amount `ū = v̄ / d2`.
    pub drug_level: f64,
    pub feasible: bool,
}

impl Equilibrium {
    pub fn new(id: EquilibriumId, point: [f64; 3], dose: f64, drug_level: f64) -> Self {
        let feasible = point.iter().all(|&x| x >= 0.0);
        Self { id, point, dose, drug_level, feasible }
    }

    /// Cell residual `||f(point)||_inf` with drug frozen at `drug_level`.
    pub fn residual(&self, params: &ModelParams) -> f64 {
        let g = params.kill(self.drug_level);
        max_abs(&cell_rates(&self.point, &g, params))
    }
}

fn max_abs(v: &[f64; 3]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_dose(dose: f64) -> Result<()> {
    if dose >= 0.0 && dose.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("dose must be finite and >= 0, got {dose}")))
    }
}

/// `E0 = 0`, `E1 = (γ, 0, 0)` and `E2 = (0, δ, 0)` with
/// `γ = 1 - g1(ū)`, `δ = 1 - g2(ū) / r2`.
pub fn boundary_equilibria(params: &ModelParams, dose: f64) -> Result<Vec<Equilibrium>> {
    check_dose(dose)?;
    let u = params.steady_drug(dose);
    let g = params.kill(u);
    let gamma = 1.0 - g[0];
    let delta = 1.0 - g[1] / params.r2;
    Ok(vec![
        Equilibrium::new(EquilibriumId::E0, [0.0; 3], dose, u),
        Equilibrium::new(EquilibriumId::E1, [gamma, 0.0, 0.0], dose, u),
        Equilibrium::new(EquilibriumId::E2, [0.0, delta, 0.0], dose, u),
    ])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumSearch {
    pub roots: Vec<Equilibrium>,
    /// Seeds whose Newton iteration failed to reach the residual threshold.
    pub dropped: usize,
}

fn newton_root(params: &ModelParams, g: &[f64; 3], seed: [f64; 3]) -> Option<[f64; 3]> {
    let mut x = seed;
    let mut fx = cell_rates(&x, g, params);
    let mut norm = max_abs(&fx);
    for _ in 0..100 {
        if !norm.is_finite() {
            return None;
        }
        if norm <= 1e-14 {
            break;
        }
        let jac = cell_jacobian(&x, g, params);
        let step = jac.lu().solve(&Vector3::from(fx))?;
        let mut lambda = 1.0;
        let mut improved = false;
        while lambda >= 1.0 / 1024.0 {
            let trial = [x[0] - lambda * step[0], x[1] - lambda * step[1], x[2] - lambda * step[2]];
            if trial[0] + params.k3 > 0.0 {
                let ft = cell_rates(&trial, g, params);
                let nt = max_abs(&ft);
                if nt < norm {
                    x = trial;
                    fx = ft;
                    norm = nt;
                    improved = true;
                    break;
                }
            }
            lambda *= 0.5;
        }
        if !improved {
            break;
        }
    }
    (norm <= EQUILIBRIUM_RESIDUAL).then_some(x)
}

/// Damped Newton on the isocline system from every seed. Roots closer than
/// 1e-8 are merged; boundary roots matching the closed forms get their ids.
pub fn find_equilibria(params: &ModelParams, dose: f64, seeds: &[[f64; 3]]) -> Result<EquilibriumSearch> {
    check_dose(dose)?;
    if seeds.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Domain("seeds must be finite".into()));
    }
    let u = params.steady_drug(dose);
    let g = params.kill(u);
    let named = boundary_equilibria(params, dose)?;

    let mut roots: Vec<Equilibrium> = Vec::new();
    let mut dropped = 0;
    let (mut interior, mut boundary) = (0, 0);
    for &seed in seeds {
        let Some(mut x) = newton_root(params, &g, seed) else {
            dropped += 1;
            continue;
        };
        // snap numerically vanishing coordinates (and signed zeros) onto the face
        for v in &mut x {
            if v.abs() <= FACE_SNAP {
                *v = 0.0;
            }
        }
        let close = |a: &[f64; 3], b: &[f64; 3]| a.iter().zip(b).all(|(p, q)| (p - q).abs() <= DEDUP_RADIUS);
        if roots.iter().any(|r| close(&r.point, &x)) {
            continue;
        }
        let id = if let Some(n) = named.iter().find(|n| close(&n.point, &x)) {
            n.id
        } else if x.iter().all(|&v| v > 0.0) {
            interior += 1;
            EquilibriumId::Interior(interior)
        } else {
            boundary += 1;
            EquilibriumId::Boundary(boundary)
        };
        roots.push(Equilibrium::new(id, x, dose, u));
    }
    Ok(EquilibriumSearch { roots, dropped })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LocalLabel {
    LocallyAsymptoticallyStable,
    Unstable,
    NonHyperbolic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifoldDims {
    pub stable: usize,
    pub unstable: usize,
    pub center: usize,
}

/// What the closed-form sign conditions predict for an equilibrium.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignPrediction {
    Stable,
    Unstable,
    Inconclusive,
}

/// Manifold dimensions asserted by the closed-form theory, kept for
/// comparison with the eigenvalue count. They are not always consistent
/// with it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssertedDims {
    pub stable: Option<usize>,
    pub unstable: Option<usize>,
    pub saddle: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub equilibrium: Equilibrium,
    pub jacobian: [[f64; 3]; 3],
    /// `[re, im]`, sorted by decreasing real part.
    pub eigenvalues: Vec<[f64; 2]>,
    pub dims: ManifoldDims,
    pub label: LocalLabel,
    /// Printed linearization entries (γ, d_ii or δ, c_ii) for E0/E1/E2.
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub diagnostics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sign_prediction: Option<SignPrediction>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub asserted_dims: Option<AssertedDims>,
}

/// Closed-form linearization quantities at drug level `ū`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrintedQuantities {
    pub g: [f64; 3],
    pub gamma: f64,
    pub delta: f64,
    pub d11: f64,
    pub d22: f64,
    pub d33: f64,
    pub c11: f64,
    pub c22: f64,
    pub c33: f64,
}

impl PrintedQuantities {
    pub fn at(params: &ModelParams, drug_level: f64) -> Self {
        let p = params;
        let g = p.kill(drug_level);
        let gamma = 1.0 - g[0];
        let delta = 1.0 - g[1] / p.r2;
        let d33 = if gamma + p.k3 > 0.0 {
            (p.r3 / (gamma + p.k3) - p.a31) * gamma - p.d3 - g[2]
        } else {
            f64::NAN
        };
        Self {
            g,
            gamma,
            delta,
            d11: 1.0 - 2.0 * gamma - g[0],
            d22: p.r2 - p.a21 * gamma - g[1],
            d33,
            c11: 1.0 - p.a12 * delta - g[0],
            // includes a -a21 δ term absent from the analytic Jacobian entry (-r2 δ)
            c22: p.r2 * (1.0 - 2.0 * delta) - p.a21 * delta - g[1],
            c33: -p.d3 - g[2],
        }
    }
}

pub(crate) fn eigenvalues_sorted(m: &Matrix3<f64>) -> Vec<[f64; 2]> {
    let mut ev: Vec<[f64; 2]> = m.complex_eigenvalues().iter().map(|c| [c.re, c.im]).collect();
    ev.sort_by(|a, b| b[0].total_cmp(&a[0]).then(b[1].total_cmp(&a[1])));
    ev
}

pub(crate) fn to_rows(m: &Matrix3<f64>) -> [[f64; 3]; 3] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

/// Linearize at `eq`, count eigenvalue signs with tolerance `eps_eig`.
pub fn classify(eq: &Equilibrium, params: &ModelParams, dose: f64, eps_eig: f64) -> Result<StabilityReport> {
    check_dose(dose)?;
    if !eq.feasible {
        return Err(Error::Domain(format!("{} is not feasible", eq.id)));
    }
    let u = params.steady_drug(dose);
    let g = params.kill(u);
    let jac = cell_jacobian(&eq.point, &g, params);
    let eigenvalues = eigenvalues_sorted(&jac);
    let stable = eigenvalues.iter().filter(|e| e[0] < -eps_eig).count();
    let unstable = eigenvalues.iter().filter(|e| e[0] > eps_eig).count();
    let dims = ManifoldDims { stable, unstable, center: 3 - stable - unstable };
    let label = if stable == 3 {
        LocalLabel::LocallyAsymptoticallyStable
    } else if unstable > 0 {
        LocalLabel::Unstable
    } else {
        LocalLabel::NonHyperbolic
    };

    let q = PrintedQuantities::at(params, u);
    let mut diagnostics = BTreeMap::new();
    let (sign_prediction, asserted_dims) = match eq.id {
        EquilibriumId::E0 => {
            diagnostics.insert("gamma".into(), q.gamma);
            diagnostics.insert("d22".into(), q.d22);
            diagnostics.insert("c33".into(), q.c33);
            let pred = if q.g[0] > 1.0 && q.g[1] > params.r2 {
                SignPrediction::Stable
            } else if q.g[0] < 1.0 && q.g[1] < params.r2 {
                SignPrediction::Unstable
            } else {
                SignPrediction::Inconclusive
            };
            (Some(pred), Some(asserted_for(pred)))
        }
        EquilibriumId::E1 => {
            diagnostics.insert("gamma".into(), q.gamma);
            diagnostics.insert("d11".into(), q.d11);
            diagnostics.insert("d22".into(), q.d22);
            diagnostics.insert("d33".into(), q.d33);
            let d = [q.d11, q.d22, q.d33];
            let pred = if d.iter().all(|&v| v < 0.0) {
                SignPrediction::Stable
            } else if d.iter().any(|&v| v > 0.0) {
                SignPrediction::Unstable
            } else {
                SignPrediction::Inconclusive
            };
            (Some(pred), Some(asserted_for(pred)))
        }
        EquilibriumId::E2 => {
            diagnostics.insert("delta".into(), q.delta);
            diagnostics.insert("c11".into(), q.c11);
            diagnostics.insert("c22".into(), q.c22);
            diagnostics.insert("c33".into(), q.c33);
            let pred = if q.c11 < 0.0 && q.c22 < 0.0 {
                SignPrediction::Stable
            } else if q.c11 > 0.0 || q.c22 > 0.0 {
                SignPrediction::Unstable
            } else {
                SignPrediction::Inconclusive
            };
            (Some(pred), Some(asserted_for(pred)))
        }
        _ => (None, None),
    };

    Ok(StabilityReport {
        equilibrium: *eq,
        jacobian: to_rows(&jac),
        eigenvalues,
        dims,
        label,
        diagnostics,
        sign_prediction,
        asserted_dims,
    })
}

fn asserted_for(pred: SignPrediction) -> AssertedDims {
    match pred {
        SignPrediction::Stable => AssertedDims { stable: Some(1), unstable: Some(1), saddle: None },
        SignPrediction::Unstable => AssertedDims { stable: None, unstable: None, saddle: Some(1) },
        SignPrediction::Inconclusive => AssertedDims { stable: None, unstable: None, saddle: None },
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Holds,
    Fails,
    Indeterminate(String),
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Verdict::Holds => f.write_str("holds"),
            Verdict::Fails => f.write_str("fails"),
            Verdict::Indeterminate(why) => write!(f, "indeterminate: {why}"),
        }
    }
}

impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        match s.as_str() {
            "holds" => Ok(Verdict::Holds),
            "fails" => Ok(Verdict::Fails),
            other => other
                .strip_prefix("indeterminate: ")
                .map(|r| Verdict::Indeterminate(r.to_string()))
                .ok_or_else(|| serde::de::Error::custom(format!("bad verdict {other:?}"))),
        }
    }
}

impl Verdict {
    fn from_bool(b: bool) -> Self {
        if b {
            Verdict::Holds
        } else {
            Verdict::Fails
        }
    }

    pub fn holds(&self) -> bool {
        *self == Verdict::Holds
    }
}

/// Audit keys, one per closed-form condition set.
pub mod audit_keys {
    /// Local stability of E0 (`g1 > 1`, `g2 > r2`).
    pub const LOCAL_E0: &str = "local_e0";
    /// Local stability of E1 (`d_ii < 0`).
    pub const LOCAL_E1: &str = "local_e1";
    /// Local stability of E2 (`c11, c22 < 0`).
    pub const LOCAL_E2: &str = "local_e2";
    /// Global stability of E0 (`g1 > 1`, `g2 > r2`, `a31 k3 > r3`).
    pub const GLOBAL_E0: &str = "global_e0";
    pub const GLOBAL_E1: &str = "global_e1";
    pub const GLOBAL_E2: &str = "global_e2";
    /// `a21 >= (a12 - 1) / r2`, a coefficient-level sufficient condition.
    pub const SHORTCUT_COMPETITION: &str = "shortcut_competition";
    /// `a12 + (1 + a13) / 2 > r2`.
    pub const SHORTCUT_KILL: &str = "shortcut_kill";

    pub const ALL: [&str; 8] = [
        LOCAL_E0,
        LOCAL_E1,
        LOCAL_E2,
        GLOBAL_E0,
        GLOBAL_E1,
        GLOBAL_E2,
        SHORTCUT_COMPETITION,
        SHORTCUT_KILL,
    ];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct HypothesisAudit {
    pub entries: BTreeMap<String, Verdict>,
}

impl HypothesisAudit {
    pub fn get(&self, key: &str) -> Option<&Verdict> {
        self.entries.get(key)
    }
}

fn all_of(conds: &[f64]) -> Verdict {
    // each value must be strictly positive; NaN means undefined
    if conds.iter().any(|c| c.is_nan()) {
        Verdict::Indeterminate("a quantity is undefined (gamma + k3 <= 0)".into())
    } else {
        Verdict::from_bool(conds.iter().all(|&c| c > 0.0))
    }
}

/// Evaluate every legible closed-form stability condition at `ū = v̄ / d2`.
pub fn check_hypotheses(params: &ModelParams, dose: f64) -> Result<HypothesisAudit> {
    use audit_keys::*;
    check_dose(dose)?;
    let p = params;
    let q = PrintedQuantities::at(p, p.steady_drug(dose));
    let [g1, g2, _] = q.g;
    let mut e = BTreeMap::new();

    e.insert(LOCAL_E0.to_string(), all_of(&[g1 - 1.0, g2 - p.r2]));
    e.insert(LOCAL_E1.to_string(), all_of(&[-q.d11, -q.d22, -q.d33]));
    e.insert(LOCAL_E2.to_string(), all_of(&[-q.c11, -q.c22]));
    e.insert(GLOBAL_E0.to_string(), all_of(&[g1 - 1.0, g2 - p.r2, p.a31 * p.k3 - p.r3]));

    // Only the diagonal signs and r2 > g2 are legible; the rest mixes
    // unlabeled inequalities and an undefined d12.
    let legible = all_of(&[-q.d11, -q.d22, -q.d33, p.r2 - g2]);
    let e1 = match legible {
        Verdict::Holds => Verdict::Indeterminate(
            "the coupling inequalities and the d12 term cannot be evaluated".into(),
        ),
        other => other,
    };
    e.insert(GLOBAL_E1.to_string(), e1);

    e.insert(
        GLOBAL_E2.to_string(),
        all_of(&[
            -q.c11,
            q.delta,
            -q.c22,
            1.0 - g1,
            g1 + g2 + p.r2 - p.r2 * (q.delta - 1.0),
            g1 - 1.0 - q.delta * (p.a12 + 1.0),
        ]),
    );

    e.insert(
        SHORTCUT_COMPETITION.to_string(),
        Verdict::from_bool(p.a21 >= (p.a12 - 1.0) / p.r2),
    );
    e.insert(SHORTCUT_KILL.to_string(), Verdict::from_bool(p.a12 + 0.5 * (1.0 + p.a13) > p.r2));
    Ok(HypothesisAudit { entries: e })
}
