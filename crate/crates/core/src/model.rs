//! Scaled tumor / host / immune model with chemotherapy forcing.
//!
//! State is `(x1, x2, x3, u)`: tumor, healthy host and effector immune cell
//! densities (each divided by its carrying capacity) and the amount of drug
//! at the tumor site. Time is measured in units of `1 / r1`.

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the drug response curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseKind {
    /// `g_i(u) = a_i (1 - exp(-nu_i u))`.
    #[default]
    Exponential,
    /// No drug effect on any population.
    Zero,
}

/// Three-channel fractional cell kill `g(u) = (g1, g2, g3)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResponseCurve {
    #[serde(default, skip_serializing_if = "is_exponential")]
    pub kind: ResponseKind,
    /// Saturation kill rates.
    pub a: [f64; 3],
    /// Sensitivities.
    pub nu: [f64; 3],
}

fn is_exponential(kind: &ResponseKind) -> bool {
    *kind == ResponseKind::Exponential
}

impl ResponseCurve {
    pub fn exponential(a: [f64; 3], nu: [f64; 3]) -> Self {
        Self { kind: ResponseKind::Exponential, a, nu }
    }

    pub fn zero() -> Self {
        Self { kind: ResponseKind::Zero, a: [0.0; 3], nu: [1.0; 3] }
    }

    /// Unchecked evaluation; `u` is assumed nonnegative.
    #[inline]
    pub(crate) fn eval_unchecked(&self, u: f64) -> [f64; 3] {
        match self.kind {
            ResponseKind::Zero => [0.0; 3],
            // a (1 - e^{-nu u}) = -a expm1(-nu u), exact near u = 0
            ResponseKind::Exponential => {
                std::array::from_fn(|i| -self.a[i] * (-self.nu[i] * u).exp_m1())
            }
        }
    }

    fn validate(&self) -> Result<()> {
        for i in 0..3 {
            if !(self.a[i] >= 0.0 && self.a[i].is_finite()) {
                return Err(Error::InvalidParams(format!("response a[{i}] must be finite and >= 0")));
            }
            if !(self.nu[i] > 0.0 && self.nu[i].is_finite()) {
                return Err(Error::InvalidParams(format!("response nu[{i}] must be finite and > 0")));
            }
        }
        Ok(())
    }
}

/// Evaluate the response curve at drug amount `u >= 0`.
pub fn response_eval(curve: &ResponseCurve, u: f64) -> Result<[f64; 3]> {
    if !(u >= 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!("drug amount must be finite and >= 0, got {u}")));
    }
    Ok(curve.eval_unchecked(u))
}

/// Constants of the unscaled model. `k3` here is the immune carrying
/// capacity, not the half-saturation constant of the scaled model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Dimensional {
    pub r1: f64,
    pub k1: f64,
    pub k2: f64,
    pub k3: f64,
    #[serde(default)]
    pub s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub r2: f64,
    pub a12: f64,
    pub a13: f64,
    pub a21: f64,
    pub a31: f64,
    pub r3: f64,
    pub k3: f64,
    pub d3: f64,
    pub d2: f64,
    pub response: ResponseCurve,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimensional: Option<Dimensional>,
}

impl ModelParams {
    /// Illustrative parameter set shipped as `params/default.json`. Not fitted
    /// to data.
    pub fn illustrative() -> Self {
        Self {
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
            dimensional: Some(Dimensional { r1: 0.9, k1: 1.0e9, k2: 1.0e9, k3: 1.0e5, s: 0.0 }),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("r2", self.r2),
            ("r3", self.r3),
            ("k3", self.k3),
            ("d3", self.d3),
            ("d2", self.d2),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        let nonneg = [("a12", self.a12), ("a13", self.a13), ("a21", self.a21), ("a31", self.a31)];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidParams(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        self.response.validate()?;
        if let Some(dim) = &self.dimensional {
            for (name, v) in [("r1", dim.r1), ("k1", dim.k1), ("k2", dim.k2), ("k3", dim.k3)] {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(Error::InvalidParams(format!(
                        "dimensional {name} must be finite and > 0, got {v}"
                    )));
                }
            }
            if !(dim.s >= 0.0 && dim.s.is_finite()) {
                return Err(Error::InvalidParams("dimensional s must be >= 0".into()));
            }
            // scaled r2 = r2_dim / r1, so r1 > r2_dim iff r2 < 1
            if self.r2 >= 1.0 {
                return Err(Error::InvalidParams(format!(
                    "tumor must proliferate faster than host cells (scaled r2 < 1), got r2 = {}",
                    self.r2
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let params: Self = serde_json::from_str(text)?;
        params.validate()?;
        Ok(params)
    }

    /// Drug response at `u`, unchecked.
    #[inline]
    pub fn kill(&self, u: f64) -> [f64; 3] {
        self.response.eval_unchecked(u)
    }

    /// Steady drug level under a constant dose `v̄`.
    #[inline]
    pub fn steady_drug(&self, dose: f64) -> f64 {
        dose / self.d2
    }
}

/// Scaled cell densities plus drug amount.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SystemState {
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
    pub u: f64,
}

impl SystemState {
    pub const fn new(x1: f64, x2: f64, x3: f64, u: f64) -> Self {
        Self { x1, x2, x3, u }
    }

    pub fn from_cells(x: [f64; 3], u: f64) -> Self {
        Self::new(x[0], x[1], x[2], u)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.x2, self.x3, self.u]
    }

    pub fn from_array(y: [f64; 4]) -> Self {
        Self::new(y[0], y[1], y[2], y[3])
    }

    pub fn cells(&self) -> [f64; 3] {
        [self.x1, self.x2, self.x3]
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

/// Dose rate `v(t)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum DrugSchedule {
    #[default]
    Zero,
    Constant { level: f64 },
    /// `(t_start, t_end, level)` segments; `v = 0` outside all segments.
    Piecewise { segments: Vec<(f64, f64, f64)> },
}

impl DrugSchedule {
    pub fn constant(level: f64) -> Self {
        DrugSchedule::Constant { level }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DrugSchedule::Zero => Ok(()),
            DrugSchedule::Constant { level } => {
                if *level >= 0.0 && level.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Domain(format!("dose level must be finite and >= 0, got {level}")))
                }
            }
            DrugSchedule::Piecewise { segments } => {
                let mut prev_end = f64::NEG_INFINITY;
                for (i, &(a, b, level)) in segments.iter().enumerate() {
                    if !(a.is_finite() && b.is_finite() && a < b) {
                        return Err(Error::Domain(format!("segment {i} must satisfy t_start < t_end")));
                    }
                    if !(level >= 0.0 && level.is_finite()) {
                        return Err(Error::Domain(format!("segment {i} level must be >= 0")));
                    }
                    if a < prev_end {
                        return Err(Error::Domain(format!(
                            "segment {i} overlaps or is out of order"
                        )));
                    }
                    prev_end = b;
                }
                Ok(())
            }
        }
    }

    /// Dose rate at `t`; segments are closed on the left.
    pub fn level_at(&self, t: f64) -> f64 {
        match self {
            DrugSchedule::Zero => 0.0,
            DrugSchedule::Constant { level } => *level,
            DrugSchedule::Piecewise { segments } => segments
                .iter()
                .find(|&&(a, b, _)| t >= a && t < b)
                .map_or(0.0, |s| s.2),
        }
    }

    /// Dose rate that persists after the last discontinuity.
    pub fn terminal_level(&self) -> f64 {
        match self {
            DrugSchedule::Constant { level } => *level,
            _ => 0.0,
        }
    }

    /// Discontinuities of `v` strictly inside `(t0, tf)`, sorted.
    pub fn breakpoints(&self, t0: f64, tf: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if let DrugSchedule::Piecewise { segments } = self {
            for &(a, b, _) in segments {
                for t in [a, b] {
                    if t > t0 && t < tf {
                        out.push(t);
                    }
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Constant-level pieces `(start, end, level)` covering `[t0, t]`.
    fn pieces(&self, t0: f64, t: f64) -> Vec<(f64, f64, f64)> {
        match self {
            DrugSchedule::Zero => Vec::new(),
            DrugSchedule::Constant { level } => vec![(t0, t, *level)],
            DrugSchedule::Piecewise { segments } => segments
                .iter()
                .filter_map(|&(a, b, level)| {
                    let (lo, hi) = (a.max(t0), b.min(t));
                    (hi > lo && level > 0.0).then_some((lo, hi, level))
                })
                .collect(),
        }
    }
}

/// Right-hand side of the cell equations at frozen kill rates `g`.
#[inline]
pub(crate) fn cell_rates(x: &[f64; 3], g: &[f64; 3], p: &ModelParams) -> [f64; 3] {
    let [x1, x2, x3] = *x;
    [
        x1 * (1.0 - x1) - p.a12 * x1 * x2 - p.a13 * x1 * x3 - g[0] * x1,
        p.r2 * x2 * (1.0 - x2) - p.a21 * x1 * x2 - g[1] * x2,
        p.r3 * x1 * x3 / (x1 + p.k3) - p.a31 * x1 * x3 - p.d3 * x3 - g[2] * x3,
    ]
}

/// Full 4-dimensional vector field at dose rate `v_t`.
#[inline]
pub(crate) fn rhs(y: &[f64; 4], p: &ModelParams, v_t: f64) -> [f64; 4] {
    let g = p.kill(y[3].max(0.0));
    let c = cell_rates(&[y[0], y[1], y[2]], &g, p);
    [c[0], c[1], c[2], v_t - p.d2 * y[3]]
}

pub fn vector_field(state: &SystemState, params: &ModelParams, v_t: f64) -> Result<[f64; 4]> {
    if !state.is_finite() {
        return Err(Error::Domain("state components must be finite".into()));
    }
    if !(v_t >= 0.0) {
        return Err(Error::Domain(format!("dose rate must be >= 0, got {v_t}")));
    }
    if state.x1 + params.k3 <= 0.0 {
        return Err(Error::Singularity { x1: state.x1 });
    }
    Ok(rhs(&state.to_array(), params, v_t))
}

/// Jacobian of the cell subsystem with kill rates `g` held fixed.
pub(crate) fn cell_jacobian(x: &[f64; 3], g: &[f64; 3], p: &ModelParams) -> Matrix3<f64> {
    let [x1, x2, x3] = *x;
    let s = x1 + p.k3;
    Matrix3::new(
        1.0 - 2.0 * x1 - p.a12 * x2 - p.a13 * x3 - g[0],
        -p.a12 * x1,
        -p.a13 * x1,
        -p.a21 * x2,
        p.r2 * (1.0 - 2.0 * x2) - p.a21 * x1 - g[1],
        0.0,
        p.r3 * p.k3 * x3 / (s * s) - p.a31 * x3,
        0.0,
        p.r3 * x1 / s - p.a31 * x1 - p.d3 - g[2],
    )
}

/// Analytic Jacobian of `(f1, f2, f3)` in `(x1, x2, x3)` at drug level `u`.
pub fn jacobian(state: &SystemState, params: &ModelParams, u: f64) -> Result<Matrix3<f64>> {
    if !state.is_finite() {
        return Err(Error::Domain("state components must be finite".into()));
    }
    if state.x1 + params.k3 <= 0.0 {
        return Err(Error::Singularity { x1: state.x1 });
    }
    let g = response_eval(&params.response, u)?;
    Ok(cell_jacobian(&state.cells(), &g, params))
}

/// Drug amount at `t` solving `u' + d2 u = v(t)`, `u(t0) = u0`.
pub fn drug_closed_form(t: f64, t0: f64, u0: f64, schedule: &DrugSchedule, d2: f64) -> Result<f64> {
    if !(t >= t0) {
        return Err(Error::Domain(format!("t = {t} precedes t0 = {t0}")));
    }
    if !(u0 >= 0.0) {
        return Err(Error::Domain(format!("u0 must be >= 0, got {u0}")));
    }
    if !(d2 > 0.0) {
        return Err(Error::Domain(format!("d2 must be > 0, got {d2}")));
    }
    let mut u = (-d2 * (t - t0)).exp() * u0;
    for (a, b, level) in schedule.pieces(t0, t) {
        // level * int_a^b e^{-d2 (t - s)} ds
        u += -level * (-d2 * (t - b)).exp() * (-d2 * (b - a)).exp_m1() / d2;
    }
    Ok(u)
}

/// Scaled cell densities and the time-scaling factor `r1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledCells {
    pub x: [f64; 3],
    pub time_scale: f64,
}

pub fn scale_dimensional(tumor: f64, host: f64, immune: f64, params: &ModelParams) -> Result<ScaledCells> {
    let dim = params.dimensional.as_ref().ok_or(Error::MissingDimensional)?;
    for (name, v) in [("T", tumor), ("N", host), ("I", immune)] {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::Domain(format!("{name} must be finite and >= 0, got {v}")));
        }
    }
    Ok(ScaledCells { x: [tumor / dim.k1, host / dim.k2, immune / dim.k3], time_scale: dim.r1 })
}
