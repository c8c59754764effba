//! Dormand–Prince 5(4) integrator with forced step boundaries and cubic
//! Hermite dense output.
//!
//! The right-hand side receives the `(start, end)` of the smooth interval it
//! is being evaluated on, so piecewise forcing can be frozen per interval and
//! no step ever straddles a discontinuity.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerance {
    pub abs: f64,
    pub rel: f64,
}

impl Tolerance {
    pub const fn new(abs: f64, rel: f64) -> Self {
        Self { abs, rel }
    }

    pub const fn uniform(tol: f64) -> Self {
        Self { abs: tol, rel: tol }
    }

    pub fn is_valid(&self) -> bool {
        self.abs > 0.0 && self.rel > 0.0 && self.abs.is_finite() && self.rel.is_finite()
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self::uniform(1e-9)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StepStats {
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

/// Smooth interval between two forced stops.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Span {
    pub start: f64,
    pub end: f64,
}

impl Span {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.start + self.end)
    }
}

/// Accepted steps of one integration. `slopes[i]` holds the derivative at
/// both ends of step `i` as seen from inside that step.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseSolution<const N: usize> {
    pub times: Vec<f64>,
    pub states: Vec<[f64; N]>,
    pub slopes: Vec<[[f64; N]; 2]>,
    pub stats: StepStats,
    /// Last accepted step size; used to warm-start continuations.
    pub last_step: f64,
}

impl<const N: usize> DenseSolution<N> {
    fn start(t0: f64, y0: [f64; N]) -> Self {
        Self {
            times: vec![t0],
            states: vec![y0],
            slopes: Vec::new(),
            stats: StepStats::default(),
            last_step: 0.0,
        }
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    pub fn last_state(&self) -> [f64; N] {
        *self.states.last().expect("nonempty")
    }

    /// Cubic Hermite interpolation; `t` is clamped to the solved range.
    pub fn interpolate(&self, t: f64) -> [f64; N] {
        let n = self.times.len();
        if n == 1 || t <= self.times[0] {
            return self.states[0];
        }
        if t >= self.times[n - 1] {
            return self.states[n - 1];
        }
        let i = self.times.partition_point(|&s| s <= t) - 1;
        if self.times[i] == t {
            return self.states[i];
        }
        let (t0, t1) = (self.times[i], self.times[i + 1]);
        let h = t1 - t0;
        let s = (t - t0) / h;
        let (s2, s3) = (s * s, s * s * s);
        let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
        let h10 = s3 - 2.0 * s2 + s;
        let h01 = -2.0 * s3 + 3.0 * s2;
        let h11 = s3 - s2;
        let (y0, y1) = (&self.states[i], &self.states[i + 1]);
        let [f0, f1] = &self.slopes[i];
        std::array::from_fn(|k| h00 * y0[k] + h10 * h * f0[k] + h01 * y1[k] + h11 * h * f1[k])
    }

    /// Append another solution that starts where this one ends.
    pub fn append(&mut self, other: DenseSolution<N>) {
        debug_assert_eq!(other.times[0], self.last_time());
        self.times.extend_from_slice(&other.times[1..]);
        self.states.extend_from_slice(&other.states[1..]);
        self.slopes.extend(other.slopes);
        self.stats.accepted += other.stats.accepted;
        self.stats.rejected += other.stats.rejected;
        self.stats.evaluations += other.stats.evaluations;
        self.last_step = other.last_step;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OdeFailure {
    Underflow { t: f64, h: f64 },
    Diverged { t: f64 },
}

/// Failure together with everything accepted before it.
#[derive(Debug, Clone)]
pub struct OdeError<const N: usize> {
    pub kind: OdeFailure,
    pub partial: DenseSolution<N>,
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub tol: Tolerance,
    /// Any component exceeding this magnitude is treated as blow-up.
    pub guard: f64,
    /// Warm-start step size; chosen automatically when `None`.
    pub initial_step: Option<f64>,
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
// fifth-order minus embedded fourth-order weights
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

const SAFETY: f64 = 0.9;
const MIN_FACTOR: f64 = 0.2;
const MAX_FACTOR: f64 = 5.0;

#[inline]
fn combine<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        y[i] + h * acc
    })
}

fn rms_norm<const N: usize>(v: &[f64; N], y: &[f64; N], tol: &Tolerance) -> f64 {
    let sum: f64 = (0..N)
        .map(|i| {
            let sc = tol.abs + tol.rel * y[i].abs();
            (v[i] / sc).powi(2)
        })
        .sum();
    (sum / N as f64).sqrt()
}

fn initial_step<const N: usize, F>(f: &mut F, span: Span, y0: &[f64; N], f0: &[f64; N], tol: &Tolerance) -> f64
where
    F: FnMut(&Span, f64, &[f64; N]) -> [f64; N],
{
    let d0 = rms_norm(y0, y0, tol);
    let d1 = rms_norm(f0, y0, tol);
    let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    let h0 = h0.min(span.end - span.start);
    let y1 = combine(y0, h0, &[(1.0, f0)]);
    let f1 = f(&span, span.start + h0, &y1);
    let diff: [f64; N] = std::array::from_fn(|i| f1[i] - f0[i]);
    let d2 = rms_norm(&diff, y0, tol) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Integrate `y' = f(span, t, y)` from `t0` to `tf`, never stepping across
/// any time in `stops`.
pub fn integrate<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    tf: f64,
    stops: &[f64],
    opts: &OdeOptions,
) -> Result<DenseSolution<N>, OdeError<N>>
where
    F: FnMut(&Span, f64, &[f64; N]) -> [f64; N],
{
    let mut bounds: Vec<f64> = stops.iter().copied().filter(|&s| s > t0 && s < tf).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    bounds.push(tf);

    let tol = opts.tol;
    let mut sol = DenseSolution::start(t0, y0);
    let mut t = t0;
    let mut y = y0;
    let mut h = opts.initial_step.unwrap_or(0.0);

    for &end in &bounds {
        let span = Span { start: t, end };
        let mut k1 = f(&span, t, &y);
        sol.stats.evaluations += 1;
        if h <= 0.0 {
            h = initial_step(&mut f, span, &y, &k1, &tol);
            sol.stats.evaluations += 1;
        }
        let mut last_rejected = false;
        while t < end {
            let remaining = end - t;
            let natural = h;
            let mut hit_end = false;
            if h >= remaining || remaining - h <= 1e-12 * end.abs().max(1.0) {
                h = remaining;
                hit_end = true;
            }
            if h <= 16.0 * f64::EPSILON * t.abs().max(1e-300) {
                return Err(OdeError { kind: OdeFailure::Underflow { t, h }, partial: sol });
            }

            let k2 = f(&span, t + C2 * h, &combine(&y, h, &[(A21, &k1)]));
            let k3 = f(&span, t + C3 * h, &combine(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(&span, t + C4 * h, &combine(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                &span,
                t + C5 * h,
                &combine(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let t_new = if hit_end { end } else { t + h };
            let k6 = f(
                &span,
                t_new,
                &combine(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let y_new = combine(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = f(&span, t_new, &y_new);
            sol.stats.evaluations += 6;

            let err_vec: [f64; N] = std::array::from_fn(|i| {
                h * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i])
            });
            let scale: [f64; N] = std::array::from_fn(|i| y[i].abs().max(y_new[i].abs()));
            let err = rms_norm(&err_vec, &scale, &tol);
            let err = if err.is_finite() { err } else { f64::INFINITY };

            if err <= 1.0 {
                if y_new.iter().any(|v| !v.is_finite() || v.abs() > opts.guard) {
                    return Err(OdeError { kind: OdeFailure::Diverged { t: t_new }, partial: sol });
                }
                sol.times.push(t_new);
                sol.states.push(y_new);
                sol.slopes.push([k1, k7]);
                sol.stats.accepted += 1;
                sol.last_step = h;
                t = t_new;
                y = y_new;
                k1 = k7;
                let mut factor = if err == 0.0 { MAX_FACTOR } else { SAFETY * err.powf(-0.2) };
                factor = factor.clamp(MIN_FACTOR, MAX_FACTOR);
                if last_rejected {
                    factor = factor.min(1.0);
                }
                // a step shortened to land on a stop says little about the next one
                h = if hit_end { natural.max(h * factor) } else { h * factor };
                last_rejected = false;
            } else {
                sol.stats.rejected += 1;
                let factor = if err.is_finite() {
                    (SAFETY * err.powf(-0.2)).clamp(MIN_FACTOR, 1.0)
                } else {
                    MIN_FACTOR
                };
                h *= factor;
                last_rejected = true;
            }
        }
    }
    Ok(sol)
}
