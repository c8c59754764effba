//! Static SVG renderings of trajectories and basin slices.

use std::fmt::Write;

use crate::basin::{BasinEstimate, BasinPoint, PointLabel};
use crate::sim::Trajectory;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;
const SERIES: [(&str, &str); 4] = [("x1", "#d62728"), ("x2", "#1f77b4"), ("x3", "#2ca02c"), ("u", "#9467bd")];

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{title}</text>"#, W / 2.0);
}

fn axes(out: &mut String, x: (f64, f64), y: (f64, f64), xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
    let _ = writeln!(out, r#"<text x="{x0}" y="{}" text-anchor="middle">{:.3}</text>"#, y0 + 15.0, x.0);
    let _ = writeln!(out, r#"<text x="{x1}" y="{}" text-anchor="middle">{:.3}</text>"#, y0 + 15.0, x.1);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, x0 - 4.0, y0, y.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, x0 - 4.0, y1 + 4.0, y.1);
    let _ = writeln!(out, r#"<text x="{}" y="{}" text-anchor="middle">{xlabel}</text>"#, W / 2.0, H - 12.0);
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{ylabel}</text>"#,
        H / 2.0,
        H / 2.0
    );
}

fn scale(v: f64, lo: f64, hi: f64, a: f64, b: f64) -> f64 {
    if hi > lo {
        a + (v - lo) / (hi - lo) * (b - a)
    } else {
        0.5 * (a + b)
    }
}

/// Line plot of `x1, x2, x3, u` against time.
pub fn trajectory_svg(traj: &Trajectory) -> String {
    let mut out = String::new();
    header(&mut out, "trajectory");
    let (t0, t1) = (traj.start_time(), traj.end_time());
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for s in traj.states() {
        for v in s.to_array() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if hi <= lo {
        hi = lo + 1.0;
    }
    axes(&mut out, (t0, t1), (lo, hi), "t", "state");
    for (k, (name, color)) in SERIES.iter().enumerate() {
        let mut d = String::new();
        for (i, (t, s)) in traj.times().iter().zip(traj.states()).enumerate() {
            let x = scale(*t, t0, t1, MARGIN, W - MARGIN);
            let y = scale(s.to_array()[k], lo, hi, H - MARGIN, MARGIN);
            let _ = write!(d, "{}{x:.2} {y:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = writeln!(out, r#"<path d="{}" stroke="{color}" fill="none" stroke-width="1.5" data-series="{name}"/>"#, d.trim_end());
        let ly = MARGIN + 14.0 * k as f64;
        let _ = writeln!(out, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#, W - MARGIN - 40.0, W - MARGIN - 25.0);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{name}</text>"#, W - MARGIN - 20.0, ly + 4.0);
    }
    out.push_str("</svg>\n");
    out
}

pub fn label_color(label: &PointLabel) -> &'static str {
    use crate::stability::EquilibriumId::*;
    match label {
        PointLabel::Converged(E0) => "#2ca02c",
        PointLabel::Converged(E1) => "#d62728",
        PointLabel::Converged(E2) => "#1f77b4",
        PointLabel::Converged(_) => "#ff7f0e",
        PointLabel::NoConvergence => "#7f7f7f",
        PointLabel::Diverged => "#000000",
        PointLabel::Infeasible | PointLabel::Unsolved | PointLabel::Failed => "#e377c2",
    }
}

/// Points of `estimate` on the slice nearest to `x3`: exact matches for
/// grid sampling, a band of a tenth of the domain width otherwise.
pub fn slice_points(estimate: &BasinEstimate, x3: f64) -> Vec<BasinPoint> {
    let nearest = estimate
        .points
        .iter()
        .map(|p| (p.x[2] - x3).abs())
        .fold(f64::INFINITY, f64::min);
    let band = match estimate.sampling {
        crate::basin::SamplingMode::Grid => 0.0,
        crate::basin::SamplingMode::Random { .. } => 0.1 * (estimate.domain.hi[2] - estimate.domain.lo[2]),
    };
    estimate
        .points
        .iter()
        .filter(|p| (p.x[2] - x3).abs() <= nearest.max(band))
        .copied()
        .collect()
}

/// Heat slice over `(x1, x2)`; one rect per sampled point carrying
/// `data-x1`, `data-x2` and `data-label`.
pub fn basin_slice_svg(estimate: &BasinEstimate, x3: f64) -> String {
    let pts = slice_points(estimate, x3);
    let d = &estimate.domain;
    let mut out = String::new();
    header(&mut out, &format!("basin slice near x3 = {x3}"));
    axes(&mut out, (d.lo[0], d.hi[0]), (d.lo[1], d.hi[1]), "x1", "x2");
    let k = (pts.len() as f64).sqrt().ceil().max(1.0);
    let cw = (W - 2.0 * MARGIN) / k;
    let ch = (H - 2.0 * MARGIN) / k;
    for p in &pts {
        let cx = scale(p.x[0], d.lo[0], d.hi[0], MARGIN, W - MARGIN);
        let cy = scale(p.x[1], d.lo[1], d.hi[1], H - MARGIN, MARGIN);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{cw:.2}" height="{ch:.2}" fill="{}" data-x1="{:e}" data-x2="{:e}" data-x3="{:e}" data-label="{}"/>"#,
            cx - cw / 2.0,
            cy - ch / 2.0,
            label_color(&p.label),
            p.x[0],
            p.x[1],
            p.x[2],
            p.label
        );
    }
    out.push_str("</svg>\n");
    out
}
