//! Standalone SVG plots: curve projections and log-log series.

use std::fmt::Write;

use binormal_core::fit::RateFit;
use binormal_core::hasimoto::Vec3;

use crate::error::{RunError, RunResult};

const W: f64 = 360.0;
const H: f64 = 300.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Drops interior points that lie on the segment joining their neighbours.
fn simplify(pts: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let scale = pts.iter().fold(1e-300f64, |m, p| m.max(p.0.abs()).max(p.1.abs()));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    for &p in pts {
        while out.len() >= 2 {
            let (a, b) = (out[out.len() - 2], out[out.len() - 1]);
            let cross = (b.0 - a.0) * (p.1 - a.1) - (b.1 - a.1) * (p.0 - a.0);
            let forward = (b.0 - a.0) * (p.0 - b.0) + (b.1 - a.1) * (p.1 - b.1) >= 0.0;
            if cross.abs() <= 1e-12 * scale * scale && forward {
                out.pop();
            } else {
                break;
            }
        }
        out.push(p);
    }
    out
}

struct Frame {
    x0: f64,
    y0: f64,
    sx: f64,
    sy: f64,
    left: f64,
}

impl Frame {
    fn new(pts: impl Iterator<Item = (f64, f64)> + Clone, left: f64, equal: bool) -> Self {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for (x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        let span = |a: f64, b: f64| if b - a > 1e-12 { b - a } else { 1.0 };
        let (mut sx, mut sy) = ((W - 2.0 * PAD) / span(x0, x1), (H - 2.0 * PAD) / span(y0, y1));
        if equal {
            let s = sx.min(sy);
            sx = s;
            sy = s;
        }
        Self { x0, y0, sx, sy, left }
    }

    fn map(&self, p: (f64, f64)) -> (f64, f64) {
        (self.left + PAD + (p.0 - self.x0) * self.sx, H - PAD - (p.1 - self.y0) * self.sy)
    }
}

fn header(width: f64, title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{H}" viewBox="0 0 {width} {H}">"#
    );
    let _ = writeln!(s, r#"<title>{}</title>"#, escape(title));
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{width}" height="{H}" fill="white"/>"#);
    s
}

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str, dashed: bool) {
    let coords: Vec<String> = pts.iter().map(|p| format!("{:.3},{:.3}", p.0, p.1)).collect();
    let dash = if dashed { r#" stroke-dasharray="4 3""# } else { "" };
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="{color}" stroke-width="1.2"{dash} points="{}"/>"#,
        coords.join(" ")
    );
}

fn label(s: &mut String, x: f64, y: f64, text: &str) {
    let _ =
        writeln!(s, r#"<text x="{x:.1}" y="{y:.1}" font-family="sans-serif" font-size="11">{}</text>"#, escape(text));
}

/// Curves projected onto the `χ1–χ2` and `χ1–χ3` planes, side by side.
pub fn curve_projections(curves: &[&[Vec3]], title: &str) -> RunResult<String> {
    if curves.is_empty() || curves.iter().any(|c| c.is_empty()) {
        return Err(RunError::Validation("no curve data to plot".into()));
    }
    let mut s = header(2.0 * W, title);
    for (panel, (axis, name)) in [(1usize, "χ1–χ2"), (2, "χ1–χ3")].into_iter().enumerate() {
        let all = curves.iter().flat_map(|c| c.iter().map(move |p| (p[0], p[axis])));
        let frame = Frame::new(all, panel as f64 * W, true);
        label(&mut s, panel as f64 * W + PAD, 20.0, name);
        for (i, c) in curves.iter().enumerate() {
            let raw: Vec<(f64, f64)> = c.iter().map(|p| (p[0], p[axis])).collect();
            let pts: Vec<(f64, f64)> = simplify(&raw).into_iter().map(|p| frame.map(p)).collect();
            polyline(&mut s, &pts, COLORS[i % COLORS.len()], false);
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub struct Series<'a> {
    pub label: &'a str,
    pub points: &'a [(f64, f64)],
    pub fit: Option<RateFit>,
}

/// Log-log plot; non-positive values are skipped, fits drawn dashed over their window.
pub fn loglog(series: &[Series], title: &str, x_label: &str, y_label: &str) -> RunResult<String> {
    let logs: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().filter(|p| p.0 > 0.0 && p.1 > 0.0).map(|p| (p.0.log10(), p.1.log10())).collect())
        .collect();
    if logs.iter().all(|l| l.is_empty()) {
        return Err(RunError::Validation("no positive data to plot".into()));
    }
    let frame = Frame::new(logs.iter().flatten().copied(), 0.0, false);
    let mut s = header(W, title);
    label(&mut s, PAD, 20.0, title);
    let corner = frame.map((frame.x0, frame.y0));
    let _ = writeln!(
        s,
        r##"<path d="M{:.1},{:.1} H{:.1} M{:.1},{:.1} V{:.1}" stroke="#444" fill="none"/>"##,
        corner.0,
        corner.1,
        W - PAD,
        corner.0,
        corner.1,
        PAD
    );
    label(&mut s, W / 2.0 - 30.0, H - 8.0, &format!("log10 {x_label}"));
    label(&mut s, 4.0, PAD - 8.0, &format!("log10 {y_label}"));
    for (i, (ser, pts)) in series.iter().zip(&logs).enumerate() {
        if pts.is_empty() {
            continue;
        }
        let color = COLORS[i % COLORS.len()];
        let mapped: Vec<(f64, f64)> = pts.iter().map(|&p| frame.map(p)).collect();
        polyline(&mut s, &mapped, color, false);
        for p in &mapped {
            let _ = writeln!(s, r#"<circle cx="{:.3}" cy="{:.3}" r="2" fill="{color}"/>"#, p.0, p.1);
        }
        let mut legend = ser.label.to_string();
        if let Some(f) = ser.fit {
            let line: Vec<(f64, f64)> = [f.window.0, f.window.1]
                .iter()
                .map(|&x| frame.map((x.log10(), (f.intercept + f.exponent * x.ln()) / std::f64::consts::LN_10)))
                .collect();
            polyline(&mut s, &line, color, true);
            legend = format!("{legend} (slope {:.3})", f.exponent);
        }
        label(&mut s, W - PAD - 150.0, PAD + 14.0 * i as f64, &legend);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn straight_line_is_one_segment() {
        let pts: Vec<Vec3> = (0..50).map(|i| Vec3::new(i as f64 * 0.1, 0.0, 0.0)).collect();
        let svg = curve_projections(&[&pts], "line").unwrap();
        for line in svg.lines().filter(|l| l.starts_with("<polyline")) {
            let pts = line.split("points=\"").nth(1).unwrap();
            assert_eq!(pts.split(' ').count(), 2, "{line}");
        }
    }

    #[test]
    fn empty_input_is_refused() {
        assert!(curve_projections(&[], "x").is_err());
        assert!(loglog(&[Series { label: "a", points: &[(0.0, 1.0)], fit: None }], "t", "x", "y").is_err());
    }

    #[test]
    fn simplify_keeps_corners_and_reversals() {
        let v = simplify(&[(0.0, 0.0), (1.0, 0.0), (2.0, 0.0), (2.0, 1.0)]);
        assert_eq!(v, vec![(0.0, 0.0), (2.0, 0.0), (2.0, 1.0)]);
        let back = simplify(&[(0.0, 0.0), (2.0, 0.0), (1.0, 0.0)]);
        assert_eq!(back.len(), 3);
    }
}
