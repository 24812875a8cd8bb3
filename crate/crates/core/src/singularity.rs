//! The `t → 0` limit: coefficient asymptotics, convergence of the curves,
//! Hölder regularity of trajectories and corners of the limiting polygon.
//!
//! Line time `t` and coefficient time `τ = 1/t` are related by inversion, and
//! `A_j(t) = conj(B_j(1/t))`. As `t → 0` the coefficients rotate like
//! `A_j(t) ≈ e^{i(|α_j|²−2μ) ln t} α_j` with `μ` the conserved mass.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fit::{log_log_fit, RateFit};
use crate::flow::{FlowConfig, TrajectoryRecord};
use crate::hasimoto::{track_base_point, Anchor, CurveFamily, Vec3};
use crate::spectral::{grid_spacing, CoefficientState};
use crate::C64;

/// Points excluded from the ends of a rate fit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitWindow {
    /// Largest-`t` points dropped (transient).
    pub skip_large: usize,
    /// Smallest-`t` points dropped (extrapolation contamination).
    pub skip_small: usize,
}

impl Default for FitWindow {
    fn default() -> Self {
        Self { skip_large: 2, skip_small: 1 }
    }
}

impl FitWindow {
    /// Keeps the window of `(t, y)` pairs sorted by decreasing `t`.
    fn apply<'a>(&self, pairs: &'a [(f64, f64)]) -> &'a [(f64, f64)] {
        let end = pairs.len().saturating_sub(self.skip_small);
        if self.skip_large >= end {
            return &[];
        }
        &pairs[self.skip_large..end]
    }
}

/// `τ` values from 1 to `tau_max` with `per_band` uniform samples in every
/// dyadic band `[τ_max/2^{b+1}, τ_max/2^b]`.
pub fn alpha_ladder(tau_max: f64, per_band: usize) -> Result<Vec<f64>> {
    if !(tau_max > 1.0 && tau_max.is_finite()) {
        return Err(LabError::input("tau_max must exceed 1"));
    }
    if per_band < 2 {
        return Err(LabError::input("need at least 2 samples per band"));
    }
    let mut out = vec![tau_max];
    let mut hi = tau_max;
    while hi > 1.0 {
        let lo = (0.5 * hi).max(1.0);
        let h = (hi - lo) / per_band as f64;
        out.extend((1..=per_band).map(|i| hi - h * i as f64));
        hi = lo;
    }
    out.reverse();
    out[0] = 1.0;
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlphaOptions {
    pub window: FitWindow,
    /// Modes whose `|A_j|` never exceeds this are skipped.
    pub min_modulus: f64,
    /// Minimum samples in each of the two bands used for extrapolation.
    pub min_band_samples: usize,
}

impl Default for AlphaOptions {
    fn default() -> Self {
        Self { window: FitWindow::default(), min_modulus: 1e-12, min_band_samples: 16 }
    }
}

/// Limiting coefficients and the residual of the asymptotic rotation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlphaFit {
    pub n: usize,
    /// `alpha[j + N]` for `j ∈ [−N, N]`.
    pub alpha: Vec<C64>,
    pub mu: f64,
    /// `(t, max_j |A_j(t) − e^{i(|α_j|²−2μ) ln t} α_j|)` for every record sample.
    pub residual_series: Vec<(f64, f64)>,
    /// Per dyadic band: `(largest t in band, sup of the residual in band)`, decreasing `t`.
    pub band_envelope: Vec<(f64, f64)>,
    /// Log-log fit of the envelope over the window; `None` when it is degenerate.
    pub slope: Option<RateFit>,
    pub skipped: Vec<i64>,
}

impl AlphaFit {
    pub fn alpha_at(&self, j: i64) -> C64 {
        self.alpha[(j + self.n as i64) as usize]
    }

    pub fn max_residual(&self) -> f64 {
        self.residual_series.iter().map(|r| r.1).fold(0.0, f64::max)
    }

    /// Predicted `A_j(t)`.
    pub fn predicted(&self, j: i64, t: f64) -> C64 {
        let a = self.alpha_at(j);
        a * C64::cis((a.norm_sqr() - 2.0 * self.mu) * t.ln())
    }
}

/// Band index `b` with `τ ∈ [τ_max/2^{b+1}, τ_max/2^b]`; shared edges go to the lower band.
fn band_of(tau: f64, tau_max: f64) -> usize {
    ((tau_max / tau).log2() - 1e-9).floor().max(0.0) as usize
}

/// Fits `{α_j}` from a trajectory that runs up to `τ ≥ 100` (`t ≤ 10⁻²`).
///
/// The rotation is unwound sample by sample, averaged over the two
/// smallest-`t` dyadic bands and extrapolated linearly in `t`; band averages
/// suppress the oscillating `e^{−iτω}` corrections. The moduli are
/// extrapolated from band means of `|A_j|²` directly, which makes
/// `Σ|α_j|²` reproduce the mass.
pub fn extract_alpha(record: &TrajectoryRecord, opts: &AlphaOptions) -> Result<AlphaFit> {
    let Some(last) = record.states.last() else {
        return Err(LabError::input("empty trajectory"));
    };
    if record.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::input("trajectory must run forward in τ"));
    }
    if record.states.iter().any(|s| s.gauge_phase != 0.0) {
        return Err(LabError::input("alpha extraction needs ungauged states"));
    }
    let tau_max = last.t();
    if tau_max < 100.0 * (1.0 - 1e-12) {
        return Err(LabError::input(format!("ladder must reach t ≤ 1e-2, stops at t = {}", 1.0 / tau_max)));
    }
    let n = last.n();
    let dim = 2 * n + 1;
    let mu = record.mass_series[0];
    let mass_spread = record.mass_series.iter().map(|m| (m - mu).abs()).fold(0.0, f64::max);
    if mass_spread > 1e-6 * mu.max(1.0) {
        return Err(LabError::input(format!("trajectory mass is not conserved (spread {mass_spread:.3e})")));
    }
    let bands: Vec<usize> = record.times.iter().map(|&tau| band_of(tau, tau_max)).collect();
    let nb = bands.iter().copied().max().unwrap_or(0) + 1;
    let count = |b: usize| bands.iter().filter(|&&x| x == b).count();
    if nb < 2 || count(0) < opts.min_band_samples || count(1) < opts.min_band_samples {
        return Err(LabError::input(format!(
            "record too sparse for band averaging: need {} samples in each of the two smallest-t bands",
            opts.min_band_samples
        )));
    }

    let a_of = |i: usize, j: usize| record.states[i].coeffs()[j].conj();
    let band_mean = |b: usize, f: &dyn Fn(usize) -> C64| -> C64 {
        let idx: Vec<usize> = (0..record.len()).filter(|&i| bands[i] == b).collect();
        idx.iter().map(|&i| f(i)).sum::<C64>() / idx.len() as f64
    };
    let t_bar = |b: usize| band_mean(b, &|i| C64::new(1.0 / record.times[i], 0.0)).re;
    let (t1, t2) = (t_bar(0), t_bar(1));
    // value at t = 0 of the line through (t1, y1), (t2, y2)
    let extrapolate = |y1: C64, y2: C64| (y1 * t2 - y2 * t1) / (t2 - t1);

    let mut alpha = vec![C64::new(0.0, 0.0); dim];
    let mut skipped = Vec::new();
    for (j, slot) in alpha.iter_mut().enumerate() {
        let peak = (0..record.len()).map(|i| a_of(i, j).norm()).fold(0.0, f64::max);
        if peak <= opts.min_modulus {
            skipped.push(j as i64 - n as i64);
            continue;
        }
        let m1 = band_mean(0, &|i| C64::new(a_of(i, j).norm_sqr(), 0.0)).re;
        let m2 = band_mean(1, &|i| C64::new(a_of(i, j).norm_sqr(), 0.0)).re;
        let modulus_sq = extrapolate(C64::new(m1, 0.0), C64::new(m2, 0.0)).re.max(0.0);
        let rate = modulus_sq - 2.0 * mu;
        let unwound = |i: usize| a_of(i, j) * C64::cis(-rate * (1.0 / record.times[i]).ln());
        let w = extrapolate(band_mean(0, &unwound), band_mean(1, &unwound));
        *slot = if w.norm() > 0.0 { w / w.norm() * modulus_sq.sqrt() } else { C64::new(0.0, 0.0) };
    }

    let mut fit =
        AlphaFit { n, alpha, mu, residual_series: Vec::new(), band_envelope: Vec::new(), slope: None, skipped };
    let mut envelope = vec![(0.0f64, 0.0f64); nb];
    for (i, &tau) in record.times.iter().enumerate() {
        let t = 1.0 / tau;
        let r = (0..dim).map(|j| (a_of(i, j) - fit.predicted(j as i64 - n as i64, t)).norm()).fold(0.0, f64::max);
        fit.residual_series.push((t, r));
        let e = &mut envelope[bands[i]];
        e.0 = e.0.max(t);
        e.1 = e.1.max(r);
    }
    envelope.reverse();
    fit.slope = windowed_fit(opts.window.apply(&envelope));
    fit.band_envelope = envelope;
    Ok(fit)
}

/// Log-log fit of `(t, y)` pairs; `None` with fewer than 3 positive values.
fn windowed_fit(pairs: &[(f64, f64)]) -> Option<RateFit> {
    let pos: Vec<&(f64, f64)> = pairs.iter().filter(|p| p.1 > 0.0).collect();
    if pos.len() < 3 {
        return None;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = pos.iter().map(|p| (p.0, p.1)).unzip();
    log_log_fit(&x, &y).ok()
}

/// Decreasing geometric ladder from `t_max` to `t_min` with `per_octave` points per doubling.
pub fn geometric_ladder(t_max: f64, t_min: f64, per_octave: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_min < t_max && t_max <= 1.0) {
        return Err(LabError::input("ladder needs 0 < t_min < t_max ≤ 1"));
    }
    if per_octave == 0 {
        return Err(LabError::input("per_octave must be positive"));
    }
    let steps = ((t_max / t_min).log2() * per_octave as f64).ceil() as usize;
    let ratio = (t_min / t_max).powf(1.0 / steps as f64);
    let mut out: Vec<f64> = (0..=steps).map(|k| t_max * ratio.powi(k as i32)).collect();
    out[steps] = t_min;
    Ok(out)
}

/// Extrapolated limit curve and the convergence of the family towards it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveLimit {
    pub x_nodes: Vec<f64>,
    /// `χ(0, x_m)`.
    pub limit: Vec<Vec3>,
    /// `(t, sup_x |χ(t, ·) − χ(0, ·)|)` in ladder order.
    pub distances: Vec<(f64, f64)>,
    /// `None` when every distance vanishes.
    pub fit: Option<RateFit>,
    /// Set when the distances fail to decrease with `t` by more than 5 %.
    pub unreliable: bool,
}

/// Richardson in `√t` through the two smallest ladder times.
pub fn curve_limit(curves: &CurveFamily, window: &FitWindow) -> Result<CurveLimit> {
    let times = &curves.times;
    let k = times.len();
    if k < 5 {
        return Err(LabError::input("curve limit needs at least 5 ladder times"));
    }
    if times.windows(2).any(|w| w[1] >= w[0]) {
        return Err(LabError::input("ladder must be strictly decreasing"));
    }
    if times[0] / times[k - 1] < 100.0 * (1.0 - 1e-12) {
        return Err(LabError::input("ladder must span at least two decades"));
    }
    let (s1, s2) = (times[k - 2].sqrt(), times[k - 1].sqrt());
    let limit: Vec<Vec3> = curves.points[k - 2]
        .iter()
        .zip(&curves.points[k - 1])
        .map(|(p1, p2)| (p2 * s1 - p1 * s2) / (s1 - s2))
        .collect();
    let distances: Vec<(f64, f64)> = times
        .iter()
        .zip(&curves.points)
        .map(|(&t, pts)| (t, pts.iter().zip(&limit).map(|(p, q)| (p - q).norm()).fold(0.0, f64::max)))
        .collect();
    let scale = limit.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let moving = distances.iter().any(|d| d.1 > 1e-13 * scale);
    let fit = if moving { windowed_fit(window.apply(&distances)) } else { None };
    let unreliable = moving && distances.windows(2).any(|w| w[1].1 > 1.05 * w[0].1);
    Ok(CurveLimit { x_nodes: curves.x_nodes.clone(), limit, distances, fit, unreliable })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderOptions {
    /// Add the `√t`-extrapolated point at `t = 0` to the samples.
    pub include_limit: bool,
    /// Smallest lag in the fit, in units of the smallest sampled time.
    pub min_lag: f64,
}

impl Default for HolderOptions {
    fn default() -> Self {
        Self { include_limit: true, min_lag: 4.0 }
    }
}

/// Modulus of continuity of a trajectory `t ↦ χ(t, x)` and its power-law fit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderFit {
    /// `(H, sup_{|s−t| ≤ H} |χ(s) − χ(t)|)` for dyadic `H`.
    pub modulus: Vec<(f64, f64)>,
    pub fit: Option<RateFit>,
    /// The trajectory does not move.
    pub constant: bool,
}

/// Hölder exponent of a sampled trajectory (at least 64 samples, any order).
pub fn holder_exponent(times: &[f64], points: &[Vec3], opts: &HolderOptions) -> Result<HolderFit> {
    if times.len() != points.len() {
        return Err(LabError::input("times and points differ in length"));
    }
    if times.len() < 64 {
        return Err(LabError::input(format!("Hölder fit needs at least 64 samples, got {}", times.len())));
    }
    if times.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
        return Err(LabError::input("sample times must be positive"));
    }
    let mut order: Vec<usize> = (0..times.len()).collect();
    order.sort_by(|&a, &b| times[a].total_cmp(&times[b]));
    let mut ts: Vec<f64> = order.iter().map(|&i| times[i]).collect();
    let mut ps: Vec<Vec3> = order.iter().map(|&i| points[i]).collect();
    if ts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::input("sample times must be distinct"));
    }
    let t_min = ts[0];
    if opts.include_limit {
        let (s1, s2) = (ts[0].sqrt(), ts[1].sqrt());
        let p0 = (ps[0] * s2 - ps[1] * s1) / (s2 - s1);
        ts.insert(0, 0.0);
        ps.insert(0, p0);
    }
    let span = ts[ts.len() - 1] - ts[0];
    let levels = (span / t_min).log2().floor() as i32;
    let mut modulus: Vec<(f64, f64)> = (0..=levels).map(|k| (t_min * 2f64.powi(k), 0.0)).collect();
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            let h = ts[j] - ts[i];
            let d = (ps[j] - ps[i]).norm();
            let first = modulus.partition_point(|m| m.0 < h * (1.0 - 1e-12));
            for m in &mut modulus[first..] {
                m.1 = m.1.max(d);
            }
        }
    }
    let scale = ps.iter().map(|p| p.norm()).fold(1.0, f64::max);
    let constant = modulus.iter().all(|m| m.1 <= 1e-14 * scale);
    let fit = if constant {
        None
    } else {
        let lo = opts.min_lag * t_min;
        let window: Vec<(f64, f64)> = modulus.iter().copied().filter(|m| m.0 >= lo && m.0 <= 0.5 * span).collect();
        windowed_fit(&window)
    };
    Ok(HolderFit { modulus, fit, constant })
}

/// Corner location for the trajectory experiments: `x = 2j` for the mode with
/// the largest `|B_j|` (lowest `|j|` on ties).
pub fn dominant_corner(state: &CoefficientState) -> f64 {
    let mut best = (0i64, -1.0f64);
    for (j, b) in state.modes() {
        let m = b.norm();
        if m > best.1 + 1e-15 || ((m - best.1).abs() <= 1e-15 && j.abs() < best.0.abs()) {
            best = (j, m);
        }
    }
    2.0 * best.0 as f64
}

/// Samples `χ(t, x0)` on a decreasing ladder by time transport alone.
pub fn corner_trajectory(
    initial: &CoefficientState,
    config: &FlowConfig,
    times: &[f64],
    x0: f64,
    substep: f64,
) -> Result<Vec<Vec3>> {
    let anchor = Anchor { x0, ..Anchor::default() };
    Ok(track_base_point(initial, config, times, &anchor, substep)?.points)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CornerOptions {
    /// Expected distance between corners.
    pub spacing: f64,
    /// Length of the one-sided tangent averages, as a fraction of `spacing`.
    pub arm: f64,
    /// Gap left on each side of a candidate before the arms start, as a fraction of `spacing`.
    pub gap: f64,
    /// Turning angles below this (radians) are ignored.
    pub min_angle: f64,
}

impl Default for CornerOptions {
    fn default() -> Self {
        Self { spacing: 2.0, arm: 0.2, gap: 0.05, min_angle: 0.02 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Corner {
    pub location: f64,
    /// `π − θ` with `θ` the interior angle.
    pub turning_angle: f64,
    pub interior_angle: f64,
}

/// Corners of a polyline sampled on a uniform grid.
///
/// Each node is scored by the angle between the chords over the arms on either
/// side; local maxima within half a spacing become corners, located at the
/// least-squares intersection of the two arm lines.
pub fn polygon_corners(x_nodes: &[f64], points: &[Vec3], opts: &CornerOptions) -> Result<Vec<Corner>> {
    if x_nodes.len() != points.len() {
        return Err(LabError::input("nodes and points differ in length"));
    }
    if !(opts.spacing > 0.0 && opts.arm > 0.0 && opts.gap >= 0.0 && opts.arm + opts.gap <= 0.5) {
        return Err(LabError::input("corner options need spacing > 0 and 0 < arm + gap ≤ 1/2"));
    }
    let n = x_nodes.len();
    if n < 3 {
        return Ok(Vec::new());
    }
    let dx = grid_spacing(x_nodes);
    let w = ((opts.arm * opts.spacing / dx).round() as usize).max(1);
    let g = (opts.gap * opts.spacing / dx).round() as usize;
    let reach = w + g;
    if n <= 2 * reach {
        return Ok(Vec::new());
    }
    let arms = |m: usize| {
        let tl = points[m - g] - points[m - reach];
        let tr = points[m + reach] - points[m + g];
        (tl, tr)
    };
    let angle = |m: usize| {
        let (tl, tr) = arms(m);
        let (a, b) = (tl.norm(), tr.norm());
        if a == 0.0 || b == 0.0 {
            return 0.0;
        }
        (tl.dot(&tr) / (a * b)).clamp(-1.0, 1.0).acos()
    };
    let scores: Vec<f64> = (0..n).map(|m| if m >= reach && m + reach < n { angle(m) } else { 0.0 }).collect();
    let half = ((0.5 * opts.spacing / dx).floor() as usize).max(1);
    let mut out = Vec::new();
    for m in reach..n - reach {
        let s = scores[m];
        if s < opts.min_angle {
            continue;
        }
        let lo = m.saturating_sub(half);
        let hi = (m + half).min(n - 1);
        // strict maximum to the left, non-strict to the right: one winner per plateau
        if (lo..m).any(|i| scores[i] >= s) || (m + 1..=hi).any(|i| scores[i] > s) {
            continue;
        }
        let (tl, tr) = arms(m);
        let (tl, tr) = (tl.normalize(), tr.normalize());
        let (xl, xr) = (x_nodes[m - g], x_nodes[m + g]);
        // p_c = p_L + (x_c − x_L) T_L = p_R − (x_R − x_c) T_R, solved in least squares for x_c
        let rhs = points[m + g] - points[m - g] + tl * xl - tr * xr;
        let d = tl - tr;
        let location = if d.norm_squared() > 0.0 { d.dot(&rhs) / d.norm_squared() } else { x_nodes[m] };
        let turning = tl.dot(&tr).clamp(-1.0, 1.0).acos();
        out.push(Corner { location, turning_angle: turning, interior_angle: std::f64::consts::PI - turning });
    }
    Ok(out)
}
