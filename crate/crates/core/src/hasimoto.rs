//! From coefficients to filaments: the NLS field `u(t, x)`, parallel-frame
//! transport in space and time, and reconstruction of binormal-flow curves.
//!
//! Frames are stored as 3×3 matrices whose rows are `(T, e1, e2)`. In space
//! they obey `∂_x F = Γ F`, in time `∂_t F = Ω F`, with `Γ, Ω` antisymmetric
//! and built from the filament function `ψ = √2 u`. Both are stepped with the
//! fourth-order Magnus integrator, so every step is an exact rotation.

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::flow::{FlowConfig, Propagator, TrajectoryRecord};
use crate::ode::DenseStep;
use crate::spectral::{check_uniform, grid_spacing, CoefficientState};
use crate::stencil::{fornberg, window_start};
use crate::{par, C64};

pub type Vec3 = Vector3<f64>;
pub type Frame = Matrix3<f64>;

/// Scaling between the NLS solution and the filament function.
pub const FILAMENT_SCALE: f64 = std::f64::consts::SQRT_2;

const SQRT3: f64 = 1.732_050_807_568_877_2;
const GAUSS1: f64 = 0.5 - SQRT3 / 6.0;
const GAUSS2: f64 = 0.5 + SQRT3 / 6.0;

pub fn frame_from_rows(t: Vec3, e1: Vec3, e2: Vec3) -> Frame {
    Frame::from_rows(&[t.transpose(), e1.transpose(), e2.transpose()])
}

pub fn row(f: &Frame, i: usize) -> Vec3 {
    f.row(i).transpose()
}

/// `max |F Fᵀ − I|` entrywise.
pub fn orthonormality_defect(f: &Frame) -> f64 {
    (f * f.transpose() - Frame::identity()).abs().max()
}

pub fn is_orthonormal_right_handed(f: &Frame, tol: f64) -> bool {
    orthonormality_defect(f) <= tol && f.determinant() > 0.0
}

/// `exp(K)` for antisymmetric `K`.
fn skew_exp(k: &Matrix3<f64>) -> Matrix3<f64> {
    let w = Vec3::new(-k[(1, 2)], k[(0, 2)], -k[(0, 1)]);
    *Rotation3::from_scaled_axis(w).matrix()
}

fn magnus4(f: &Frame, a1: &Matrix3<f64>, a2: &Matrix3<f64>, h: f64) -> Frame {
    let comm = a2 * a1 - a1 * a2;
    let omega = (a1 + a2) * (0.5 * h) + comm * (SQRT3 / 12.0 * h * h);
    skew_exp(&omega) * f
}

/// Space generator `Γ(ψ)`.
pub fn gamma_generator(psi: C64) -> Matrix3<f64> {
    let (a, b) = (psi.re, psi.im);
    Matrix3::new(0.0, a, b, -a, 0.0, 0.0, -b, 0.0, 0.0)
}

/// Time generator `Ω(ψ, ψ_x)`.
pub fn omega_generator(psi: C64, psi_x: C64) -> Matrix3<f64> {
    let h = 0.5 * psi.norm_sqr();
    Matrix3::new(0.0, -psi_x.im, psi_x.re, psi_x.im, 0.0, -h, -psi_x.re, h, 0.0)
}

/// `∂_t χ = Im(conj(ψ)(e1 + i e2)) = Re ψ · e2 − Im ψ · e1`.
fn chi_velocity(f: &Frame, psi: C64) -> Vec3 {
    row(f, 2) * psi.re - row(f, 1) * psi.im
}

/// Closed-form field `amp · t^{−1/2} Σ_j B_j e^{i(x−2j)²/(4t)}` with `B_j = B_j(1/t)`.
#[derive(Clone, Debug)]
pub struct AnsatzField {
    t: f64,
    centers: Vec<f64>,
    coeffs: Vec<C64>,
    amp: f64,
    coeff_l1: f64,
}

impl AnsatzField {
    /// `amp = 1` gives `u`, `amp = √2` the filament function.
    pub fn new(state: &CoefficientState, t: f64, amp: f64) -> Result<Self> {
        if !(t > 0.0 && t <= 1.0) {
            return Err(LabError::input(format!("line time must lie in (0, 1], got {t}")));
        }
        if (state.t() * t - 1.0).abs() > 1e-9 {
            return Err(LabError::input(format!("state is at τ = {} but t = {t} needs τ = {}", state.t(), 1.0 / t)));
        }
        let (centers, coeffs): (Vec<f64>, Vec<C64>) =
            state.modes().filter(|(_, b)| *b != C64::new(0.0, 0.0)).map(|(j, b)| (2.0 * j as f64, b)).unzip();
        let coeff_l1 = coeffs.iter().map(|b| b.norm()).sum();
        Ok(Self { t, centers, coeffs, amp, coeff_l1 })
    }

    pub fn nls(state: &CoefficientState, t: f64) -> Result<Self> {
        Self::new(state, t, 1.0)
    }

    pub fn filament(state: &CoefficientState, t: f64) -> Result<Self> {
        Self::new(state, t, FILAMENT_SCALE)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    fn prefactor(&self) -> f64 {
        self.amp / self.t.sqrt()
    }

    pub fn value(&self, x: f64) -> C64 {
        let q = 0.25 / self.t;
        let s: C64 = self.centers.iter().zip(&self.coeffs).map(|(c, b)| b * C64::cis((x - c).powi(2) * q)).sum();
        s * self.prefactor()
    }

    /// `(f, ∂_x f)`.
    pub fn value_dx(&self, x: f64) -> (C64, C64) {
        let q = 0.25 / self.t;
        let mut v = C64::new(0.0, 0.0);
        let mut d = C64::new(0.0, 0.0);
        for (c, b) in self.centers.iter().zip(&self.coeffs) {
            let y = x - c;
            let e = b * C64::cis(y * y * q);
            v += e;
            d += e * C64::new(0.0, 2.0 * y * q);
        }
        (v * self.prefactor(), d * self.prefactor())
    }

    /// `∂_xx f`.
    pub fn value_dxx(&self, x: f64) -> C64 {
        let q = 0.25 / self.t;
        let mut d2 = C64::new(0.0, 0.0);
        for (c, b) in self.centers.iter().zip(&self.coeffs) {
            let y = x - c;
            let e = b * C64::cis(y * y * q);
            d2 += e * C64::new(-(2.0 * y * q).powi(2), 2.0 * q);
        }
        d2 * self.prefactor()
    }
}

/// Pointwise access to a filament function at a fixed time.
pub trait FilamentSource: Sync {
    fn psi(&self, x: f64) -> C64;
    /// Bound on the rate at which the frame generator varies on `[a, b]`.
    fn rate(&self, a: f64, b: f64) -> f64;
}

impl FilamentSource for AnsatzField {
    fn psi(&self, x: f64) -> C64 {
        self.value(x)
    }

    fn rate(&self, a: f64, b: f64) -> f64 {
        let phase = self.centers.iter().map(|c| (a - c).abs().max((b - c).abs())).fold(0.0, f64::max) / (2.0 * self.t);
        phase + self.prefactor() * self.coeff_l1
    }
}

/// The NLS solution sampled on a uniform grid at a fixed time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilamentSample {
    pub t: f64,
    pub x_nodes: Vec<f64>,
    pub u_values: Vec<C64>,
}

impl FilamentSample {
    pub fn new(t: f64, x_nodes: Vec<f64>, u_values: Vec<C64>) -> Result<Self> {
        if !(t > 0.0) {
            return Err(LabError::input("sample time must be positive"));
        }
        if x_nodes.len() != u_values.len() || x_nodes.is_empty() {
            return Err(LabError::input("sample needs one value per node"));
        }
        check_uniform(&x_nodes)?;
        Ok(Self { t, x_nodes, u_values })
    }

    /// Cubic Lagrange interpolation, clamped to the grid.
    fn interpolate(&self, x: f64) -> C64 {
        let n = self.x_nodes.len();
        let h = grid_spacing(&self.x_nodes);
        let s = ((x - self.x_nodes[0]) / h).clamp(0.0, (n - 1) as f64);
        let i = (s.floor() as usize).min(n - 2);
        let start = i.saturating_sub(1).min(n - 4);
        let p = s - start as f64;
        let mut acc = C64::new(0.0, 0.0);
        for a in 0..4 {
            let mut w = 1.0;
            for b in 0..4 {
                if a != b {
                    w *= (p - b as f64) / (a as f64 - b as f64);
                }
            }
            acc += self.u_values[start + a] * w;
        }
        acc
    }
}

impl FilamentSource for FilamentSample {
    fn psi(&self, x: f64) -> C64 {
        self.interpolate(x)
    }

    fn rate(&self, a: f64, b: f64) -> f64 {
        let h = grid_spacing(&self.x_nodes);
        let m = 0.5 * (a + b);
        let peak = [a, m, b].iter().map(|&x| self.interpolate(x).norm()).fold(0.0, f64::max);
        peak + 1.0 / h
    }
}

/// `u(t, x_m) = t^{−1/2} Σ_j B_j(1/t) e^{i(x_m − 2j)²/(4t)}`.
pub fn u_from_coefficients(state: &CoefficientState, t: f64, grid: &[f64]) -> Result<FilamentSample> {
    let field = AnsatzField::nls(state, t)?;
    let values = par::map_slice(grid, |&x| field.value(x));
    FilamentSample::new(t, grid.to_vec(), values)
}

/// Normalized sup-norm of `i u_t + u_xx + |u|² u` at the middle of three
/// coefficient states, with a three-point time difference and exact `u_xx`.
pub fn nls_residual(states: &[CoefficientState; 3], grid: &[f64]) -> Result<f64> {
    let ts: Vec<f64> = states.iter().map(|s| 1.0 / s.t()).collect();
    if !(ts[0] > ts[1] && ts[1] > ts[2]) && !(ts[0] < ts[1] && ts[1] < ts[2]) {
        return Err(LabError::input("residual needs three distinct ordered times"));
    }
    let fields: Vec<AnsatzField> =
        states.iter().zip(&ts).map(|(s, &t)| AnsatzField::nls(s, t)).collect::<Result<_>>()?;
    let w = fornberg(ts[1], &ts, 1);
    let mut worst = 0.0f64;
    let mut peak = 0.0f64;
    for &x in grid {
        let u = fields[1].value(x);
        let ut: C64 = fields.iter().zip(&w).map(|(f, w)| f.value(x) * *w).sum();
        let r = C64::new(0.0, 1.0) * ut + fields[1].value_dxx(x) + u * u.norm_sqr();
        worst = worst.max(r.norm());
        peak = peak.max(u.norm());
    }
    Ok(if peak == 0.0 { 0.0 } else { worst / peak.powi(3) })
}

/// Triads along a spatial grid at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameField {
    pub t: f64,
    pub x_nodes: Vec<f64>,
    pub frames: Vec<Frame>,
}

impl FrameField {
    pub fn tangent(&self, m: usize) -> Vec3 {
        row(&self.frames[m], 0)
    }

    pub fn max_orthonormality_defect(&self) -> f64 {
        self.frames.iter().map(orthonormality_defect).fold(0.0, f64::max)
    }

    pub fn all_right_handed(&self) -> bool {
        self.frames.iter().all(|f| f.determinant() > 0.0)
    }
}

fn check_init(init: &Frame) -> Result<()> {
    if !is_orthonormal_right_handed(init, 1e-9) {
        return Err(LabError::input("initial triad must be orthonormal and right-handed"));
    }
    Ok(())
}

/// Frames and curve points over a grid at one time.
struct SpaceSlice {
    frames: Vec<Frame>,
    points: Vec<Vec3>,
}

/// Transports `(F, χ)` from `x0` to every node; `c` bounds `rate · substep`.
fn transport_space<S: FilamentSource + ?Sized>(
    src: &S,
    nodes: &[f64],
    x0: f64,
    init: &Frame,
    chi0: Vec3,
    c: f64,
) -> SpaceSlice {
    let n = nodes.len();
    let mut frames = vec![Frame::zeros(); n];
    let mut points = vec![Vec3::zeros(); n];
    let split = nodes.partition_point(|&x| x < x0);
    let mut sweep = |order: &mut dyn Iterator<Item = usize>| {
        let (mut x, mut f, mut chi) = (x0, *init, chi0);
        let mut psi = src.psi(x);
        for m in order {
            let target = nodes[m];
            let span = target - x;
            let rate = src.rate(x.min(target), x.max(target));
            let steps = ((span.abs() * rate / c).ceil() as usize).max(1);
            let h = span / steps as f64;
            for s in 0..steps {
                let xa = x + h * s as f64;
                let xb = if s + 1 == steps { target } else { xa + h };
                let a1 = gamma_generator(src.psi(xa + GAUSS1 * h));
                let a2 = gamma_generator(src.psi(xa + GAUSS2 * h));
                let dt0 = row(&f, 1) * psi.re + row(&f, 2) * psi.im;
                let f1 = magnus4(&f, &a1, &a2, h);
                let psi1 = src.psi(xb);
                let dt1 = row(&f1, 1) * psi1.re + row(&f1, 2) * psi1.im;
                chi += (row(&f, 0) + row(&f1, 0)) * (0.5 * h) + (dt0 - dt1) * (h * h / 12.0);
                f = f1;
                psi = psi1;
            }
            x = target;
            frames[m] = f;
            points[m] = chi;
        }
    };
    sweep(&mut (split..n));
    sweep(&mut (0..split).rev());
    SpaceSlice { frames, points }
}

/// Parallel frame along `u.x_nodes`, using the sample values as the filament function.
pub fn frame_transport_x(u: &FilamentSample, x0: f64, init: &Frame) -> Result<FrameField> {
    check_init(init)?;
    if u.x_nodes.len() < 4 {
        return Err(LabError::input("frame transport needs at least 4 nodes"));
    }
    let (lo, hi) = (u.x_nodes[0], u.x_nodes[u.x_nodes.len() - 1]);
    if !(lo..=hi).contains(&x0) {
        return Err(LabError::input(format!("x0 = {x0} outside the grid [{lo}, {hi}]")));
    }
    let slice = transport_space(u, &u.x_nodes, x0, init, Vec3::zeros(), 0.05);
    Ok(FrameField { t: u.t, x_nodes: u.x_nodes.clone(), frames: slice.frames })
}

/// One sample of the filament function and its slope at the base point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseSample {
    pub t: f64,
    pub psi: C64,
    pub psi_x: C64,
}

/// Time transport from a sampled series (`∂_t F = Ω F`), midpoint exponential
/// between samples. Returns one triad per sample, the first equal to `init`.
pub fn frame_evolve_t(series: &[BaseSample], init: &Frame) -> Result<Vec<Frame>> {
    check_init(init)?;
    let mut out = Vec::with_capacity(series.len());
    let mut f = *init;
    for (i, s) in series.iter().enumerate() {
        if i > 0 {
            let p = &series[i - 1];
            let h = s.t - p.t;
            let mid = omega_generator(0.5 * (p.psi + s.psi), 0.5 * (p.psi_x + s.psi_x));
            f = skew_exp(&(mid * h)) * f;
        }
        out.push(f);
    }
    Ok(out)
}

/// Base point, time and initial frame of a reconstruction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Anchor {
    pub t0: f64,
    pub x0: f64,
    pub point: [f64; 3],
    /// Rows `T, e1, e2`.
    pub basis: [[f64; 3]; 3],
}

impl Default for Anchor {
    fn default() -> Self {
        Self { t0: 1.0, x0: 0.0, point: [0.0; 3], basis: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]] }
    }
}

impl Anchor {
    pub fn frame(&self) -> Frame {
        let r = |i: usize| Vec3::from(self.basis[i]);
        frame_from_rows(r(0), r(1), r(2))
    }

    pub fn base_point(&self) -> Vec3 {
        Vec3::from(self.point)
    }

    /// Same anchor with the basis replaced by `R · basis` rows.
    pub fn rotated(&self, rot: &Matrix3<f64>) -> Self {
        let f = self.frame() * rot.transpose();
        let mut out = self.clone();
        for i in 0..3 {
            for j in 0..3 {
                out.basis[i][j] = f[(i, j)];
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructOptions {
    /// Product of substep length and local generator rate.
    pub substep: f64,
    pub keep_frames: bool,
}

impl Default for ReconstructOptions {
    fn default() -> Self {
        Self { substep: 0.05, keep_frames: false }
    }
}

/// Triad, point and coefficients at the base point along a time ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseTrack {
    pub x0: f64,
    pub times: Vec<f64>,
    pub frames: Vec<Frame>,
    pub points: Vec<Vec3>,
    pub states: Vec<CoefficientState>,
}

struct TimeTransport {
    x0: f64,
    c: f64,
    frame: Frame,
    chi: Vec3,
    tau: f64,
    buf: Vec<C64>,
}

impl TimeTransport {
    /// `(ψ, ψ_x)` at `(1/τ, x0)` from raw coefficients.
    fn psi_at(&self, coeffs: &[C64], tau: f64) -> (C64, C64) {
        let n = (coeffs.len() / 2) as i64;
        let pre = FILAMENT_SCALE * tau.sqrt();
        let mut v = C64::new(0.0, 0.0);
        let mut d = C64::new(0.0, 0.0);
        for (i, b) in coeffs.iter().enumerate() {
            if *b == C64::new(0.0, 0.0) {
                continue;
            }
            let y = self.x0 - 2.0 * (i as i64 - n) as f64;
            let e = b * C64::cis(0.25 * tau * y * y);
            v += e;
            d += e * C64::new(0.0, 0.5 * tau * y);
        }
        (v * pre, d * pre)
    }

    fn eval(&mut self, step: &DenseStep, tau: f64) -> (C64, C64) {
        step.eval_into(tau, &mut self.buf);
        let coeffs = std::mem::take(&mut self.buf);
        let r = self.psi_at(&coeffs, tau);
        self.buf = coeffs;
        r
    }

    /// `d/dτ` generator, `−Ω(1/τ)/τ²`.
    fn generator(psi: (C64, C64), tau: f64) -> Matrix3<f64> {
        omega_generator(psi.0, psi.1) * (-1.0 / (tau * tau))
    }

    fn velocity(f: &Frame, psi: C64, tau: f64) -> Vec3 {
        chi_velocity(f, psi) * (-1.0 / (tau * tau))
    }

    /// Integrates over the dense step up to `tau_end` (inside the step).
    fn advance(&mut self, step: &DenseStep, tau_end: f64) {
        let span = tau_end - self.tau;
        if span == 0.0 {
            return;
        }
        let n = (step.dim() / 2) as f64;
        let reach = (self.x0.abs() + 2.0 * n).powi(2) / 4.0;
        let start = self.eval(step, self.tau);
        let g = Self::generator(start, self.tau).abs().max();
        let rate = reach + g + 1.0;
        let steps = ((span.abs() * rate / self.c).ceil() as usize).max(1);
        let h = span / steps as f64;
        let mut psi0 = start.0;
        for s in 0..steps {
            let ta = self.tau + h * s as f64;
            let tb = if s + 1 == steps { tau_end } else { ta + h };
            let hh = 0.5 * (tb - ta);
            let tm = ta + hh;
            let q1 = self.eval(step, ta + GAUSS1 * hh);
            let q2 = self.eval(step, ta + GAUSS2 * hh);
            let fm = magnus4(
                &self.frame,
                &Self::generator(q1, ta + GAUSS1 * hh),
                &Self::generator(q2, ta + GAUSS2 * hh),
                hh,
            );
            let q3 = self.eval(step, tm + GAUSS1 * hh);
            let q4 = self.eval(step, tm + GAUSS2 * hh);
            let f1 = magnus4(&fm, &Self::generator(q3, tm + GAUSS1 * hh), &Self::generator(q4, tm + GAUSS2 * hh), hh);
            let pm = self.eval(step, tm).0;
            let p1 = self.eval(step, tb).0;
            let v0 = Self::velocity(&self.frame, psi0, ta);
            let vm = Self::velocity(&fm, pm, tm);
            let v1 = Self::velocity(&f1, p1, tb);
            self.chi += (v0 + vm * 4.0 + v1) * (2.0 * hh / 6.0);
            self.frame = f1;
            psi0 = p1;
        }
        self.tau = tau_end;
    }
}

fn check_ladder(times: &[f64]) -> Result<()> {
    if times.is_empty() {
        return Err(LabError::input("empty time ladder"));
    }
    if times.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(LabError::input("ladder times must lie in (0, 1]"));
    }
    if times.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::input("ladder must be strictly decreasing"));
    }
    Ok(())
}

/// Evolves from `initial` (at `τ ≤ 1/t0`) and transports the frame and the
/// point at `x0` down the decreasing `times` ladder (all `≤ t0`).
pub fn track_base_point(
    initial: &CoefficientState,
    config: &FlowConfig,
    times: &[f64],
    anchor: &Anchor,
    substep: f64,
) -> Result<BaseTrack> {
    check_ladder(times)?;
    check_init(&anchor.frame())?;
    if times[0] > anchor.t0 {
        return Err(LabError::input("ladder starts above the anchor time"));
    }
    let tau0 = 1.0 / anchor.t0;
    if initial.t() > tau0 * (1.0 + 1e-12) {
        return Err(LabError::input("initial state lies past the anchor time"));
    }
    let mut prop = Propagator::new(initial, config)?;
    if prop.t() < tau0 {
        prop.advance_to(tau0)?;
    }
    let mut tt = TimeTransport {
        x0: anchor.x0,
        c: substep,
        frame: anchor.frame(),
        chi: anchor.base_point(),
        tau: prop.t(),
        buf: vec![C64::new(0.0, 0.0); initial.len()],
    };
    let mut track = BaseTrack {
        x0: anchor.x0,
        times: Vec::with_capacity(times.len()),
        frames: Vec::with_capacity(times.len()),
        points: Vec::with_capacity(times.len()),
        states: Vec::with_capacity(times.len()),
    };
    for &t in times {
        let target = 1.0 / t;
        while prop.t() < target {
            let step = prop.step(target)?;
            tt.advance(&step, step.t1());
        }
        track.times.push(t);
        track.frames.push(tt.frame);
        track.points.push(tt.chi);
        track.states.push(prop.state());
    }
    Ok(track)
}

/// Reconstructed curves `χ(t, x)` on a ladder of times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveFamily {
    pub times: Vec<f64>,
    pub x_nodes: Vec<f64>,
    /// `points[i][m] = χ(times[i], x_nodes[m])`.
    pub points: Vec<Vec<Vec3>>,
    pub tangents: Vec<Vec<Vec3>>,
    pub frames: Option<Vec<FrameField>>,
    pub anchor: Anchor,
    pub base: BaseTrack,
    pub max_orthonormality_defect: f64,
}

impl CurveFamily {
    /// `max | |∂_x χ| − 1 |` from a 7-point difference of the stored points.
    pub fn arclength_defect(&self) -> f64 {
        let dx = grid_spacing(&self.x_nodes);
        self.points.iter().map(|p| arclength_defect(p, dx)).fold(0.0, f64::max)
    }

    /// `max | |T| − 1 |` over the transported tangents.
    pub fn tangent_norm_defect(&self) -> f64 {
        self.tangents.iter().flatten().map(|t| (t.norm() - 1.0).abs()).fold(0.0, f64::max)
    }

    pub fn slice(&self, i: usize) -> &[Vec3] {
        &self.points[i]
    }
}

/// Rebuilds the curves for `times` from the trajectory's initial state.
///
/// The ladder must lie inside the τ-range covered by `record`; the flow is
/// re-integrated so the time transport at `x0` sees the continuous solution.
pub fn reconstruct_curve(
    record: &TrajectoryRecord,
    config: &FlowConfig,
    times: &[f64],
    grid: &[f64],
    anchor: &Anchor,
    opts: &ReconstructOptions,
) -> Result<CurveFamily> {
    let Some(first) = record.states.first() else {
        return Err(LabError::input("empty trajectory"));
    };
    check_ladder(times)?;
    let (lo, hi) = (record.times[0], record.times[record.times.len() - 1]);
    let covered = |t: f64| {
        let tau = 1.0 / t;
        tau >= lo * (1.0 - 1e-12) && tau <= hi * (1.0 + 1e-12)
    };
    if !times.iter().all(|&t| covered(t)) || !covered(anchor.t0) {
        return Err(LabError::input(format!("ladder needs τ outside the trajectory range [{lo}, {hi}]")));
    }
    reconstruct_from_state(first, config, times, grid, anchor, opts)
}

/// [`reconstruct_curve`] starting directly from a coefficient state.
pub fn reconstruct_from_state(
    initial: &CoefficientState,
    config: &FlowConfig,
    times: &[f64],
    grid: &[f64],
    anchor: &Anchor,
    opts: &ReconstructOptions,
) -> Result<CurveFamily> {
    check_uniform(grid)?;
    if grid.len() < 2 {
        return Err(LabError::input("curve grid needs at least two nodes"));
    }
    if !(opts.substep > 0.0 && opts.substep <= 1.0) {
        return Err(LabError::input("substep must lie in (0, 1]"));
    }
    let base = track_base_point(initial, config, times, anchor, opts.substep)?;
    let slices = par::try_map_indexed(times.len(), |i| -> Result<SpaceSlice> {
        let field = AnsatzField::filament(&base.states[i], times[i])?;
        Ok(transport_space(&field, grid, anchor.x0, &base.frames[i], base.points[i], opts.substep))
    })?;
    let mut defect = base.frames.iter().map(orthonormality_defect).fold(0.0, f64::max);
    let mut points = Vec::with_capacity(times.len());
    let mut tangents = Vec::with_capacity(times.len());
    let mut frames = opts.keep_frames.then(Vec::new);
    for (i, s) in slices.into_iter().enumerate() {
        defect = s.frames.iter().map(orthonormality_defect).fold(defect, f64::max);
        tangents.push(s.frames.iter().map(|f| row(f, 0)).collect());
        points.push(s.points);
        if let Some(fr) = frames.as_mut() {
            fr.push(FrameField { t: times[i], x_nodes: grid.to_vec(), frames: s.frames });
        }
    }
    Ok(CurveFamily {
        times: times.to_vec(),
        x_nodes: grid.to_vec(),
        points,
        tangents,
        frames,
        anchor: anchor.clone(),
        base,
        max_orthonormality_defect: defect,
    })
}

/// 7-point (sixth-order in the interior) derivative of a vector sequence.
fn derivative(points: &[Vec3], dx: f64) -> Vec<Vec3> {
    let n = points.len();
    let width = 7.min(n);
    (0..n)
        .map(|i| {
            let s = window_start(i, n, width);
            let xs: Vec<f64> = (s..s + width).map(|j| j as f64 * dx).collect();
            let w = fornberg(i as f64 * dx, &xs, 1);
            (0..width).fold(Vec3::zeros(), |acc, k| acc + points[s + k] * w[k])
        })
        .collect()
}

/// `max | |∂_x χ| − 1 |` for a uniformly sampled curve.
pub fn arclength_defect(points: &[Vec3], dx: f64) -> f64 {
    if points.len() < 2 {
        return 0.0;
    }
    derivative(points, dx).iter().map(|d| (d.norm() - 1.0).abs()).fold(0.0, f64::max)
}

/// Filament function `⟨∂_x T, e1⟩ + i⟨∂_x T, e2⟩` of a uniformly sampled
/// arc-length curve, using a double-reflection parallel frame. Determined up
/// to a global phase.
pub fn filament_from_curve(points: &[Vec3], dx: f64) -> Result<Vec<C64>> {
    let n = points.len();
    if n < 7 {
        return Err(LabError::input("curve needs at least 7 points"));
    }
    if !(dx > 0.0) {
        return Err(LabError::input("spacing must be positive"));
    }
    let d = derivative(points, dx);
    let defect = d.iter().map(|v| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    if defect > 1e-3 {
        return Err(LabError::input(format!("curve is not arc-length parametrized (defect {defect:.3e})")));
    }
    let t: Vec<Vec3> = d.iter().map(|v| v.normalize()).collect();
    let tx = derivative(&t, dx);
    let seed = if t[0].x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let mut r = (seed - t[0] * t[0].dot(&seed)).normalize();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        if i > 0 {
            let v1 = points[i] - points[i - 1];
            let c1 = v1.dot(&v1);
            let rl = r - v1 * (2.0 / c1 * v1.dot(&r));
            let tl = t[i - 1] - v1 * (2.0 / c1 * v1.dot(&t[i - 1]));
            let v2 = t[i] - tl;
            let c2 = v2.dot(&v2);
            r = if c2 > 0.0 { rl - v2 * (2.0 / c2 * v2.dot(&rl)) } else { rl };
            r = (r - t[i] * t[i].dot(&r)).normalize();
        }
        let e2 = t[i].cross(&r);
        out.push(C64::new(tx[i].dot(&r), tx[i].dot(&e2)));
    }
    Ok(out)
}

/// `min_θ sup |a − e^{iθ} b|` with `θ` from the least-squares fit.
pub fn phase_aligned_distance(a: &[C64], b: &[C64]) -> f64 {
    let inner: C64 = a.iter().zip(b).map(|(x, y)| x * y.conj()).sum();
    let rot = if inner.norm() > 0.0 { inner / inner.norm() } else { C64::new(1.0, 0.0) };
    a.iter().zip(b).map(|(x, y)| (x - rot * y).norm()).fold(0.0, f64::max)
}

/// Sup over interior nodes and times of `|∂_t T − T ∧ T_xx|`.
pub fn compatibility_defect(ladder: &[FrameField]) -> Result<f64> {
    if ladder.len() < 3 {
        return Err(LabError::input("compatibility check needs at least 3 times"));
    }
    let nodes = &ladder[0].x_nodes;
    if nodes.len() < 5 {
        return Err(LabError::input("compatibility check needs at least 5 nodes"));
    }
    if ladder.iter().any(|f| f.x_nodes != *nodes) {
        return Err(LabError::input("frame fields must share one grid"));
    }
    let dx = grid_spacing(nodes);
    let d2 = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
    let times: Vec<f64> = ladder.iter().map(|f| f.t).collect();
    let mut worst = 0.0f64;
    for i in 1..ladder.len() - 1 {
        let w = fornberg(times[i], &times[i - 1..=i + 1], 1);
        for m in 2..nodes.len() - 2 {
            let tt = ladder[i - 1].tangent(m) * w[0] + ladder[i].tangent(m) * w[1] + ladder[i + 1].tangent(m) * w[2];
            let txx = (0..5).fold(Vec3::zeros(), |acc, k| acc + ladder[i].tangent(m + k - 2) * d2[k]) / (dx * dx);
            let r = tt - ladder[i].tangent(m).cross(&txx);
            worst = worst.max(r.norm());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spectral::linspace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn canonical() -> Frame {
        Frame::identity()
    }

    #[test]
    fn u_trivial_cases() {
        let grid = linspace(-3.0, 3.0, 13);
        let z = CoefficientState::zeros(2.0, 2).unwrap();
        assert!(u_from_coefficients(&z, 0.5, &grid).unwrap().u_values.iter().all(|v| v.norm() == 0.0));
        let b = c(0.3, -0.4);
        let s = CoefficientState::from_modes(1.0, 0, &[(0, b)]).unwrap();
        let u = u_from_coefficients(&s, 1.0, &[0.0]).unwrap();
        assert_eq!(u.u_values[0], b);
        assert!(u_from_coefficients(&s, 0.5, &[0.0]).is_err());
    }

    #[test]
    fn u_matches_pseudo_conformal_synthesis() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 3;
        let coeffs = (0..2 * n + 1).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect();
        let t = 0.2;
        let s = CoefficientState::from_coeffs(1.0 / t, coeffs).unwrap();
        let grid = linspace(-4.0, 4.0, 81);
        let u = u_from_coefficients(&s, t, &grid).unwrap();
        // v(1/t, −x/t), evaluated on the increasing mirrored grid
        let mapped: Vec<f64> = grid.iter().rev().map(|x| -x / t).collect();
        let v = crate::spectral::synthesize_v(&s, &mapped).unwrap();
        for ((x, uu), vv) in grid.iter().zip(&u.u_values).zip(v.values.iter().rev()) {
            let alt = C64::cis(x * x / (4.0 * t)) / t.sqrt() * vv;
            assert!((uu - alt).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_real_filament_rotates_in_t_e1_plane() {
        let cst = 1.3;
        let x = linspace(0.0, 3.0, 31);
        let u = FilamentSample::new(1.0, x.clone(), vec![c(cst, 0.0); 31]).unwrap();
        let ff = frame_transport_x(&u, 0.0, &canonical()).unwrap();
        for (m, xm) in x.iter().enumerate() {
            let (s, co) = (cst * xm).sin_cos();
            let f = &ff.frames[m];
            assert!((row(f, 0) - Vec3::new(co, s, 0.0)).norm() < 1e-12);
            assert!((row(f, 1) - Vec3::new(-s, co, 0.0)).norm() < 1e-12);
            assert!((row(f, 2) - Vec3::z()).norm() < 1e-12);
        }
    }

    #[test]
    fn constant_imaginary_filament_rotates_in_t_e2_plane() {
        let cst = 0.7;
        let x = linspace(-2.0, 2.0, 21);
        let u = FilamentSample::new(1.0, x.clone(), vec![c(0.0, cst); 21]).unwrap();
        let ff = frame_transport_x(&u, 0.0, &canonical()).unwrap();
        for (m, xm) in x.iter().enumerate() {
            let (s, co) = (cst * xm).sin_cos();
            assert!((ff.tangent(m) - Vec3::new(co, 0.0, s)).norm() < 1e-12);
            assert!((row(&ff.frames[m], 1) - Vec3::y()).norm() < 1e-12);
        }
        assert!(ff.max_orthonormality_defect() < 1e-12);
        assert!(ff.all_right_handed());
    }

    #[test]
    fn zero_filament_keeps_frame_constant() {
        let x = linspace(-1.0, 1.0, 11);
        let u = FilamentSample::new(1.0, x, vec![c(0.0, 0.0); 11]).unwrap();
        let rot = *Rotation3::from_euler_angles(0.3, -0.2, 1.1).matrix();
        let ff = frame_transport_x(&u, 0.25, &rot).unwrap();
        assert!(ff.frames.iter().all(|f| (f - rot).abs().max() < 1e-15));
        let bad = Frame::identity() * 2.0;
        assert!(frame_transport_x(&u, 0.0, &bad).is_err());
    }

    #[test]
    fn time_series_transport_trivial_and_stable() {
        let zero: Vec<BaseSample> =
            (0..5).map(|i| BaseSample { t: i as f64 * 0.1, psi: c(0.0, 0.0), psi_x: c(0.0, 0.0) }).collect();
        let out = frame_evolve_t(&zero, &canonical()).unwrap();
        assert!(out.iter().all(|f| *f == canonical()));
        let one = frame_evolve_t(&zero[..1], &canonical()).unwrap();
        assert_eq!(one, vec![canonical()]);
        let series: Vec<BaseSample> = (0..1000)
            .map(|i| {
                let t = i as f64 * 1e-3;
                BaseSample { t, psi: C64::cis(3.0 * t) * 2.0, psi_x: C64::cis(-t) * 5.0 }
            })
            .collect();
        let out = frame_evolve_t(&series, &canonical()).unwrap();
        let drift = out.iter().map(orthonormality_defect).fold(0.0, f64::max);
        assert!(drift < 1e-10);
    }

    #[test]
    fn zero_data_gives_static_line() {
        let s = CoefficientState::zeros(1.0, 2).unwrap();
        let grid = linspace(-2.0, 2.0, 9);
        let times = [1.0, 0.5, 0.1];
        let fam =
            reconstruct_from_state(&s, &FlowConfig::default(), &times, &grid, &Anchor::default(), &Default::default())
                .unwrap();
        for pts in &fam.points {
            for (p, x) in pts.iter().zip(&grid) {
                assert!((p - Vec3::new(*x, 0.0, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn straight_line_and_circle_filaments() {
        let dx = 0.01;
        let line: Vec<Vec3> = (0..50).map(|i| Vec3::new(0.3, 0.4, 0.0) * (i as f64 * dx) / 0.5).collect();
        let flat = filament_from_curve(&line, dx).unwrap();
        assert!(flat.iter().all(|z| z.norm() < 1e-10), "{:?}", flat[0]);
        let k = 2.0;
        let circle: Vec<Vec3> = (0..200)
            .map(|i| {
                let s = i as f64 * dx;
                Vec3::new((k * s).cos() / k, (k * s).sin() / k, 0.0)
            })
            .collect();
        let psi = filament_from_curve(&circle, dx).unwrap();
        for z in &psi[3..197] {
            assert!((z.norm() - k).abs() < 1e-8);
            assert!((z * psi[3].conj()).arg().abs() < 1e-8);
        }
        let stretched: Vec<Vec3> = line.iter().map(|p| p * 1.1).collect();
        assert!(filament_from_curve(&stretched, dx).is_err());
    }

    #[test]
    fn rotating_anchor_rotates_curves() {
        let s = CoefficientState::from_modes(1.0, 1, &[(0, c(0.4, 0.1)), (1, c(0.0, 0.2))]).unwrap();
        let grid = linspace(-3.0, 3.0, 61);
        let times = [1.0, 0.5, 0.25];
        let cfg = FlowConfig::with_tol(1e-12);
        let a = Anchor::default();
        let rot = *Rotation3::from_euler_angles(0.4, 1.0, -0.7).matrix();
        let f1 = reconstruct_from_state(&s, &cfg, &times, &grid, &a, &Default::default()).unwrap();
        let f2 = reconstruct_from_state(&s, &cfg, &times, &grid, &a.rotated(&rot), &Default::default()).unwrap();
        for (p, q) in f1.points.iter().flatten().zip(f2.points.iter().flatten()) {
            assert!((rot * p - q).norm() < 1e-9);
        }
    }
}
