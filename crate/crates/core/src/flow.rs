//! The Galerkin-truncated coefficient flow `Φ^N_{τ,t}` and its diagnostics.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::ode::{DenseStep, Dopri5, Rhs, Rk4, Stepper, Tolerances};
use crate::spectral::{mass, CoefficientState};
use crate::{par, C64};

/// [`KernelChoice::Auto`] picks the direct triple sum for `N` below this.
pub const DIRECT_SUM_BELOW_N: usize = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    #[default]
    AdaptiveRk,
    /// Classical RK4 with step `max_step`.
    FixedRk4,
}

/// How the cubic sum is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    /// Direct sum for `N = 0`, dealiased transform above.
    #[default]
    Auto,
    Direct,
    Dealiased,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FlowConfig {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    pub scheme: Scheme,
    pub kernel: KernelChoice,
    /// Drop the nonlinearity; coefficients stay frozen.
    pub linear_only: bool,
    /// Galerkin projection onto these modes instead of the full `|k| ≤ N` block.
    pub support: Option<Vec<i64>>,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-10,
            max_step: 10.0,
            scheme: Scheme::AdaptiveRk,
            kernel: KernelChoice::Auto,
            linear_only: false,
            support: None,
        }
    }
}

impl FlowConfig {
    pub fn with_tol(tol: f64) -> Self {
        Self { rtol: tol, atol: tol, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.rtol) || !ok(self.atol) {
            return Err(LabError::input("rtol and atol must be positive and finite"));
        }
        if !ok(self.max_step) {
            return Err(LabError::input("max_step must be positive and finite"));
        }
        Ok(())
    }

    /// Storage mask of the support for radius `n`, `None` for the full block.
    fn mask(&self, n: usize) -> Result<Option<Vec<bool>>> {
        let Some(support) = &self.support else { return Ok(None) };
        let mut mask = vec![false; 2 * n + 1];
        for &k in support {
            if k.unsigned_abs() as usize > n {
                return Err(LabError::input(format!("support mode {k} outside |k| ≤ {n}")));
            }
            mask[(k + n as i64) as usize] = true;
        }
        Ok(Some(mask))
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances { rtol: self.rtol, atol: self.atol, max_step: self.max_step, ..Tolerances::default() }
    }
}

enum KernelImpl {
    Direct { phases: Vec<C64>, pmax: i64 },
    Dealiased { m: usize, fwd: Arc<dyn Fft<f64>>, inv: Arc<dyn Fft<f64>>, buf: Vec<C64>, scratch: Vec<C64> },
}

/// Evaluator of the cubic sum
/// `Σ_{k−j1+j2−j3=0} e^{−iτω} B_{j1} conj(B_{j2}) B_{j3}` for `|k| ≤ N`.
pub struct NonlinearKernel {
    n: usize,
    imp: KernelImpl,
}

/// Smallest grid that keeps the cubic product alias-free on `|k| ≤ N`.
pub fn dealias_grid_size(n: usize) -> usize {
    let min = 4 * n + 1;
    // prefer 2^a 3^b sizes for the transform
    let mut best = usize::MAX;
    let mut p2 = 1usize;
    while p2 < 2 * min {
        let mut p = p2;
        while p < 2 * min {
            if p >= min {
                best = best.min(p);
            }
            p *= 3;
        }
        p2 *= 2;
    }
    best
}

impl NonlinearKernel {
    pub fn new(n: usize, choice: KernelChoice) -> Self {
        let direct = match choice {
            KernelChoice::Auto => n < DIRECT_SUM_BELOW_N,
            KernelChoice::Direct => true,
            KernelChoice::Dealiased => false,
        };
        let imp = if direct {
            let pmax = 4 * (n as i64) * (n as i64);
            KernelImpl::Direct { phases: vec![C64::new(0.0, 0.0); (2 * pmax + 1) as usize], pmax }
        } else {
            let m = dealias_grid_size(n);
            let mut planner = FftPlanner::new();
            let fwd = planner.plan_fft_forward(m);
            let inv = planner.plan_fft_inverse(m);
            let scratch_len = fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len());
            KernelImpl::Dealiased {
                m,
                fwd,
                inv,
                buf: vec![C64::new(0.0, 0.0); m],
                scratch: vec![C64::new(0.0, 0.0); scratch_len],
            }
        };
        Self { n, imp }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_direct(&self) -> bool {
        matches!(self.imp, KernelImpl::Direct { .. })
    }

    /// Writes the cubic sum at time `t` into `out`.
    pub fn apply(&mut self, t: f64, b: &[C64], out: &mut [C64]) {
        let n = self.n as i64;
        debug_assert_eq!(b.len(), (2 * n + 1) as usize);
        match &mut self.imp {
            KernelImpl::Direct { phases, pmax } => {
                let pmax = *pmax;
                for (i, ph) in phases.iter_mut().enumerate() {
                    *ph = C64::cis(-2.0 * t * (i as i64 - pmax) as f64);
                }
                let bc: Vec<C64> = b.iter().map(|z| z.conj()).collect();
                for k in -n..=n {
                    let mut acc = C64::new(0.0, 0.0);
                    for j1 in -n..=n {
                        let b1 = b[(j1 + n) as usize];
                        let d = k - j1;
                        let mut inner = C64::new(0.0, 0.0);
                        // j3 = k − j1 + j2 must stay within [−N, N]
                        let lo = (-n).max(-n - d);
                        let hi = n.min(n - d);
                        for j2 in lo..=hi {
                            let j3 = d + j2;
                            let p = d * (j1 - j2);
                            inner += bc[(j2 + n) as usize] * b[(j3 + n) as usize] * phases[(p + pmax) as usize];
                        }
                        acc += b1 * inner;
                    }
                    out[(k + n) as usize] = acc;
                }
            }
            KernelImpl::Dealiased { m, fwd, inv, buf, scratch } => {
                let m = *m;
                buf.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
                for k in -n..=n {
                    let kk = (k * k) as f64;
                    buf[k.rem_euclid(m as i64) as usize] = b[(k + n) as usize] * C64::cis(t * kk);
                }
                inv.process_with_scratch(buf, scratch);
                for z in buf.iter_mut() {
                    *z *= z.norm_sqr();
                }
                fwd.process_with_scratch(buf, scratch);
                let scale = 1.0 / m as f64;
                for k in -n..=n {
                    let kk = (k * k) as f64;
                    out[(k + n) as usize] = buf[k.rem_euclid(m as i64) as usize] * C64::cis(-t * kk) * scale;
                }
            }
        }
    }
}

/// Vector field of the coefficient system, optionally renormalized.
pub struct FlowRhs {
    kernel: NonlinearKernel,
    linear_only: bool,
    mask: Option<Vec<bool>>,
    /// `Some(μ)` adds `+(2iμ/t) W`, the gauged (renormalized) dynamics.
    renorm_mu: Option<f64>,
}

impl FlowRhs {
    pub fn new(n: usize, config: &FlowConfig) -> Result<Self> {
        Ok(Self {
            kernel: NonlinearKernel::new(n, config.kernel),
            linear_only: config.linear_only,
            mask: config.mask(n)?,
            renorm_mu: None,
        })
    }

    pub fn renormalized(n: usize, config: &FlowConfig, mu: f64) -> Result<Self> {
        Ok(Self { renorm_mu: Some(mu), ..Self::new(n, config)? })
    }
}

impl Rhs for FlowRhs {
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        if self.linear_only {
            dy.iter_mut().for_each(|z| *z = C64::new(0.0, 0.0));
            return;
        }
        self.kernel.apply(t, y, dy);
        let f = C64::new(0.0, -1.0 / t);
        dy.iter_mut().for_each(|z| *z *= f);
        if let Some(mu) = self.renorm_mu {
            let g = C64::new(0.0, 2.0 * mu / t);
            for (d, w) in dy.iter_mut().zip(y) {
                *d += g * w;
            }
        }
        if let Some(mask) = &self.mask {
            for (d, &keep) in dy.iter_mut().zip(mask) {
                if !keep {
                    *d = C64::new(0.0, 0.0);
                }
            }
        }
    }
}

/// Time derivative `∂_t B` of the printed coefficient system at `state.t`.
pub fn rhs(state: &CoefficientState, config: &FlowConfig) -> Result<Vec<C64>> {
    let mut f = FlowRhs::new(state.n(), config)?;
    let mut out = vec![C64::new(0.0, 0.0); state.len()];
    f.eval(state.t(), state.coeffs(), &mut out);
    Ok(out)
}

/// Streaming integrator of the coefficient flow.
pub struct Propagator {
    stepper: Stepper<FlowRhs>,
    n: usize,
    gauged: Option<f64>,
}

impl Propagator {
    /// Integrates the printed system from an ungauged state.
    pub fn new(state: &CoefficientState, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        if state.gauge_phase != 0.0 {
            return Err(LabError::input("state is gauged; use the renormalized propagator"));
        }
        check_support(state, config)?;
        let rhs = FlowRhs::new(state.n(), config)?;
        Ok(Self { stepper: make_stepper(rhs, state, config)?, n: state.n(), gauged: None })
    }

    /// Integrates the renormalized system for a gauged state.
    pub fn renormalized(state: &CoefficientState, config: &FlowConfig) -> Result<Self> {
        config.validate()?;
        let mu = mass(state);
        check_support(state, config)?;
        let rhs = FlowRhs::renormalized(state.n(), config, mu)?;
        Ok(Self { stepper: make_stepper(rhs, state, config)?, n: state.n(), gauged: Some(mu) })
    }

    pub fn t(&self) -> f64 {
        self.stepper.t()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn steps_taken(&self) -> usize {
        self.stepper.steps_taken()
    }

    /// Current state, with `gauge_phase` set for the renormalized flow.
    pub fn state(&self) -> CoefficientState {
        self.wrap(self.stepper.t(), self.stepper.y().to_vec())
    }

    fn wrap(&self, t: f64, coeffs: Vec<C64>) -> CoefficientState {
        let mut s = CoefficientState::from_coeffs(t.max(1.0), coeffs).expect("finite state at t ≥ 1");
        if let Some(mu) = self.gauged {
            s.gauge_phase = 2.0 * mu * t.ln();
        }
        s
    }

    /// Interpolated state inside a step returned by [`Propagator::step`].
    pub fn dense_state(&self, step: &DenseStep, t: f64) -> CoefficientState {
        let y = if t == step.t1() { step.end() } else { step.eval(t) };
        self.wrap(t, y)
    }

    /// One accepted step toward `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<DenseStep> {
        if !(t_limit >= 1.0) {
            return Err(LabError::input(format!("target time {t_limit} is below 1")));
        }
        self.stepper.step(t_limit)
    }

    pub fn advance_to(&mut self, t: f64) -> Result<()> {
        while self.t() != t {
            self.step(t)?;
        }
        Ok(())
    }
}

fn check_support(state: &CoefficientState, config: &FlowConfig) -> Result<()> {
    if let Some(mask) = config.mask(state.n())? {
        if state.coeffs().iter().zip(&mask).any(|(b, &keep)| !keep && *b != C64::new(0.0, 0.0)) {
            return Err(LabError::input("state has energy outside the configured support"));
        }
    }
    Ok(())
}

fn make_stepper(rhs: FlowRhs, state: &CoefficientState, config: &FlowConfig) -> Result<Stepper<FlowRhs>> {
    let y0 = state.coeffs().to_vec();
    Ok(match config.scheme {
        Scheme::AdaptiveRk => Stepper::Adaptive(Dopri5::new(rhs, state.t(), y0, config.tolerances())?),
        Scheme::FixedRk4 => Stepper::Fixed(Rk4::new(rhs, state.t(), y0, config.max_step)?),
    })
}

fn check_target(t: f64) -> Result<()> {
    if !(t >= 1.0) || !t.is_finite() {
        return Err(LabError::input(format!("target time must be finite and ≥ 1, got {t}")));
    }
    Ok(())
}

/// `Φ^N_{state.t, t_target}(state)`; either direction.
pub fn evolve(state: &CoefficientState, t_target: f64, config: &FlowConfig) -> Result<CoefficientState> {
    check_target(t_target)?;
    let mut p = Propagator::new(state, config)?;
    p.advance_to(t_target)?;
    Ok(p.state())
}

/// Evolves a gauged state under the renormalized nonlinearity `(|w|² − 2μ) w`.
pub fn evolve_renormalized(state: &CoefficientState, t_target: f64, config: &FlowConfig) -> Result<CoefficientState> {
    check_target(t_target)?;
    let mut p = Propagator::renormalized(state, config)?;
    p.advance_to(t_target)?;
    Ok(p.state())
}

/// Sampled coefficient trajectory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRecord {
    pub times: Vec<f64>,
    pub states: Vec<CoefficientState>,
    pub mass_series: Vec<f64>,
    pub diagnostics: BTreeMap<String, Vec<f64>>,
}

impl TrajectoryRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n(&self) -> usize {
        self.states.first().map_or(0, |s| s.n())
    }

    /// State stored at time `t` (exact match up to 1e-12 relative).
    pub fn state_at(&self, t: f64) -> Option<&CoefficientState> {
        self.times.iter().position(|&s| (s - t).abs() <= 1e-12 * t.abs().max(1.0)).map(|i| &self.states[i])
    }

    pub fn max_mass_drift(&self) -> f64 {
        let Some(&m0) = self.mass_series.first() else { return 0.0 };
        self.mass_series.iter().map(|m| (m - m0).abs()).fold(0.0, f64::max)
    }
}

/// Evolves through `times` (monotone, all on one side of `state.t`) and
/// records the state at each; integration steps land on every requested time.
pub fn evolve_dense(state: &CoefficientState, times: &[f64], config: &FlowConfig) -> Result<TrajectoryRecord> {
    if times.is_empty() {
        return Err(LabError::input("no output times requested"));
    }
    for &t in times {
        check_target(t)?;
    }
    let forward = times[times.len() - 1] >= state.t();
    let monotone = times.windows(2).all(|w| if forward { w[1] > w[0] } else { w[1] < w[0] });
    let same_side = if forward { times[0] >= state.t() } else { times[0] <= state.t() };
    if !monotone || !same_side {
        return Err(LabError::input("output times must be strictly monotone and on one side of the initial time"));
    }
    let mut p = Propagator::new(state, config)?;
    let mut rec = TrajectoryRecord {
        times: Vec::with_capacity(times.len()),
        states: Vec::with_capacity(times.len()),
        mass_series: Vec::with_capacity(times.len()),
        diagnostics: BTreeMap::new(),
    };
    let mut steps = Vec::with_capacity(times.len());
    for &t in times {
        p.advance_to(t)?;
        let s = p.state();
        rec.mass_series.push(mass(&s));
        rec.times.push(t);
        rec.states.push(s);
        steps.push(p.steps_taken() as f64);
    }
    rec.diagnostics.insert("steps".into(), steps);
    Ok(rec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GaugeDirection {
    Forward,
    Backward,
}

/// Forward: `w = e^{2iμ ln t} B`, the change of unknown that removes the
/// resonant rotation of the printed system. Backward undoes the recorded
/// `gauge_phase`.
pub fn gauge(state: &CoefficientState, direction: GaugeDirection) -> CoefficientState {
    match direction {
        GaugeDirection::Forward => {
            let theta = 2.0 * mass(state) * state.t().ln();
            let mut out = state.scaled(C64::cis(theta));
            out.gauge_phase = state.gauge_phase + theta;
            out
        }
        GaugeDirection::Backward => {
            let mut out = state.scaled(C64::cis(-state.gauge_phase));
            out.gauge_phase = 0.0;
            out
        }
    }
}

/// Real coordinates `(Re B_{−N}, …, Re B_N, Im B_{−N}, …, Im B_N)`.
fn realify(c: &[C64]) -> Vec<f64> {
    c.iter().map(|z| z.re).chain(c.iter().map(|z| z.im)).collect()
}

fn complexify(x: &[f64]) -> Vec<C64> {
    let n = x.len() / 2;
    (0..n).map(|i| C64::new(x[i], x[n + i])).collect()
}

/// Central finite-difference Jacobian of the real-ified flow map.
pub fn jacobian_fd(state: &CoefficientState, t_target: f64, h: f64, config: &FlowConfig) -> Result<DMatrix<f64>> {
    if state.n() > 3 {
        return Err(LabError::Refused(format!("Jacobian of dimension {} exceeds the 14×14 cap", 2 * state.len())));
    }
    if !(1e-6..=1e-3).contains(&h) {
        return Err(LabError::input(format!("finite-difference step {h} outside [1e-6, 1e-3]")));
    }
    check_target(t_target)?;
    let dim = 2 * state.len();
    if t_target == state.t() {
        return Ok(DMatrix::identity(dim, dim));
    }
    let x0 = realify(state.coeffs());
    let image = |x: &[f64]| -> Result<Vec<f64>> {
        let s = CoefficientState::from_coeffs(state.t(), complexify(x))?;
        Ok(realify(evolve(&s, t_target, config)?.coeffs()))
    };
    let cols = par::try_map_indexed(dim, |j| -> Result<Vec<f64>> {
        let mut xp = x0.clone();
        let mut xm = x0.clone();
        xp[j] += h;
        xm[j] -= h;
        let (fp, fm) = (image(&xp)?, image(&xm)?);
        Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
    })?;
    Ok(DMatrix::from_fn(dim, dim, |i, j| cols[j][i]))
}

/// Series of `|Σ_k |k|^{2s+1}(|B_k(t)|² − |B_k(t_0)|²)|` with its bound proxy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SmoothingSeries {
    pub times: Vec<f64>,
    pub increment: Vec<f64>,
    /// `‖|D|^{s−ε} v(t_0)‖³` with `ε = 0.05`.
    pub bound_proxy: f64,
}

impl SmoothingSeries {
    /// Least-squares slope of `increment / bound_proxy` against `ln t`.
    ///
    /// The normalized series is dimensionless, so a fixed threshold means the
    /// same thing for every draw. A zero proxy (data supported on `k = 0`)
    /// has nothing to monitor and gives slope 0.
    pub fn log_t_slope(&self) -> Result<f64> {
        if self.bound_proxy == 0.0 {
            return Ok(0.0);
        }
        let x: Vec<f64> = self.times.iter().map(|t| t.ln()).collect();
        let y: Vec<f64> = self.increment.iter().map(|v| v / self.bound_proxy).collect();
        Ok(crate::fit::linear_regression(&x, &y)?.0)
    }
}

pub fn smoothing_increment(trajectory: &TrajectoryRecord, s: f64) -> Result<SmoothingSeries> {
    let Some(first) = trajectory.states.first() else {
        return Err(LabError::input("empty trajectory"));
    };
    let energy = |st: &CoefficientState, p: f64| -> Vec<f64> {
        st.modes().map(|(k, b)| (k.unsigned_abs() as f64).powf(p) * b.norm_sqr()).collect()
    };
    let base = energy(first, 2.0 * s + 1.0);
    let increment = trajectory
        .states
        .iter()
        .map(|st| {
            let e = energy(st, 2.0 * s + 1.0);
            let diff: Vec<f64> = e.iter().zip(&base).map(|(a, b)| a - b).collect();
            par::pairwise_sum(&diff).abs()
        })
        .collect();
    let eps = 0.05;
    let low: f64 = energy(first, 2.0 * (s - eps)).iter().sum();
    Ok(SmoothingSeries { times: trajectory.times.clone(), increment, bound_proxy: low.powf(1.5) })
}
