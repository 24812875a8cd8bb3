//! Gaussian measures on coefficient space and what the flow does to them.
//!
//! `γ_s` draws `B_k = g_k (1 + |k|^{2s+1})^{−1/2}` with independent standard
//! complex Gaussians `g_k`; `ρ_s` restricts `γ_s` to `mass ≤ M`. Since the
//! truncated flow preserves Lebesgue measure and the mass, the transported
//! measure has density `f(τ, v) = exp(E(v) − E(Φ_{1,τ} v))` with respect to
//! `ρ_s`, where `E(v) = Σ_k (1 + |k|^{2s+1}) |B_k|²`. [`density_log`]
//! computes `log f` as the time integral of `−dE/dλ` along the flow;
//! [`density_log_energy`] evaluates the energy difference directly.
//!
//! Every sample draws from its own ChaCha stream keyed by the master seed, a
//! purpose tag and the sample index, so batches do not depend on scheduling.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::fit::{log_log_fit, median, RateFit};
use crate::flow::{evolve, evolve_dense, FlowConfig, FlowRhs, Propagator};
use crate::hasimoto::reconstruct_from_state;
use crate::hasimoto::{Anchor, ReconstructOptions};
use crate::ode::{DenseStep, Rhs};
use crate::singularity::{
    corner_trajectory, curve_limit, dominant_corner, geometric_ladder, holder_exponent, CurveLimit, FitWindow,
    HolderFit, HolderOptions,
};
use crate::spectral::{holder_seminorm, mass, multiplier_symbol, uniform_nodes, weighted_norm, CoefficientState};
use crate::{par, GridField, C64};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureParams {
    pub s: f64,
    /// L² cutoff of `ρ_s`.
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
}

impl MeasureParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.s > 0.0 && self.s < 1.0) {
            return Err(LabError::input(format!("s must lie in (0, 1), got {}", self.s)));
        }
        if !(self.m > 0.0 && self.m.is_finite()) {
            return Err(LabError::input(format!("cutoff M must be positive, got {}", self.m)));
        }
        Ok(())
    }
}

/// Purpose tags separating the random streams of different experiments.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Gamma = 1,
    Rho = 2,
    Pushforward = 3,
    Density = 4,
    Curves = 5,
    Growth = 6,
}

const INDEX_BITS: u32 = 48;

/// Independent generator for sample `index` of stream `purpose`.
pub fn substream(seed: u64, purpose: Stream, index: u64) -> ChaCha8Rng {
    assert!(index < 1 << INDEX_BITS, "sample index out of range");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << INDEX_BITS) | index);
    rng
}

/// Standard deviation `(1 + |k|^{2s+1})^{−1/2}` of mode `k` under `γ_s`.
pub fn gamma_weight(k: i64, s: f64) -> f64 {
    multiplier_symbol(k, s).sqrt().recip()
}

/// One `γ_s` draw at `t = 1`.
pub fn draw_gamma<R: Rng>(params: &MeasureParams, rng: &mut R) -> CoefficientState {
    let n = params.n as i64;
    let coeffs = (-n..=n)
        .map(|k| {
            let h: f64 = rng.sample(StandardNormal);
            let l: f64 = rng.sample(StandardNormal);
            C64::new(h, l) * (std::f64::consts::FRAC_1_SQRT_2 * gamma_weight(k, params.s))
        })
        .collect();
    CoefficientState::from_coeffs(1.0, coeffs).expect("finite Gaussian draw")
}

/// `γ_s` draws with their cutoff flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBatch {
    pub params: MeasureParams,
    pub states: Vec<CoefficientState>,
    /// `mass ≤ M` per state.
    pub accepted: Vec<bool>,
}

impl SampleBatch {
    pub fn acceptance_rate(&self) -> f64 {
        if self.accepted.is_empty() {
            return 0.0;
        }
        self.accepted.iter().filter(|&&a| a).count() as f64 / self.accepted.len() as f64
    }

    pub fn accepted_states(&self) -> impl Iterator<Item = &CoefficientState> {
        self.states.iter().zip(&self.accepted).filter(|(_, &a)| a).map(|(s, _)| s)
    }
}

pub fn sample_gamma(params: &MeasureParams, count: usize) -> Result<SampleBatch> {
    params.validate()?;
    if count == 0 {
        return Err(LabError::input("count must be at least 1"));
    }
    let states = par::map_indexed(count, |i| draw_gamma(params, &mut substream(params.seed, Stream::Gamma, i as u64)));
    let accepted = states.iter().map(|s| mass(s) <= params.m).collect();
    Ok(SampleBatch { params: *params, states, accepted })
}

/// `ρ_s` draws by rejection from `γ_s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RhoBatch {
    pub params: MeasureParams,
    pub states: Vec<CoefficientState>,
    /// Total `γ_s` draws spent.
    pub attempts: u64,
}

impl RhoBatch {
    pub fn acceptance_rate(&self) -> f64 {
        self.states.len() as f64 / self.attempts as f64
    }
}

const MAX_ATTEMPTS: u64 = 100_000;

fn draw_rho(params: &MeasureParams, purpose: Stream, index: u64) -> Result<(CoefficientState, u64)> {
    let mut rng = substream(params.seed, purpose, index);
    for attempt in 1..=MAX_ATTEMPTS {
        let v = draw_gamma(params, &mut rng);
        if mass(&v) <= params.m {
            return Ok((v, attempt));
        }
    }
    Err(LabError::Refused(format!("cutoff M = {} accepts fewer than 1 in {MAX_ATTEMPTS} draws", params.m)))
}

fn sample_rho_stream(params: &MeasureParams, count: usize, purpose: Stream) -> Result<RhoBatch> {
    params.validate()?;
    if count == 0 {
        return Err(LabError::input("count must be at least 1"));
    }
    let draws = par::try_map_indexed(count, |i| draw_rho(params, purpose, i as u64))?;
    let attempts = draws.iter().map(|d| d.1).sum();
    Ok(RhoBatch { params: *params, states: draws.into_iter().map(|d| d.0).collect(), attempts })
}

pub fn sample_rho(params: &MeasureParams, count: usize) -> Result<RhoBatch> {
    sample_rho_stream(params, count, Stream::Rho)
}

/// Randomized filament data `a_j = g_j (1 + |j|^{2s+1})^{−1/2} e^{ij²/4}` at `t = 1`.
pub fn randomize_bf_data(params: &MeasureParams, index: u64) -> Result<CoefficientState> {
    params.validate()?;
    let mut v = draw_gamma(params, &mut substream(params.seed, Stream::Curves, index));
    let n = params.n as i64;
    for (k, b) in (-n..=n).zip(v.coeffs_mut()) {
        *b *= C64::cis((k * k) as f64 / 4.0);
    }
    Ok(v)
}

/// `E(v) = Σ_k (1 + |k|^{2s+1}) |B_k|²`.
pub fn weighted_energy(state: &CoefficientState, s: f64) -> f64 {
    let terms: Vec<f64> = state.modes().map(|(k, b)| multiplier_symbol(k, s) * b.norm_sqr()).collect();
    par::pairwise_sum(&terms)
}

/// `log f(τ, v) = E(v) − E(Φ_{1,τ} v)`.
pub fn density_log_energy(v: &CoefficientState, tau: f64, s: f64, flow: &FlowConfig) -> Result<f64> {
    check_density_input(v, s)?;
    Ok(weighted_energy(v, s) - weighted_energy(&evolve(v, tau, flow)?, s))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuadratureOptions {
    /// Absolute tolerance on `log f` over the whole range.
    pub tol: f64,
    pub max_depth: usize,
}

impl Default for QuadratureOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_depth: 40 }
    }
}

/// `log f` along an increasing `τ` grid starting at 1.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub tau_grid: Vec<f64>,
    pub log_f: Vec<f64>,
    /// Accumulated Simpson error estimate up to each `τ`.
    pub quadrature_error: Vec<f64>,
}

impl DensityEstimate {
    pub fn last(&self) -> (f64, f64) {
        (*self.log_f.last().unwrap_or(&0.0), *self.quadrature_error.last().unwrap_or(&0.0))
    }
}

fn check_density_input(v: &CoefficientState, s: f64) -> Result<()> {
    if v.t() != 1.0 {
        return Err(LabError::input(format!("density data must sit at t = 1, got t = {}", v.t())));
    }
    if !(s > 0.0 && s < 1.0) {
        return Err(LabError::input(format!("s must lie in (0, 1), got {s}")));
    }
    Ok(())
}

/// `−dE/d(ln λ)` along the flow, from the dense output of one step.
struct Integrand {
    rhs: FlowRhs,
    weights: Vec<f64>,
    b: Vec<C64>,
    db: Vec<C64>,
    evals: usize,
}

impl Integrand {
    fn eval(&mut self, step: &DenseStep, ln_lambda: f64) -> f64 {
        let lambda = ln_lambda.exp().clamp(step.t0.min(step.t1()), step.t0.max(step.t1()));
        step.eval_into(lambda, &mut self.b);
        self.rhs.eval(lambda, &self.b, &mut self.db);
        self.evals += 1;
        let de: f64 = self.weights.iter().zip(&self.b).zip(&self.db).map(|((w, b), d)| w * (b.conj() * d).re).sum();
        -2.0 * lambda * de
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

/// Adaptive Simpson on `[a, b]`; returns `(value, error estimate, converged)`.
fn simpson(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64, max_depth: usize) -> (f64, f64, bool) {
    let (fa, fb) = (f(a), f(b));
    let fm = f(0.5 * (a + b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let mut stack = vec![(Panel { a, b, fa, fm, fb, whole }, tol, 0usize)];
    let (mut value, mut error, mut ok) = (0.0, 0.0, true);
    while let Some((p, tol, depth)) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let (fl, fr) = (f(0.5 * (p.a + m)), f(0.5 * (m + p.b)));
        let left = (m - p.a) / 6.0 * (p.fa + 4.0 * fl + p.fm);
        let right = (p.b - m) / 6.0 * (p.fm + 4.0 * fr + p.fb);
        let diff = left + right - p.whole;
        if diff.abs() <= 15.0 * tol || depth >= max_depth {
            ok &= diff.abs() <= 15.0 * tol;
            value += left + right + diff / 15.0;
            error += diff.abs() / 15.0;
            continue;
        }
        stack.push((Panel { a: m, b: p.b, fa: p.fm, fm: fr, fb: p.fb, whole: right }, 0.5 * tol, depth + 1));
        stack.push((Panel { a: p.a, b: m, fa: p.fa, fm: fl, fb: p.fm, whole: left }, 0.5 * tol, depth + 1));
    }
    (value, error, ok)
}

/// `log f` at every entry of `taus` (increasing, ≥ 1), by adaptive Simpson in
/// `ln λ` over the dense output of each integrator step.
pub fn density_series(
    v: &CoefficientState,
    taus: &[f64],
    s: f64,
    flow: &FlowConfig,
    quad: &QuadratureOptions,
) -> Result<DensityEstimate> {
    check_density_input(v, s)?;
    if taus.iter().any(|&t| !(t >= 1.0 && t.is_finite())) || taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(LabError::input("τ grid must be increasing, finite and ≥ 1"));
    }
    if !(quad.tol > 0.0) {
        return Err(LabError::input("quadrature tolerance must be positive"));
    }
    let mut grid = vec![1.0];
    grid.extend(taus.iter().copied().filter(|&t| t > 1.0));
    let tau_max = *grid.last().unwrap_or(&1.0);
    let span = tau_max.ln().max(f64::MIN_POSITIVE);
    let dim = v.len();
    let mut integrand = Integrand {
        rhs: FlowRhs::new(v.n(), flow)?,
        weights: v.modes().map(|(k, _)| multiplier_symbol(k, s)).collect(),
        b: vec![C64::new(0.0, 0.0); dim],
        db: vec![C64::new(0.0, 0.0); dim],
        evals: 0,
    };
    let mut prop = Propagator::new(v, flow)?;
    let mut out = DensityEstimate { tau_grid: vec![1.0], log_f: vec![0.0], quadrature_error: vec![0.0] };
    let (mut acc, mut err, mut ok) = (0.0, 0.0, true);
    for &target in &grid[1..] {
        while prop.t() < target {
            let step = prop.step(target)?;
            let (a, b) = (step.t0.ln(), step.t1().ln());
            let tol = quad.tol * (b - a) / span;
            let (val, e, conv) = simpson(&mut |x| integrand.eval(&step, x), a, b, tol, quad.max_depth);
            acc += val;
            err += e;
            ok &= conv;
        }
        out.tau_grid.push(target);
        out.log_f.push(acc);
        out.quadrature_error.push(err);
    }
    if !ok {
        return Err(LabError::Quadrature { partial: acc, error: err });
    }
    Ok(out)
}

/// `(log f(τ, v), quadrature error)`.
pub fn density_log(
    v: &CoefficientState,
    tau: f64,
    s: f64,
    flow: &FlowConfig,
    quad: &QuadratureOptions,
) -> Result<(f64, f64)> {
    if !(tau >= 1.0) {
        return Err(LabError::input(format!("τ must be ≥ 1, got {tau}")));
    }
    Ok(density_series(v, &[tau], s, flow, quad)?.last())
}

/// `log f` along a ladder with the doubling increments `|log f(2τ) − log f(τ)|`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DensityLimit {
    pub estimate: DensityEstimate,
    /// `(τ, |log f(2τ) − log f(τ)|)` for every ladder `τ` whose double is also on the ladder.
    pub increments: Vec<(f64, f64)>,
    /// Log-log fit of the increments against `τ`; `None` if they all vanish.
    pub fit: Option<RateFit>,
}

pub fn density_limit(
    v: &CoefficientState,
    taus: &[f64],
    s: f64,
    flow: &FlowConfig,
    quad: &QuadratureOptions,
) -> Result<DensityLimit> {
    if taus.last().is_none_or(|&t| t < 100.0) {
        return Err(LabError::input("density ladder must reach τ ≥ 100"));
    }
    let estimate = density_series(v, taus, s, flow, quad)?;
    let g = &estimate.tau_grid;
    let increments: Vec<(f64, f64)> = (0..g.len())
        .filter_map(|i| {
            let j = g.iter().position(|&t| (t - 2.0 * g[i]).abs() <= 1e-9 * t)?;
            Some((g[i], (estimate.log_f[j] - estimate.log_f[i]).abs()))
        })
        .collect();
    if increments.len() < 3 {
        return Err(LabError::input("density ladder needs at least three doubling pairs"));
    }
    let fit = if increments.iter().all(|d| d.1 == 0.0) {
        None
    } else {
        let (x, y): (Vec<f64>, Vec<f64>) = increments.iter().copied().unzip();
        Some(log_log_fit(&x, &y)?)
    };
    Ok(DensityLimit { estimate, increments, fit })
}

/// Log-log fit of the sample-mean doubling increment against `τ`.
///
/// Single increments dip wherever the oscillatory tail nearly cancels, so
/// per-sample fits scatter; the mean tracks the envelope. All limits must
/// share one ladder. `None` if every mean increment vanishes.
pub fn mean_increment_fit(limits: &[DensityLimit]) -> Result<Option<RateFit>> {
    let Some(first) = limits.first() else {
        return Err(LabError::input("no density limits to average"));
    };
    let taus: Vec<f64> = first.increments.iter().map(|d| d.0).collect();
    if limits.iter().any(|l| l.increments.len() != taus.len() || l.increments.iter().zip(&taus).any(|(d, t)| d.0 != *t))
    {
        return Err(LabError::input("density limits use different ladders"));
    }
    let n = limits.len() as f64;
    let mean: Vec<f64> = (0..taus.len())
        .map(|i| {
            let col: Vec<f64> = limits.iter().map(|l| l.increments[i].1).collect();
            par::pairwise_sum(&col) / n
        })
        .collect();
    if mean.iter().all(|&m| m == 0.0) {
        return Ok(None);
    }
    Ok(Some(log_log_fit(&taus, &mean)?))
}

/// Sample mean with its standard error.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

impl Estimate {
    pub fn from_samples(x: &[f64]) -> Self {
        let n = x.len() as f64;
        if x.is_empty() {
            return Self { value: f64::NAN, std_error: f64::NAN };
        }
        let mean = par::pairwise_sum(x) / n;
        let dev: Vec<f64> = x.iter().map(|v| (v - mean).powi(2)).collect();
        let var = if x.len() > 1 { par::pairwise_sum(&dev) / (n - 1.0) } else { 0.0 };
        Self { value: mean, std_error: (var / n).sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct QuasiInvarianceOptions {
    pub tau: f64,
    pub s_prime: f64,
    /// Radius of the set `A = {‖v‖_{l^{2,s'}} ≤ r, mass ≤ M}`.
    pub radius: f64,
    pub count: usize,
    pub kappas: Vec<f64>,
    /// Draw both estimators from one stream; they then coincide at `τ = 1`.
    pub shared_samples: bool,
    pub flow: FlowConfig,
    pub quadrature: QuadratureOptions,
}

impl Default for QuasiInvarianceOptions {
    fn default() -> Self {
        Self {
            tau: 10.0,
            s_prime: 0.25,
            radius: 2.0,
            count: 2000,
            kappas: vec![0.25, 0.5],
            shared_samples: false,
            flow: FlowConfig::with_tol(1e-8),
            quadrature: QuadratureOptions { tol: 1e-6, ..Default::default() },
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KappaRatio {
    pub kappa: f64,
    /// Pushforward estimate over `ρ̂(A)^{1−κ}`.
    pub pushforward: f64,
    /// Density estimate over `ρ̂(A)^{1−κ}`.
    pub density: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuasiInvarianceReport {
    /// `P(Φ_{1,τ}^{−1} w ∈ A)` for `w ∼ ρ_s`.
    pub pushforward: Estimate,
    /// `E[1_A(v) f(τ, v)]` for `v ∼ ρ_s`.
    pub density: Estimate,
    /// `ρ̂_s(A)` from the density-stream samples.
    pub reference: Estimate,
    /// `|pushforward − density|` in units of the combined standard error.
    pub discrepancy_sigma: f64,
    pub ratios: Vec<KappaRatio>,
    pub acceptance_rate: f64,
    pub max_quadrature_error: f64,
    /// No sample landed in `A`.
    pub insufficient: bool,
}

/// Monte Carlo comparison of the two expressions for `ρ_s(Φ_{1,τ}(A))`.
pub fn quasi_invariance_check(params: &MeasureParams, opts: &QuasiInvarianceOptions) -> Result<QuasiInvarianceReport> {
    params.validate()?;
    if !(opts.s_prime >= 0.0 && opts.s_prime < params.s) {
        return Err(LabError::input("need 0 ≤ s' < s"));
    }
    if !(opts.tau >= 1.0) || !(opts.radius > 0.0) || opts.count == 0 {
        return Err(LabError::input("need τ ≥ 1, r > 0 and count ≥ 1"));
    }
    let in_a = |v: &CoefficientState| weighted_norm(v, opts.s_prime) <= opts.radius && mass(v) <= params.m;
    let density_batch = sample_rho_stream(params, opts.count, Stream::Density)?;
    let push_batch = if opts.shared_samples {
        density_batch.clone()
    } else {
        sample_rho_stream(params, opts.count, Stream::Pushforward)?
    };

    let pulled = par::try_map_indexed(opts.count, |i| -> Result<f64> {
        let w = push_batch.states[i].clone().with_time(opts.tau)?;
        let back = evolve(&w, 1.0, &opts.flow)?;
        Ok(if in_a(&back) { 1.0 } else { 0.0 })
    })?;
    let weighted = par::try_map_indexed(opts.count, |i| -> Result<(f64, f64, f64)> {
        let v = &density_batch.states[i];
        if !in_a(v) {
            return Ok((0.0, 0.0, 0.0));
        }
        let (log_f, err) = density_log(v, opts.tau, params.s, &opts.flow, &opts.quadrature)?;
        Ok((1.0, log_f.exp(), err))
    })?;
    let indicator: Vec<f64> = weighted.iter().map(|w| w.0).collect();
    let values: Vec<f64> = weighted.iter().map(|w| w.1).collect();
    let pushforward = Estimate::from_samples(&pulled);
    let density = Estimate::from_samples(&values);
    let reference = Estimate::from_samples(&indicator);
    let combined = (pushforward.std_error.powi(2) + density.std_error.powi(2)).sqrt();
    let gap = (pushforward.value - density.value).abs();
    let discrepancy_sigma = if combined > 0.0 {
        gap / combined
    } else if gap == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let ratios = opts
        .kappas
        .iter()
        .map(|&kappa| {
            let denom = reference.value.powf(1.0 - kappa);
            KappaRatio { kappa, pushforward: pushforward.value / denom, density: density.value / denom }
        })
        .collect();
    let accepted = (density_batch.states.len() + push_batch.states.len()) as f64;
    let attempts = (density_batch.attempts + push_batch.attempts) as f64;
    Ok(QuasiInvarianceReport {
        pushforward,
        density,
        reference,
        discrepancy_sigma,
        ratios,
        acceptance_rate: accepted / attempts,
        max_quadrature_error: weighted.iter().map(|w| w.2).fold(0.0, f64::max),
        insufficient: reference.value == 0.0,
    })
}

/// Which periodic field the growth experiment measures.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GrowthField {
    /// `Σ_k B_k(t) e^{ikx}`: frozen under the linear flow.
    #[default]
    Profile,
    /// `v(t, x) = Σ_k B_k(t) e^{itk²} e^{ikx}`.
    Physical,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrowthOptions {
    pub s_prime: f64,
    pub horizon: f64,
    pub checkpoints: usize,
    pub count: usize,
    pub field: GrowthField,
    /// Spatial nodes on `[0, 2π)`; defaults to a power of two `≥ 4(2N+1)`.
    pub grid_points: Option<usize>,
    pub flow: FlowConfig,
}

impl Default for GrowthOptions {
    fn default() -> Self {
        Self {
            s_prime: 0.25,
            horizon: 100.0,
            checkpoints: 16,
            count: 50,
            field: GrowthField::Profile,
            grid_points: None,
            flow: FlowConfig::with_tol(1e-7),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthSample {
    pub times: Vec<f64>,
    /// `C^{s'}` norm (sup plus seminorm) at each checkpoint.
    pub norms: Vec<f64>,
    pub fit: RateFit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub samples: Vec<GrowthSample>,
    pub median_exponent: f64,
}

/// Periodic field of `state` on `m` uniform nodes of `[0, 2π)`.
pub fn periodic_field(state: &CoefficientState, field: GrowthField, m: usize) -> Result<GridField> {
    if m < 2 * state.n() + 1 {
        return Err(LabError::input("grid must resolve every mode"));
    }
    let mut buf = vec![C64::new(0.0, 0.0); m];
    for (k, b) in state.modes() {
        let phase = match field {
            GrowthField::Profile => C64::new(1.0, 0.0),
            GrowthField::Physical => C64::cis(state.t() * (k * k) as f64),
        };
        buf[k.rem_euclid(m as i64) as usize] += b * phase;
    }
    FftPlanner::new().plan_fft_inverse(m).process(&mut buf);
    GridField::new(uniform_nodes(0.0, std::f64::consts::TAU / m as f64, m), buf)
}

/// `C^{s'}` norms of `ρ_s` draws along the flow, with per-sample growth exponents.
pub fn holder_growth_experiment(params: &MeasureParams, opts: &GrowthOptions) -> Result<GrowthReport> {
    params.validate()?;
    if !(opts.s_prime > 0.0 && opts.s_prime < params.s) {
        return Err(LabError::input("need 0 < s' < s"));
    }
    if !(opts.horizon > 1.0 && opts.horizon <= 1e3) || opts.checkpoints < 3 || opts.count == 0 {
        return Err(LabError::input("need 1 < T ≤ 1000, at least 3 checkpoints and count ≥ 1"));
    }
    let m = opts.grid_points.unwrap_or_else(|| (4 * (2 * params.n + 1)).next_power_of_two().max(16));
    let ratio = opts.horizon.powf(1.0 / (opts.checkpoints - 1) as f64);
    let mut times: Vec<f64> = (0..opts.checkpoints).map(|i| ratio.powi(i as i32)).collect();
    times[opts.checkpoints - 1] = opts.horizon;
    let batch = sample_rho_stream(params, opts.count, Stream::Growth)?;
    let samples = par::try_map_indexed(opts.count, |i| -> Result<GrowthSample> {
        let rec = evolve_dense(&batch.states[i], &times, &opts.flow)?;
        let norms = rec
            .states
            .iter()
            .map(|st| Ok(holder_seminorm(&periodic_field(st, opts.field, m)?, opts.s_prime)?.total()))
            .collect::<Result<Vec<f64>>>()?;
        let fit = log_log_fit(&times, &norms)?;
        Ok(GrowthSample { times: times.clone(), norms, fit })
    })?;
    let exps: Vec<f64> = samples.iter().map(|s| s.fit.exponent).collect();
    Ok(GrowthReport { median_exponent: median(&exps).unwrap_or(f64::NAN), samples })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RandomCurveOptions {
    pub count: usize,
    pub t_min: f64,
    /// Trajectory ladder density.
    pub per_octave: usize,
    /// Multiplies the randomized data.
    pub scale: f64,
    /// Reconstruct whole curves on this grid for the limit fit (one ladder point per octave).
    pub grid: Option<Vec<f64>>,
    pub substep: f64,
    pub flow: FlowConfig,
    pub holder: HolderOptions,
    pub window: FitWindow,
}

impl Default for RandomCurveOptions {
    fn default() -> Self {
        Self {
            count: 20,
            t_min: 1e-3,
            per_octave: 8,
            scale: 1.0,
            grid: None,
            substep: 0.05,
            flow: FlowConfig::with_tol(1e-9),
            holder: HolderOptions::default(),
            window: FitWindow::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomCurveSample {
    pub index: u64,
    /// Base point of the trajectory fit.
    pub corner_x: f64,
    pub holder: HolderFit,
    pub limit: Option<CurveLimit>,
}

/// Randomized data → flow → frames → limit curve and trajectory Hölder fits.
pub fn random_curve_experiment(params: &MeasureParams, opts: &RandomCurveOptions) -> Result<Vec<RandomCurveSample>> {
    params.validate()?;
    if !(opts.t_min >= 1e-3 * (1.0 - 1e-12) && opts.t_min < 1.0) {
        return Err(LabError::input("t_min must lie in [1e-3, 1)"));
    }
    if opts.count == 0 || !(opts.scale >= 0.0) {
        return Err(LabError::input("need count ≥ 1 and a non-negative scale"));
    }
    let ladder = geometric_ladder(1.0, opts.t_min, opts.per_octave)?;
    let curve_ladder = geometric_ladder(1.0, opts.t_min, 1)?;
    par::try_map_indexed(opts.count, |i| -> Result<RandomCurveSample> {
        let index = i as u64;
        let data = randomize_bf_data(params, index)?.scaled(C64::new(opts.scale, 0.0));
        let corner_x = dominant_corner(&data);
        let points = corner_trajectory(&data, &opts.flow, &ladder, corner_x, opts.substep)?;
        let holder = holder_exponent(&ladder, &points, &opts.holder)?;
        let limit = match &opts.grid {
            None => None,
            Some(grid) => {
                let ro = ReconstructOptions { substep: opts.substep, keep_frames: false };
                let fam = reconstruct_from_state(&data, &opts.flow, &curve_ladder, grid, &Anchor::default(), &ro)?;
                Some(curve_limit(&fam, &opts.window)?)
            }
        };
        Ok(RandomCurveSample { index, corner_x, holder, limit })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize) -> MeasureParams {
        MeasureParams { s: 0.5, m: 1e9, n, seed: 7 }
    }

    #[test]
    fn weights_and_validation() {
        assert_eq!(gamma_weight(0, 0.5), 1.0);
        assert!((gamma_weight(2, 0.5) - 5f64.sqrt().recip()).abs() < 1e-15);
        assert!(MeasureParams { s: 1.0, ..params(1) }.validate().is_err());
        assert!(MeasureParams { m: 0.0, ..params(1) }.validate().is_err());
        assert!(sample_gamma(&params(1), 0).is_err());
    }

    #[test]
    fn substreams_are_distinct_and_reproducible() {
        let a: u64 = substream(1, Stream::Gamma, 0).random();
        let b: u64 = substream(1, Stream::Gamma, 0).random();
        let c: u64 = substream(1, Stream::Gamma, 1).random();
        let d: u64 = substream(1, Stream::Rho, 0).random();
        assert_eq!(a, b);
        assert!(a != c && a != d && c != d);
    }

    #[test]
    fn gamma_batch_moments() {
        let count = 4000;
        let p = MeasureParams { seed: 8, ..params(3) };
        let batch = sample_gamma(&p, count).unwrap();
        assert_eq!(batch.acceptance_rate(), 1.0);
        for k in -3i64..=3 {
            let mean: C64 = batch.states.iter().map(|s| s.get(k)).sum::<C64>() / count as f64;
            let sd = gamma_weight(k, p.s) / 2f64.sqrt();
            assert!(mean.re.abs() < 4.0 * sd / (count as f64).sqrt());
            assert!(mean.im.abs() < 4.0 * sd / (count as f64).sqrt());
        }
        let masses: Vec<f64> = batch.states.iter().map(mass).collect();
        let est = Estimate::from_samples(&masses);
        let expected: f64 = (-3i64..=3).map(|k| 1.0 / multiplier_symbol(k, p.s)).sum();
        assert!((est.value - expected).abs() < 5.0 * est.std_error, "{est:?} vs {expected}");
    }

    #[test]
    fn cutoff_flags_and_rejection() {
        let p = MeasureParams { m: 1.5, ..params(2) };
        let g = sample_gamma(&p, 200).unwrap();
        for (s, &a) in g.states.iter().zip(&g.accepted) {
            assert_eq!(a, mass(s) <= 1.5);
        }
        let r = sample_rho(&p, 50).unwrap();
        assert!(r.states.iter().all(|s| mass(s) <= 1.5));
        assert!(r.acceptance_rate() > 0.0 && r.acceptance_rate() <= 1.0);
    }

    #[test]
    fn randomized_phase_is_unimodular() {
        let p = params(2);
        let a = randomize_bf_data(&p, 3).unwrap();
        let g = draw_gamma(&p, &mut substream(p.seed, Stream::Curves, 3));
        for k in -2i64..=2 {
            assert!((a.get(k).norm() - g.get(k).norm()).abs() < 1e-15);
        }
        assert_eq!(a.get(0), g.get(0));
    }

    #[test]
    fn simpson_integrates_cubic_exactly() {
        let (v, e, ok) = simpson(&mut |x| x * x * x - 2.0 * x, 0.0, 2.0, 1e-12, 20);
        assert!(ok && (v - 0.0).abs() < 1e-14 && e < 1e-14);
        let (v, _, ok) = simpson(&mut f64::sin, 0.0, std::f64::consts::PI, 1e-10, 30);
        assert!(ok && (v - 2.0).abs() < 1e-10);
    }

    #[test]
    fn density_trivial_cases() {
        let p = params(2);
        let v = draw_gamma(&p, &mut substream(1, Stream::Density, 0));
        let cfg = FlowConfig::with_tol(1e-10);
        assert_eq!(density_log(&v, 1.0, 0.5, &cfg, &QuadratureOptions::default()).unwrap(), (0.0, 0.0));
        let single = CoefficientState::from_modes(1.0, 0, &[(0, C64::new(0.8, -0.6))]).unwrap();
        let (lf, _) = density_log(&single, 50.0, 0.5, &cfg, &QuadratureOptions::default()).unwrap();
        assert!(lf.abs() < 1e-12, "{lf}");
        assert!(density_log(&v.clone().with_time(2.0).unwrap(), 3.0, 0.5, &cfg, &Default::default()).is_err());
    }

    #[test]
    fn linear_flow_keeps_growth_norm_constant() {
        let p = MeasureParams { m: 10.0, ..params(8) };
        let opts = GrowthOptions {
            count: 2,
            checkpoints: 5,
            horizon: 10.0,
            flow: FlowConfig { linear_only: true, ..FlowConfig::default() },
            ..Default::default()
        };
        let r = holder_growth_experiment(&p, &opts).unwrap();
        for s in &r.samples {
            assert!(s.norms.iter().all(|&n| n == s.norms[0]));
            assert!(s.fit.exponent.abs() < 1e-12);
        }
    }

    #[test]
    fn periodic_field_matches_direct_synthesis() {
        let st = CoefficientState::from_modes(2.5, 2, &[(-2, C64::new(0.3, 0.1)), (1, C64::new(-0.5, 0.2))]).unwrap();
        let f = periodic_field(&st, GrowthField::Physical, 16).unwrap();
        let direct = crate::spectral::synthesize_v(&st, &f.x_nodes).unwrap();
        for (a, b) in f.values.iter().zip(&direct.values) {
            assert!((a - b).norm() < 1e-13);
        }
    }
}
