//! Coefficient states, resonance arithmetic, weighted norms and synthesis of
//! periodic fields.
//!
//! All pairings use `⟨f, g⟩ = Σ_k f̂(k) conj(ĝ(k))` without a `2π` factor, and
//! the Japanese bracket is `⟨k⟩ = (1 + k²)^{1/2}`.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};
use crate::C64;

/// Signed Fourier mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ModeIndex(pub i64);

impl ModeIndex {
    pub fn bracket(self) -> f64 {
        japanese_bracket(self.0)
    }
}

impl fmt::Display for ModeIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<i64> for ModeIndex {
    fn from(k: i64) -> Self {
        ModeIndex(k)
    }
}

/// `⟨k⟩ = (1 + k²)^{1/2}`.
pub fn japanese_bracket(k: i64) -> f64 {
    let k = k as f64;
    (1.0 + k * k).sqrt()
}

/// Symbol `1 + |k|^{2s+1}` of the weight multiplier used by the Gaussian
/// measures and the density formula.
pub fn multiplier_symbol(k: i64, s: f64) -> f64 {
    1.0 + (k.unsigned_abs() as f64).powf(2.0 * s + 1.0)
}

/// Truncated coefficient vector `{B_k(t)}_{|k| ≤ N}` stored in `k = −N..=N` order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "StateRepr", into = "StateRepr")]
pub struct CoefficientState {
    t: f64,
    n: usize,
    coeffs: Vec<C64>,
    /// Accumulated `2μ ln t` when the state is gauged, zero otherwise.
    pub gauge_phase: f64,
}

impl CoefficientState {
    /// All-zero state with `2N + 1` modes at time `t ≥ 1`.
    pub fn zeros(t: f64, n: usize) -> Result<Self> {
        Self::from_coeffs(t, vec![C64::new(0.0, 0.0); 2 * n + 1])
    }

    /// Wraps a coefficient vector ordered `k = −N..=N`; its length must be odd.
    pub fn from_coeffs(t: f64, coeffs: Vec<C64>) -> Result<Self> {
        if coeffs.len().is_multiple_of(2) {
            return Err(LabError::input(format!("coefficient vector length {} is not of the form 2N+1", coeffs.len())));
        }
        if !(t >= 1.0) || !t.is_finite() {
            return Err(LabError::input(format!("state time must be finite and ≥ 1, got {t}")));
        }
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(LabError::input("coefficients must be finite"));
        }
        let n = coeffs.len() / 2;
        Ok(Self { t, n, coeffs, gauge_phase: 0.0 })
    }

    /// Builds a state from `(k, B_k)` pairs, zero elsewhere.
    pub fn from_modes(t: f64, n: usize, modes: &[(i64, C64)]) -> Result<Self> {
        let mut state = Self::zeros(t, n)?;
        for &(k, b) in modes {
            if k.unsigned_abs() as usize > n {
                return Err(LabError::input(format!("mode {k} outside |k| ≤ {n}")));
            }
            state.set(k, b);
        }
        Ok(state)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    /// Truncation radius `N`.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [C64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<C64> {
        self.coeffs
    }

    /// Position of mode `k` in the storage vector.
    pub fn index_of(&self, k: i64) -> usize {
        debug_assert!(k.unsigned_abs() as usize <= self.n);
        (k + self.n as i64) as usize
    }

    pub fn get(&self, k: i64) -> C64 {
        if k.unsigned_abs() as usize > self.n {
            return C64::new(0.0, 0.0);
        }
        self.coeffs[self.index_of(k)]
    }

    pub fn set(&mut self, k: i64, value: C64) {
        let i = self.index_of(k);
        self.coeffs[i] = value;
    }

    /// Iterator over `(k, B_k)`.
    pub fn modes(&self) -> impl Iterator<Item = (i64, C64)> + '_ {
        let n = self.n as i64;
        self.coeffs.iter().enumerate().map(move |(i, &b)| (i as i64 - n, b))
    }

    /// Same coefficients stamped with a new time.
    pub fn with_time(mut self, t: f64) -> Result<Self> {
        if !(t >= 1.0) || !t.is_finite() {
            return Err(LabError::input(format!("state time must be finite and ≥ 1, got {t}")));
        }
        self.t = t;
        Ok(self)
    }

    /// Multiplies every coefficient by `z`.
    pub fn scaled(&self, z: C64) -> Self {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|b| *b *= z);
        out
    }

    /// Zero-pads (or truncates) to radius `n`.
    pub fn resized(&self, n: usize) -> Self {
        let mut out = Self::zeros(self.t, n).expect("time already validated");
        out.gauge_phase = self.gauge_phase;
        let m = n.min(self.n) as i64;
        for k in -m..=m {
            out.set(k, self.get(k));
        }
        out
    }

    /// `l²` distance between coefficient vectors of equal radius.
    pub fn l2_distance(&self, other: &Self) -> f64 {
        let n = self.n.max(other.n) as i64;
        (-n..=n).map(|k| (self.get(k) - other.get(k)).norm_sqr()).sum::<f64>().sqrt()
    }

    /// Coefficients `A_j(1/t) = conj(B_j(t))` of the line ansatz, in `j = −N..=N` order.
    pub fn ansatz_coefficients(&self) -> Vec<C64> {
        self.coeffs.iter().map(|b| b.conj()).collect()
    }
}

#[derive(Serialize, Deserialize)]
struct StateRepr {
    t: f64,
    #[serde(rename = "N")]
    n: usize,
    re: Vec<f64>,
    im: Vec<f64>,
    gauge_phase: f64,
}

impl From<CoefficientState> for StateRepr {
    fn from(s: CoefficientState) -> Self {
        StateRepr {
            t: s.t,
            n: s.n,
            re: s.coeffs.iter().map(|c| c.re).collect(),
            im: s.coeffs.iter().map(|c| c.im).collect(),
            gauge_phase: s.gauge_phase,
        }
    }
}

impl TryFrom<StateRepr> for CoefficientState {
    type Error = LabError;

    fn try_from(r: StateRepr) -> Result<Self> {
        if r.re.len() != 2 * r.n + 1 || r.im.len() != 2 * r.n + 1 {
            return Err(LabError::input(format!(
                "expected {} entries in re/im for N = {}, got {}/{}",
                2 * r.n + 1,
                r.n,
                r.re.len(),
                r.im.len()
            )));
        }
        let coeffs = r.re.iter().zip(&r.im).map(|(&a, &b)| C64::new(a, b)).collect();
        let mut s = CoefficientState::from_coeffs(r.t, coeffs)?;
        s.gauge_phase = r.gauge_phase;
        Ok(s)
    }
}

/// Resonance function `ω = k² − j1² + j2² − j3²` of an admissible quadruple.
///
/// Under `k − j1 + j2 − j3 = 0` it factors as `2(k − j1)(j1 − j2)`, so it
/// vanishes exactly on the resonant set `k = j1` or `j1 = j2`.
pub fn resonance_phase(k: ModeIndex, j1: ModeIndex, j2: ModeIndex, j3: ModeIndex) -> Result<i64> {
    let (k, j1, j2, j3) = (k.0, j1.0, j2.0, j3.0);
    if k - j1 + j2 - j3 != 0 {
        return Err(LabError::input(format!("momentum constraint violated: {k} - {j1} + {j2} - {j3} ≠ 0")));
    }
    Ok(2 * (k - j1) * (j1 - j2))
}

/// `M = Σ_{|k| ≤ N} |B_k|²`.
pub fn mass(state: &CoefficientState) -> f64 {
    state.coeffs.iter().map(|b| b.norm_sqr()).sum()
}

/// `(Σ_k ⟨k⟩^{2s} |B_k|²)^{1/2}`.
pub fn weighted_norm(state: &CoefficientState, s: f64) -> f64 {
    if s == 0.0 {
        return mass(state).sqrt();
    }
    state.modes().map(|(k, b)| japanese_bracket(k).powf(2.0 * s) * b.norm_sqr()).sum::<f64>().sqrt()
}

/// Applies the multiplier `B_k ↦ (1 + |k|^{2s+1}) B_k`.
pub fn apply_multiplier_d(state: &CoefficientState, s: f64) -> CoefficientState {
    let mut out = state.clone();
    let n = state.n as i64;
    for (i, b) in out.coeffs.iter_mut().enumerate() {
        *b *= multiplier_symbol(i as i64 - n, s);
    }
    out
}

/// Mode-sum pairing `Σ_k f_k conj(g_k)`.
pub fn pairing(f: &CoefficientState, g: &CoefficientState) -> C64 {
    let n = f.n.max(g.n) as i64;
    (-n..=n).map(|k| f.get(k) * g.get(k).conj()).sum()
}

/// Complex field sampled on a uniform real grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub x_nodes: Vec<f64>,
    pub values: Vec<C64>,
}

impl GridField {
    pub fn new(x_nodes: Vec<f64>, values: Vec<C64>) -> Result<Self> {
        if x_nodes.len() != values.len() {
            return Err(LabError::input(format!("grid has {} nodes but {} values", x_nodes.len(), values.len())));
        }
        check_uniform(&x_nodes)?;
        Ok(Self { x_nodes, values })
    }

    pub fn len(&self) -> usize {
        self.x_nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x_nodes.is_empty()
    }

    /// Grid spacing (zero for fewer than two nodes).
    pub fn spacing(&self) -> f64 {
        grid_spacing(&self.x_nodes)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }
}

/// `n` nodes `start, start + h, ...`.
pub fn uniform_nodes(start: f64, step: f64, n: usize) -> Vec<f64> {
    (0..n).map(|m| start + step * m as f64).collect()
}

/// `n` nodes covering `[a, b]` endpoint-inclusive.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let h = (b - a) / (n - 1) as f64;
            (0..n).map(|m| if m == n - 1 { b } else { a + h * m as f64 }).collect()
        }
    }
}

pub(crate) fn grid_spacing(x: &[f64]) -> f64 {
    if x.len() < 2 {
        0.0
    } else {
        (x[x.len() - 1] - x[0]) / (x.len() - 1) as f64
    }
}

/// Checks that nodes are strictly increasing with uniform spacing.
pub fn check_uniform(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(LabError::input("grid nodes must be finite"));
    }
    if x.len() < 2 {
        return Ok(());
    }
    let h = grid_spacing(x);
    if !(h > 0.0) {
        return Err(LabError::input("grid nodes must be strictly increasing"));
    }
    let scale = x[0].abs().max(x[x.len() - 1].abs()).max(h);
    for (m, w) in x.windows(2).enumerate() {
        let d = w[1] - w[0];
        if !(d > 0.0) {
            return Err(LabError::input(format!("grid not increasing at node {m}")));
        }
        if (d - h).abs() > 1e-9 * scale {
            return Err(LabError::input(format!("grid spacing not uniform at node {m}")));
        }
    }
    Ok(())
}

/// `v(t, x) = Σ_{|j| ≤ N} B_j e^{itj²} e^{ixj}` on the given nodes.
pub fn synthesize_v(state: &CoefficientState, grid: &[f64]) -> Result<GridField> {
    let t = state.t;
    let phased: Vec<(f64, C64)> = state.modes().map(|(j, b)| (j as f64, b * C64::cis(t * (j * j) as f64))).collect();
    let values = grid.iter().map(|&x| phased.iter().map(|&(j, c)| c * C64::cis(x * j)).sum()).collect();
    GridField::new(grid.to_vec(), values)
}

/// Sup norm and dyadic Hölder seminorm estimate of a sampled field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HolderNorm {
    pub sup: f64,
    pub seminorm: f64,
}

impl HolderNorm {
    /// `‖f‖_{C^{s'}} ≈ sup|f| + [f]_{s'}`.
    pub fn total(&self) -> f64 {
        self.sup + self.seminorm
    }
}

/// Dyadic-offset estimate of the `C^{s'}` seminorm.
///
/// Takes `max_h max_m |f(x_{m+h}) − f(x_m)| / (hΔx)^{s'}` over `h = 1, 2, 4, …`
/// below the node count.
pub fn holder_seminorm(field: &GridField, s_prime: f64) -> Result<HolderNorm> {
    if !(s_prime > 0.0 && s_prime < 1.0) {
        return Err(LabError::input(format!("Hölder exponent must lie in (0,1), got {s_prime}")));
    }
    let n = field.len();
    if n < 16 {
        return Err(LabError::input(format!("Hölder estimator needs ≥ 16 nodes, got {n}")));
    }
    let dx = field.spacing();
    let v = &field.values;
    let mut seminorm = 0.0f64;
    let mut h = 1usize;
    while h < n {
        let denom = (h as f64 * dx).powf(s_prime);
        let mut worst = 0.0f64;
        for m in 0..n - h {
            worst = worst.max((v[m + h] - v[m]).norm());
        }
        seminorm = seminorm.max(worst / denom);
        h *= 2;
    }
    Ok(HolderNorm { sup: field.sup_norm(), seminorm })
}
