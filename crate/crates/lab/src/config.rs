//! Run configuration: JSON file, `--set` overrides, validation.

use std::path::{Path, PathBuf};

use binormal_core::flow::FlowConfig;
use binormal_core::hasimoto::{Anchor, ReconstructOptions};
use binormal_core::measure::{
    GrowthOptions, MeasureParams, QuadratureOptions, QuasiInvarianceOptions, RandomCurveOptions,
};
use binormal_core::singularity::{geometric_ladder, CornerOptions, FitWindow};
use binormal_core::spectral::{linspace, CoefficientState};
use binormal_core::C64;
use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{RunError, RunResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Experiment {
    Evolve,
    Reconstruct,
    Corners,
    Sample,
    Density,
    QuasiInvariance,
    HolderGrowth,
    RandomCurves,
    Verify,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Evolve => "evolve",
            Experiment::Reconstruct => "reconstruct",
            Experiment::Corners => "corners",
            Experiment::Sample => "sample",
            Experiment::Density => "density",
            Experiment::QuasiInvariance => "quasi_invariance",
            Experiment::HolderGrowth => "holder_growth",
            Experiment::RandomCurves => "random_curves",
            Experiment::Verify => "verify",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub k: i64,
    pub re: f64,
    pub im: f64,
}

/// Coefficients at `t = 1` for the deterministic experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Modes {
        n: usize,
        modes: Vec<ModeSpec>,
    },
    /// `a_j = amplitude / (1 + j²) · e^{i(linear_phase·j + quadratic_phase·j²)}`.
    Decaying {
        #[serde(default = "decaying_n")]
        n: usize,
        #[serde(default = "decaying_amplitude")]
        amplitude: f64,
        #[serde(default = "decaying_linear")]
        linear_phase: f64,
        #[serde(default = "decaying_quadratic")]
        quadratic_phase: f64,
    },
    /// Randomized filament data drawn with the `measure` block and the run seed.
    Random {
        #[serde(default)]
        index: u64,
        #[serde(default = "unit")]
        scale: f64,
    },
}

fn decaying_n() -> usize {
    4
}
fn decaying_amplitude() -> f64 {
    0.3
}
fn decaying_linear() -> f64 {
    0.7
}
fn decaying_quadratic() -> f64 {
    0.3
}
fn unit() -> f64 {
    1.0
}

impl Default for InitialState {
    fn default() -> Self {
        InitialState::Decaying {
            n: decaying_n(),
            amplitude: decaying_amplitude(),
            linear_phase: decaying_linear(),
            quadratic_phase: decaying_quadratic(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MeasureBlock {
    pub s: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for MeasureBlock {
    fn default() -> Self {
        Self { s: 0.5, m: 4.0, n: 8 }
    }
}

/// Decreasing line-time ladder `t_max → t_min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LadderSpec {
    pub t_max: f64,
    pub t_min: f64,
    pub per_octave: usize,
}

impl Default for LadderSpec {
    fn default() -> Self {
        Self { t_max: 1.0, t_min: 1e-3, per_octave: 1 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self { x_min: -6.0, x_max: 6.0, points: 1201 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvolveBlock {
    pub tau_end: f64,
    /// Log-spaced output samples on `[1, tau_end]`.
    pub samples: usize,
}

impl Default for EvolveBlock {
    fn default() -> Self {
        Self { tau_end: 100.0, samples: 65 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReconstructBlock {
    pub options: ReconstructOptions,
    pub window: FitWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleBlock {
    pub count: usize,
}

impl Default for SampleBlock {
    fn default() -> Self {
        Self { count: 1000 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityBlock {
    pub count: usize,
    pub tau_max: f64,
    /// Ladder `tau_max / 2^k` for `k = 0..=doublings`.
    pub doublings: u32,
    pub quadrature: QuadratureOptions,
}

impl Default for DensityBlock {
    fn default() -> Self {
        Self { count: 4, tau_max: 200.0, doublings: 7, quadrature: QuadratureOptions { tol: 1e-8, max_depth: 40 } }
    }
}

impl DensityBlock {
    pub fn ladder(&self) -> Vec<f64> {
        (0..=self.doublings).rev().map(|k| self.tau_max / 2f64.powi(k as i32)).filter(|&t| t >= 1.0).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HolderGrowthBlock {
    /// Truncations to run; empty means `measure.N` alone.
    pub n_ladder: Vec<usize>,
    pub options: GrowthOptions,
}

impl Default for HolderGrowthBlock {
    fn default() -> Self {
        Self { n_ladder: vec![16, 32, 64], options: GrowthOptions::default() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyBlock {
    /// Invariant checks to skip, by name.
    pub skip: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default = "default_flow")]
    pub flow: FlowConfig,
    #[serde(default)]
    pub initial: InitialState,
    #[serde(default)]
    pub measure: MeasureBlock,
    #[serde(default)]
    pub ladder: LadderSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub anchor: Anchor,
    #[serde(default)]
    pub evolve: EvolveBlock,
    #[serde(default)]
    pub reconstruct: ReconstructBlock,
    #[serde(default)]
    pub corners: CornerOptions,
    #[serde(default)]
    pub sample: SampleBlock,
    #[serde(default)]
    pub density: DensityBlock,
    #[serde(default)]
    pub quasi_invariance: QuasiInvarianceOptions,
    #[serde(default)]
    pub holder_growth: HolderGrowthBlock,
    #[serde(default)]
    pub random_curves: RandomCurveOptions,
    #[serde(default)]
    pub verify: VerifyBlock,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs/latest")
}

fn default_flow() -> FlowConfig {
    FlowConfig::with_tol(1e-10)
}

/// Command-line layers on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub experiment: Option<Experiment>,
    pub sets: Vec<String>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
}

fn invalid(msg: impl Into<String>) -> RunError {
    RunError::Validation(msg.into())
}

/// Reads `path` (or starts from `{}`), applies the overrides and validates.
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> RunResult<RunConfig> {
    let mut value = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
            serde_json::from_str::<Value>(&text).map_err(|e| {
                invalid(format!("{}: malformed JSON at line {}, column {}: {e}", p.display(), e.line(), e.column()))
            })?
        }
        None => Value::Object(Default::default()),
    };
    if !value.is_object() {
        return Err(invalid("configuration must be a JSON object"));
    }
    for set in &overrides.sets {
        let (key, raw) = set.split_once('=').ok_or_else(|| invalid(format!("--set expects key=value, got `{set}`")))?;
        let parsed = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        set_path(&mut value, key, parsed)?;
    }
    if let Some(seed) = overrides.seed {
        set_path(&mut value, "seed", Value::from(seed))?;
    }
    if let Some(out) = &overrides.output_dir {
        set_path(&mut value, "output_dir", Value::String(out.display().to_string()))?;
    }
    if let Some(exp) = overrides.experiment {
        match value.get("experiment") {
            Some(v) if v.as_str() != Some(exp.name()) => {
                return Err(invalid(format!("experiment: config names {v} but the command is {}", exp.name())));
            }
            _ => set_path(&mut value, "experiment", Value::String(exp.name().into()))?,
        }
    }
    from_value(value)
}

pub fn from_value(value: Value) -> RunResult<RunConfig> {
    let config: RunConfig = serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        invalid(format!("at `{path}`: {}", e.into_inner()))
    })?;
    config.validate()?;
    Ok(config)
}

fn set_path(root: &mut Value, key: &str, v: Value) -> RunResult<()> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(invalid(format!("malformed override key `{key}`")));
    }
    let mut node = root;
    for (i, part) in parts.iter().enumerate() {
        let Value::Object(map) = node else {
            return Err(invalid(format!("override `{key}`: `{}` is not an object", parts[..i].join("."))));
        };
        if i + 1 == parts.len() {
            map.insert(part.to_string(), v);
            return Ok(());
        }
        node = map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()));
    }
    Ok(())
}

impl RunConfig {
    pub fn measure_params(&self) -> MeasureParams {
        MeasureParams { s: self.measure.s, m: self.measure.m, n: self.measure.n, seed: self.seed }
    }

    pub fn ladder_times(&self) -> RunResult<Vec<f64>> {
        let l = &self.ladder;
        geometric_ladder(l.t_max, l.t_min, l.per_octave.max(1)).map_err(|e| invalid(format!("ladder: {e}")))
    }

    pub fn grid_nodes(&self) -> Vec<f64> {
        linspace(self.grid.x_min, self.grid.x_max, self.grid.points)
    }

    pub fn initial_state(&self) -> RunResult<CoefficientState> {
        let state = match &self.initial {
            InitialState::Modes { n, modes } => {
                let m: Vec<(i64, C64)> = modes.iter().map(|m| (m.k, C64::new(m.re, m.im))).collect();
                CoefficientState::from_modes(1.0, *n, &m)?
            }
            InitialState::Decaying { n, amplitude, linear_phase, quadratic_phase } => {
                let n_i = *n as i64;
                let m: Vec<(i64, C64)> = (-n_i..=n_i)
                    .map(|j| {
                        let jf = j as f64;
                        (j, C64::from_polar(amplitude / (1.0 + jf * jf), linear_phase * jf + quadratic_phase * jf * jf))
                    })
                    .collect();
                CoefficientState::from_modes(1.0, *n, &m)?
            }
            InitialState::Random { index, scale } => {
                binormal_core::measure::randomize_bf_data(&self.measure_params(), *index)?.scaled(C64::new(*scale, 0.0))
            }
        };
        Ok(state)
    }

    /// Cross-field invariants; each message names the offending keys.
    pub fn validate(&self) -> RunResult<()> {
        let tag = |name: &str, r: binormal_core::Result<()>| r.map_err(|e| invalid(format!("{name}: {e}")));
        tag("flow", self.flow.validate())?;
        tag("quasi_invariance.flow", self.quasi_invariance.flow.validate())?;
        tag("holder_growth.options.flow", self.holder_growth.options.flow.validate())?;
        tag("random_curves.flow", self.random_curves.flow.validate())?;
        tag("measure", self.measure_params().validate())?;
        let s = self.measure.s;
        for (key, sp) in [
            ("quasi_invariance.s_prime", self.quasi_invariance.s_prime),
            ("holder_growth.options.s_prime", self.holder_growth.options.s_prime),
        ] {
            if !(sp >= 0.0 && sp < s) {
                return Err(invalid(format!("{key} = {sp} must satisfy 0 ≤ {key} < measure.s = {s}")));
            }
        }
        if self.grid.points < 2 || !(self.grid.x_max > self.grid.x_min) {
            return Err(invalid("grid: need points ≥ 2 and x_max > x_min"));
        }
        self.ladder_times()?;
        if let InitialState::Modes { n, modes } = &self.initial {
            if let Some(m) = modes.iter().find(|m| m.k.unsigned_abs() as usize > *n) {
                return Err(invalid(format!("initial.modes: mode {} lies outside |k| ≤ initial.n = {n}", m.k)));
            }
        }
        if !(self.evolve.tau_end >= 1.0) || self.evolve.samples < 2 {
            return Err(invalid("evolve: need tau_end ≥ 1 and samples ≥ 2"));
        }
        if self.sample.count == 0 || self.density.count == 0 {
            return Err(invalid("sample.count and density.count must be positive"));
        }
        if self.density.ladder().len() < 2 {
            return Err(invalid("density: tau_max and doublings leave fewer than two ladder points ≥ 1"));
        }
        Ok(())
    }
}
