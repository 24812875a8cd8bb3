//! Invariant suite behind the `verify` experiment. Each check is small enough
//! to run in well under a second.

use binormal_core::flow::{evolve, evolve_dense, jacobian_fd, FlowConfig};
use binormal_core::hasimoto::{compatibility_defect, nls_residual, reconstruct_from_state, Anchor, ReconstructOptions};
use binormal_core::measure::{
    density_log, density_log_energy, sample_gamma, sample_rho, MeasureParams, QuadratureOptions,
};
use binormal_core::singularity::{alpha_ladder, extract_alpha, AlphaOptions};
use binormal_core::spectral::{linspace, CoefficientState};
use binormal_core::{Result, C64};
use serde::Serialize;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    /// `≤ threshold` passes unless `at_least` is set.
    pub threshold: f64,
    pub at_least: bool,
    pub passed: bool,
    pub error: Option<String>,
}

type Probe = fn(u64) -> Result<f64>;

const CHECKS: [(&str, f64, bool, Probe); 11] = [
    ("mass_conservation", 1e-9, false, mass_conservation),
    ("liouville", 1e-5, false, liouville),
    ("single_mode_closed_form", 1e-8, false, single_mode_closed_form),
    ("two_mode_closed_form", 1e-8, false, two_mode_closed_form),
    ("nls_residual_order", 1.8, true, nls_residual_order),
    ("frame_orthonormality", 1e-9, false, frame_orthonormality),
    ("compatibility_order", 1.8, true, compatibility_order),
    ("two_mode_alpha_residual", 1e-10, false, two_mode_alpha_residual),
    ("single_mode_density", 1e-12, false, single_mode_density),
    ("density_routes_agree", 1e-6, false, density_routes_agree),
    ("sampling_determinism", 0.0, false, sampling_determinism),
];

pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|c| c.0).collect()
}

pub fn run_checks(seed: u64, skip: &[String], mut progress: impl FnMut(&Check)) -> Vec<Check> {
    let mut out = Vec::new();
    for (name, threshold, at_least, probe) in CHECKS {
        if skip.iter().any(|s| s == name) {
            continue;
        }
        let check = match probe(seed) {
            Ok(value) => {
                let passed = if at_least { value >= threshold } else { value <= threshold };
                Check { name, value, threshold, at_least, passed, error: None }
            }
            Err(e) => Check { name, value: f64::NAN, threshold, at_least, passed: false, error: Some(e.to_string()) },
        };
        progress(&check);
        out.push(check);
    }
    out
}

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

fn gaussian_states(seed: u64, n: usize, count: usize) -> Result<Vec<CoefficientState>> {
    Ok(sample_gamma(&MeasureParams { s: 0.5, m: 1e9, n, seed }, count)?.states)
}

fn mass_conservation(seed: u64) -> Result<f64> {
    let v = gaussian_states(seed, 8, 1)?.remove(0);
    let times: Vec<f64> = (0..=20).map(|k| 10f64.powf(k as f64 / 10.0)).collect();
    Ok(evolve_dense(&v, &times, &FlowConfig::with_tol(1e-11))?.max_mass_drift())
}

fn liouville(seed: u64) -> Result<f64> {
    let cfg = FlowConfig::with_tol(1e-12);
    let mut worst = 0.0f64;
    for v in gaussian_states(seed, 1, 4)? {
        let j = jacobian_fd(&v.scaled(c(0.5, 0.0)), 2.0, 1e-4, &cfg)?;
        worst = worst.max((j.determinant() - 1.0).abs());
    }
    Ok(worst)
}

fn single_mode_closed_form(_: u64) -> Result<f64> {
    let a = c(0.9, 0.4);
    let s = CoefficientState::from_modes(1.0, 0, &[(0, a)])?;
    let times = [2.0, 10.0, 100.0];
    let rec = evolve_dense(&s, &times, &FlowConfig::with_tol(1e-12))?;
    Ok(times
        .iter()
        .zip(&rec.states)
        .map(|(t, st)| (st.get(0) - a * C64::cis(-a.norm_sqr() * t.ln())).norm())
        .fold(0.0, f64::max))
}

fn two_mode_closed_form(_: u64) -> Result<f64> {
    let (a, b) = (c(0.5, 0.2), c(-0.3, 0.6));
    let s = CoefficientState::from_modes(1.0, 1, &[(0, a), (1, b)])?;
    let cfg = FlowConfig { support: Some(vec![0, 1]), ..FlowConfig::with_tol(1e-12) };
    let mu = a.norm_sqr() + b.norm_sqr();
    let times = [3.0, 30.0, 100.0];
    let rec = evolve_dense(&s, &times, &cfg)?;
    let mut worst = 0.0f64;
    for (t, st) in times.iter().zip(&rec.states) {
        for (k, z) in [(0, a), (1, b)] {
            let exact = z * C64::cis(-(2.0 * mu - z.norm_sqr()) * t.ln());
            worst = worst.max((st.get(k) - exact).norm());
        }
    }
    Ok(worst)
}

fn nls_residual_order(_: u64) -> Result<f64> {
    let s = CoefficientState::from_modes(1.0, 0, &[(0, c(0.8, 0.3))])?;
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-2.0, 2.0, 41);
    let residual = |d: f64| -> Result<f64> {
        let states = [evolve(&s, 2.0 - d, &cfg)?, evolve(&s, 2.0, &cfg)?, evolve(&s, 2.0 + d, &cfg)?];
        nls_residual(&states, &grid)
    };
    Ok((residual(0.02)? / residual(0.01)?).log2())
}

fn frame_orthonormality(seed: u64) -> Result<f64> {
    let v = gaussian_states(seed, 2, 1)?.remove(0).scaled(c(0.3, 0.0));
    let fam = reconstruct_from_state(
        &v,
        &FlowConfig::with_tol(1e-11),
        &[1.0, 0.3, 0.1],
        &linspace(-3.0, 3.0, 301),
        &Anchor::default(),
        &ReconstructOptions::default(),
    )?;
    Ok(fam.max_orthonormality_defect.max(fam.tangent_norm_defect()))
}

fn compatibility_order(_: u64) -> Result<f64> {
    let s = CoefficientState::from_modes(1.0, 1, &[(1, c(0.5, 0.1))])?;
    let cfg = FlowConfig::with_tol(1e-13);
    let grid = linspace(-3.0, 3.0, 301);
    let opts = ReconstructOptions { substep: 0.02, keep_frames: true };
    let defect = |d: f64| -> Result<f64> {
        let fam = reconstruct_from_state(&s, &cfg, &[0.5 + d, 0.5, 0.5 - d], &grid, &Anchor::default(), &opts)?;
        compatibility_defect(fam.frames.as_deref().unwrap_or_default())
    };
    Ok((defect(0.02)? / defect(0.01)?).log2())
}

fn two_mode_alpha_residual(_: u64) -> Result<f64> {
    let s = CoefficientState::from_modes(1.0, 1, &[(0, c(0.6, -0.2)), (1, c(0.3, 0.4))])?;
    let cfg = FlowConfig { support: Some(vec![0, 1]), ..FlowConfig::with_tol(1e-12) };
    let rec = evolve_dense(&s, &alpha_ladder(200.0, 64)?, &cfg)?;
    Ok(extract_alpha(&rec, &AlphaOptions::default())?.max_residual())
}

fn single_mode_density(_: u64) -> Result<f64> {
    let v = CoefficientState::from_modes(1.0, 0, &[(0, c(0.9, -0.4))])?;
    Ok(density_log(&v, 50.0, 0.5, &FlowConfig::with_tol(1e-10), &QuadratureOptions::default())?.0.abs())
}

fn density_routes_agree(seed: u64) -> Result<f64> {
    let p = MeasureParams { s: 0.5, m: 4.0, n: 4, seed };
    let v = sample_rho(&p, 1)?.states.remove(0);
    let flow = FlowConfig::with_tol(1e-11);
    let (q, _) = density_log(&v, 10.0, p.s, &flow, &QuadratureOptions { tol: 1e-9, ..Default::default() })?;
    Ok((q - density_log_energy(&v, 10.0, p.s, &flow)?).abs())
}

fn sampling_determinism(seed: u64) -> Result<f64> {
    let p = MeasureParams { s: 0.5, m: 4.0, n: 6, seed };
    let (a, b) = (sample_rho(&p, 32)?, sample_rho(&p, 32)?);
    Ok(if a == b { 0.0 } else { 1.0 })
}
