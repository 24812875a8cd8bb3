//! Spectral laboratory for the binormal flow of vortex filaments.
//!
//! The crate evolves the Galerkin-truncated Fourier-coefficient system of the
//! cubic Schrödinger equation with a `1/t` nonlinearity, maps coefficient
//! trajectories to solutions `u(t, x)` of the focusing cubic NLS on the line,
//! reconstructs the associated filaments through parallel-frame transport, and
//! runs the singular-limit and Gaussian-measure experiments built on top.
//!
//! Module map:
//!
//! * [`spectral`]: coefficient states, resonance arithmetic, norms, synthesis.
//! * [`ode`]: Dormand–Prince 5(4) stepper with dense output, fixed-step RK4.
//! * [`flow`]: the truncated coefficient flow, gauge map and diagnostics.
//! * [`hasimoto`]: NLS field evaluation, frame transport, curve reconstruction.
//! * [`singularity`]: `t → 0` asymptotics, √t convergence, Hölder fits, corners.
//! * [`measure`]: Gaussian sampling, Radon–Nikodym densities, Monte Carlo checks.
//! * [`fit`]: log-log regressions shared by the experiment modules.
//! * [`stencil`]: finite-difference weights on arbitrary nodes.
//!
//! # Conventions
//!
//! Coefficients `B_k(τ)`, `|k| ≤ N`, obey
//! `∂_τ B_k = −(i/τ) Σ_{k−j1+j2−j3=0} e^{−iτω} B_{j1} conj(B_{j2}) B_{j3}` with
//! `ω = k² − j1² + j2² − j3²`. The mode-sum pairing
//! `⟨f, g⟩ = Σ_k f̂(k) conj(ĝ(k))` carries no `2π` factor, so the mass is
//! `Σ_k |B_k|²`. The line solution is
//! `u(t, x) = t^{−1/2} Σ_j B_j(1/t) e^{i(x−2j)²/(4t)}`, which focuses at the
//! points `x = 2j`. It solves `i u_t + u_xx + |u|² u = 0` exactly when the
//! coefficient block is closed under the cubic interaction (a single mode);
//! a truncated block leaves a residual of size `O(|B|³)` from the dropped modes.
//! Parallel frames are driven by the filament function `ψ = √2 u`, the scaling
//! for which the space and time frame equations are compatible.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod fit;
pub mod flow;
pub mod hasimoto;
pub mod measure;
pub mod ode;
pub mod par;
pub mod singularity;
pub mod spectral;
pub mod stencil;

pub use error::{LabError, Result};
pub use num_complex::Complex64 as C64;
pub use spectral::{CoefficientState, GridField, ModeIndex};
