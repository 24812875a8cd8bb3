//! Explicit Runge–Kutta integrators for complex ODE systems `y' = f(t, y)`.
//!
//! [`Dopri5`] is the Dormand–Prince 5(4) pair with the Hairer dense output
//! and a PI step-size controller; [`Rk4`] is the classical fixed-step scheme
//! with cubic Hermite interpolation. Both advance one step at a time and hand
//! back a [`DenseStep`] that interpolates inside the step, so callers can
//! stream observables without storing the trajectory.

use crate::error::{LabError, Result};
use crate::C64;

/// Right-hand side `f(t, y, dy)` writing into `dy`.
pub trait Rhs {
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]);
}

impl<F: FnMut(f64, &[C64], &mut [C64])> Rhs for F {
    fn eval(&mut self, t: f64, y: &[C64], dy: &mut [C64]) {
        self(t, y, dy)
    }
}

/// Interpolant over one accepted step `[t0, t0 + h]`.
#[derive(Clone, Debug)]
pub struct DenseStep {
    pub t0: f64,
    pub h: f64,
    kind: DenseKind,
}

#[derive(Clone, Debug)]
enum DenseKind {
    /// Hairer's continuous extension of order 4, five coefficient vectors.
    Dopri([Vec<C64>; 5]),
    /// Cubic Hermite from endpoint values and slopes.
    Hermite { y0: Vec<C64>, y1: Vec<C64>, f0: Vec<C64>, f1: Vec<C64> },
}

impl DenseStep {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    /// State at the right end of the step.
    pub fn end(&self) -> Vec<C64> {
        match &self.kind {
            DenseKind::Dopri(r) => r[0].iter().zip(&r[1]).map(|(a, b)| a + b).collect(),
            DenseKind::Hermite { y1, .. } => y1.clone(),
        }
    }

    /// Interpolated state at `t` (any `t` between the step ends).
    pub fn eval(&self, t: f64) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); self.dim()];
        self.eval_into(t, &mut out);
        out
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            DenseKind::Dopri(r) => r[0].len(),
            DenseKind::Hermite { y0, .. } => y0.len(),
        }
    }

    pub fn eval_into(&self, t: f64, out: &mut [C64]) {
        let theta = (t - self.t0) / self.h;
        let th1 = 1.0 - theta;
        match &self.kind {
            DenseKind::Dopri(r) => {
                for i in 0..out.len() {
                    out[i] = r[0][i] + theta * (r[1][i] + th1 * (r[2][i] + theta * (r[3][i] + th1 * r[4][i])));
                }
            }
            DenseKind::Hermite { y0, y1, f0, f1 } => {
                let h = self.h;
                let h00 = (1.0 + 2.0 * theta) * th1 * th1;
                let h10 = theta * th1 * th1;
                let h01 = theta * theta * (3.0 - 2.0 * theta);
                let h11 = -theta * theta * th1;
                for i in 0..out.len() {
                    out[i] = h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i];
                }
            }
        }
    }
}

/// Step-size controls shared by the adaptive scheme.
#[derive(Clone, Copy, Debug)]
pub struct Tolerances {
    pub rtol: f64,
    pub atol: f64,
    pub max_step: f64,
    /// Steps below `min_step_factor · |t|` count as underflow.
    pub min_step_factor: f64,
    pub max_steps: usize,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { rtol: 1e-10, atol: 1e-10, max_step: f64::INFINITY, min_step_factor: 1e-14, max_steps: 50_000_000 }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

/// Adaptive Dormand–Prince 5(4) stepper. Integrates forward or backward.
pub struct Dopri5<F: Rhs> {
    f: F,
    tol: Tolerances,
    t: f64,
    y: Vec<C64>,
    h: f64,
    k: [Vec<C64>; 7],
    tmp: Vec<C64>,
    err_old: f64,
    pub accepted: usize,
    pub rejected: usize,
    pub evaluations: usize,
}

impl<F: Rhs> Dopri5<F> {
    pub fn new(mut f: F, t0: f64, y0: Vec<C64>, tol: Tolerances) -> Result<Self> {
        if !(tol.rtol > 0.0 && tol.atol > 0.0 && tol.max_step > 0.0) {
            return Err(LabError::input("rtol, atol and max_step must be positive"));
        }
        let n = y0.len();
        let zero = || vec![C64::new(0.0, 0.0); n];
        let mut k = [zero(), zero(), zero(), zero(), zero(), zero(), zero()];
        f.eval(t0, &y0, &mut k[0]);
        Ok(Self {
            f,
            tol,
            t: t0,
            y: y0,
            h: 0.0,
            k,
            tmp: zero(),
            err_old: 1e-4,
            accepted: 0,
            rejected: 0,
            evaluations: 1,
        })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn into_state(self) -> (f64, Vec<C64>) {
        (self.t, self.y)
    }

    /// Hairer's starting-step heuristic.
    fn initial_step(&mut self, dir: f64) -> f64 {
        let n = self.y.len().max(1) as f64;
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for (y, f) in self.y.iter().zip(&self.k[0]) {
            let sc = self.tol.atol + self.tol.rtol * y.norm();
            d0 += (y.norm() / sc).powi(2);
            d1 += (f.norm() / sc).powi(2);
        }
        let (d0, d1) = ((d0 / n).sqrt(), (d1 / n).sqrt());
        let mut h = if d0 < 1e-10 || d1 < 1e-10 { 1e-6 } else { 0.01 * d0 / d1 };
        h = h.min(self.tol.max_step);
        for i in 0..self.y.len() {
            self.tmp[i] = self.y[i] + dir * h * self.k[0][i];
        }
        let (head, tail) = self.k.split_at_mut(1);
        self.f.eval(self.t + dir * h, &self.tmp, &mut tail[0]);
        self.evaluations += 1;
        let mut d2 = 0.0;
        for i in 0..self.y.len() {
            let sc = self.tol.atol + self.tol.rtol * self.y[i].norm();
            d2 += ((tail[0][i] - head[0][i]).norm() / sc).powi(2);
        }
        let d2 = (d2 / n).sqrt() / h;
        let der = d1.max(d2);
        let h1 = if der <= 1e-15 { (h * 1e-3).max(1e-6) } else { (0.01 / der).powf(0.2) };
        (100.0 * h).min(h1).min(self.tol.max_step)
    }

    /// Advances by one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<DenseStep> {
        let span = t_limit - self.t;
        if span == 0.0 {
            return Err(LabError::input("step requested with zero span"));
        }
        let dir = span.signum();
        if self.h == 0.0 {
            self.h = self.initial_step(dir);
        }
        let n = self.y.len();
        let mut tries = 0usize;
        loop {
            tries += 1;
            if self.accepted + self.rejected > self.tol.max_steps {
                return Err(LabError::Integration {
                    last_good_t: self.t,
                    reason: format!("step budget of {} exhausted", self.tol.max_steps),
                });
            }
            let mut h = self.h.min(self.tol.max_step);
            let mut last = false;
            if h >= span.abs() * (1.0 - 1e-12) {
                h = span.abs();
                last = true;
            }
            let hmin = self.tol.min_step_factor * self.t.abs().max(1.0);
            if h < hmin && !last {
                return Err(LabError::Integration {
                    last_good_t: self.t,
                    reason: format!("step size {h:e} underflowed at t = {}", self.t),
                });
            }
            let hs = dir * h;
            let t = self.t;
            let y = &self.y;
            let [k1, k2, k3, k4, k5, k6, k7] = &mut self.k;
            let tmp = &mut self.tmp;
            for i in 0..n {
                tmp[i] = y[i] + hs * A21 * k1[i];
            }
            self.f.eval(t + C2 * hs, tmp, k2);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A31 * k1[i] + A32 * k2[i]);
            }
            self.f.eval(t + C3 * hs, tmp, k3);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A41 * k1[i] + A42 * k2[i] + A43 * k3[i]);
            }
            self.f.eval(t + C4 * hs, tmp, k4);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A51 * k1[i] + A52 * k2[i] + A53 * k3[i] + A54 * k4[i]);
            }
            self.f.eval(t + C5 * hs, tmp, k5);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A61 * k1[i] + A62 * k2[i] + A63 * k3[i] + A64 * k4[i] + A65 * k5[i]);
            }
            let t_new = if last { t_limit } else { t + hs };
            self.f.eval(t_new, tmp, k6);
            for i in 0..n {
                tmp[i] = y[i] + hs * (A71 * k1[i] + A73 * k3[i] + A74 * k4[i] + A75 * k5[i] + A76 * k6[i]);
            }
            self.f.eval(t_new, tmp, k7);
            self.evaluations += 6;

            let mut err = 0.0;
            for i in 0..n {
                let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
                let sc = self.tol.atol + self.tol.rtol * y[i].norm().max(tmp[i].norm());
                err += (e.norm() / sc).powi(2);
            }
            let err = if n == 0 { 0.0 } else { (err / n as f64).sqrt() };
            if !err.is_finite() {
                self.h = h * 0.1;
                self.rejected += 1;
                if tries > 100 {
                    return Err(LabError::Integration {
                        last_good_t: self.t,
                        reason: "non-finite error estimate".into(),
                    });
                }
                continue;
            }

            const SAFETY: f64 = 0.9;
            const BETA: f64 = 0.04;
            const EXPO: f64 = 0.2 - BETA * 0.75;
            if err <= 1.0 {
                let fac11 = err.powf(EXPO);
                let mut fac = fac11 / self.err_old.powf(BETA) / SAFETY;
                fac = fac.clamp(1.0 / 10.0, 1.0 / 0.2);
                let h_next = h / fac;
                self.err_old = err.max(1e-4);

                let r1 = y.clone();
                let mut r2 = vec![C64::new(0.0, 0.0); n];
                let mut r3 = r2.clone();
                let mut r4 = r2.clone();
                let mut r5 = r2.clone();
                for i in 0..n {
                    let dy = tmp[i] - y[i];
                    r2[i] = dy;
                    r3[i] = hs * k1[i] - dy;
                    r4[i] = dy - hs * k7[i] - r3[i];
                    r5[i] = hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
                }
                let dense = DenseStep { t0: t, h: t_new - t, kind: DenseKind::Dopri([r1, r2, r3, r4, r5]) };
                self.y.copy_from_slice(&self.tmp);
                self.k.swap(0, 6);
                self.t = t_new;
                self.accepted += 1;
                // keep the pre-truncation step so a short final step does not shrink the next call
                if !last || h_next > self.h {
                    self.h = h_next;
                }
                return Ok(dense);
            }
            let fac11 = err.powf(EXPO);
            self.h = h / (fac11 / SAFETY).min(1.0 / 0.2);
            self.rejected += 1;
        }
    }

    /// Integrates to `t_end`, calling `on_step` with each accepted interpolant.
    pub fn run_to(&mut self, t_end: f64, mut on_step: impl FnMut(&DenseStep)) -> Result<()> {
        while self.t != t_end {
            let step = self.step(t_end)?;
            on_step(&step);
        }
        Ok(())
    }
}

/// Classical fourth-order Runge–Kutta with a fixed step.
pub struct Rk4<F: Rhs> {
    f: F,
    t: f64,
    y: Vec<C64>,
    h: f64,
    f0: Vec<C64>,
    pub steps: usize,
}

impl<F: Rhs> Rk4<F> {
    pub fn new(mut f: F, t0: f64, y0: Vec<C64>, h: f64) -> Result<Self> {
        if !(h > 0.0) || !h.is_finite() {
            return Err(LabError::input("fixed step must be positive and finite"));
        }
        let mut f0 = vec![C64::new(0.0, 0.0); y0.len()];
        f.eval(t0, &y0, &mut f0);
        Ok(Self { f, t: t0, y: y0, h, f0, steps: 0 })
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &[C64] {
        &self.y
    }

    pub fn into_state(self) -> (f64, Vec<C64>) {
        (self.t, self.y)
    }

    pub fn step(&mut self, t_limit: f64) -> Result<DenseStep> {
        let span = t_limit - self.t;
        if span == 0.0 {
            return Err(LabError::input("step requested with zero span"));
        }
        let dir = span.signum();
        let t_new = if self.h >= span.abs() * (1.0 - 1e-12) { t_limit } else { self.t + dir * self.h };
        let hs = t_new - self.t;
        let n = self.y.len();
        let zero = vec![C64::new(0.0, 0.0); n];
        let (mut k2, mut k3, mut k4, mut tmp) = (zero.clone(), zero.clone(), zero.clone(), zero.clone());
        shifted(&self.y, 0.5 * hs, &self.f0, &mut tmp);
        self.f.eval(self.t + 0.5 * hs, &tmp, &mut k2);
        shifted(&self.y, 0.5 * hs, &k2, &mut tmp);
        self.f.eval(self.t + 0.5 * hs, &tmp, &mut k3);
        shifted(&self.y, hs, &k3, &mut tmp);
        self.f.eval(t_new, &tmp, &mut k4);
        let mut y1 = zero.clone();
        for (i, y) in y1.iter_mut().enumerate() {
            *y = self.y[i] + hs / 6.0 * (self.f0[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        let mut f1 = zero;
        self.f.eval(t_new, &y1, &mut f1);
        let dense = DenseStep {
            t0: self.t,
            h: hs,
            kind: DenseKind::Hermite { y0: self.y.clone(), y1: y1.clone(), f0: self.f0.clone(), f1: f1.clone() },
        };
        self.y = y1;
        self.f0 = f1;
        self.t = t_new;
        self.steps += 1;
        Ok(dense)
    }
}

/// `out = y + a·k`.
fn shifted(y: &[C64], a: f64, k: &[C64], out: &mut [C64]) {
    for ((o, y), k) in out.iter_mut().zip(y).zip(k) {
        *o = y + a * k;
    }
}

/// Either stepper behind one interface.
#[allow(clippy::large_enum_variant)] // one per evolution
pub enum Stepper<F: Rhs> {
    Adaptive(Dopri5<F>),
    Fixed(Rk4<F>),
}

impl<F: Rhs> Stepper<F> {
    pub fn t(&self) -> f64 {
        match self {
            Stepper::Adaptive(s) => s.t(),
            Stepper::Fixed(s) => s.t(),
        }
    }

    pub fn y(&self) -> &[C64] {
        match self {
            Stepper::Adaptive(s) => s.y(),
            Stepper::Fixed(s) => s.y(),
        }
    }

    pub fn step(&mut self, t_limit: f64) -> Result<DenseStep> {
        match self {
            Stepper::Adaptive(s) => s.step(t_limit),
            Stepper::Fixed(s) => s.step(t_limit),
        }
    }

    pub fn into_state(self) -> (f64, Vec<C64>) {
        match self {
            Stepper::Adaptive(s) => s.into_state(),
            Stepper::Fixed(s) => s.into_state(),
        }
    }

    pub fn steps_taken(&self) -> usize {
        match self {
            Stepper::Adaptive(s) => s.accepted,
            Stepper::Fixed(s) => s.steps,
        }
    }
}
