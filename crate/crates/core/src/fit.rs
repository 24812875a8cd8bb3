//! Least-squares rate fits.

use serde::{Deserialize, Serialize};

use crate::error::{LabError, Result};

/// Fitted power law `y ≈ e^{intercept} x^{exponent}` over `window`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    /// Standard error of the exponent.
    pub exponent_se: f64,
}

/// Ordinary least squares `y = a + b x`; returns `(b, a, r², se(b))`.
pub fn linear_regression(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if x.len() != y.len() {
        return Err(LabError::input("regression inputs differ in length"));
    }
    let n = x.len();
    if n < 2 {
        return Err(LabError::input("regression needs at least two points"));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(LabError::input("regression abscissae are all equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let r2 = if syy == 0.0 { 1.0 } else { (1.0 - sse / syy).clamp(0.0, 1.0) };
    let se = if n > 2 { (sse / (nf - 2.0) / sxx).sqrt() } else { 0.0 };
    Ok((slope, intercept, r2, se))
}

/// Log-log fit of positive pairs; non-positive or non-finite entries are skipped.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<RateFit> {
    let (lx, ly): (Vec<f64>, Vec<f64>) = x
        .iter()
        .zip(y)
        .filter(|(a, b)| **a > 0.0 && **b > 0.0 && a.is_finite() && b.is_finite())
        .map(|(a, b)| (a.ln(), b.ln()))
        .unzip();
    let (slope, intercept, r2, se) = linear_regression(&lx, &ly)?;
    let lo = lx.iter().cloned().fold(f64::INFINITY, f64::min).exp();
    let hi = lx.iter().cloned().fold(f64::NEG_INFINITY, f64::max).exp();
    Ok(RateFit { exponent: slope, intercept, r_squared: r2, window: (lo, hi), exponent_se: se })
}

/// Median of a non-empty slice (NaNs sort last).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 { v[m] } else { 0.5 * (v[m - 1] + v[m]) })
}
