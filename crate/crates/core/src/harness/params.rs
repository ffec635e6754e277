//! Window and alpha choices that balance the drift and variance terms of the
//! regret bounds, given `d`, `K`, `B_K` and `V_K`.

use serde::Serialize;

use super::HarnessError;
use crate::policy::ceil_tolerant;

/// Which side of the balancing condition was taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    First,
    Second,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParamChoice {
    pub window: usize,
    pub alpha: f64,
    pub branch: Branch,
    /// Window before rounding and clamping.
    pub raw_window: f64,
}

fn check(d: usize, k: usize, b: f64, v: f64) -> Result<(), HarnessError> {
    if d == 0 || k == 0 {
        return Err(HarnessError::Config("d and K must be positive".into()));
    }
    if !(b > 0.0 && b.is_finite() && v > 0.0 && v.is_finite()) {
        return Err(HarnessError::Config(format!(
            "B_K and V_K must be positive and finite, got B_K={b}, V_K={v}"
        )));
    }
    Ok(())
}

/// `lhs >= rhs` on logs, forgiving rounding noise at the boundary.
fn log_ge(lhs: f64, rhs: f64) -> bool {
    lhs >= rhs - 1e-12 * rhs.abs().max(1.0)
}

fn round_window(raw: f64, k: usize) -> usize {
    (ceil_tolerant(raw).max(1.0) as usize).min(k)
}

/// Known-variance policy: `w = d^{1/4} sqrt(V/B)` when `d V^6 >= K^4 B^2`,
/// otherwise `w = d^{1/6} (K/B)^{1/3}`; then `alpha = d^{-1/4} B^{1/2} w K^{-1/2}`.
pub fn select_woful_params(
    d: usize,
    k: usize,
    b: f64,
    v: f64,
) -> Result<ParamChoice, HarnessError> {
    check(d, k, b, v)?;
    let (df, kf) = (d as f64, k as f64);
    let (raw, branch) = if log_ge(df.ln() + 6.0 * v.ln(), 4.0 * kf.ln() + 2.0 * b.ln()) {
        (df.powf(0.25) * (v / b).sqrt(), Branch::First)
    } else {
        (df.powf(1.0 / 6.0) * (kf / b).cbrt(), Branch::Second)
    };
    let window = round_window(raw, k);
    let alpha = df.powf(-0.25) * b.sqrt() * window as f64 / kf.sqrt();
    Ok(ParamChoice {
        window,
        alpha,
        branch,
        raw_window: raw,
    })
}

/// Unknown-variance policy: `w = d^{1/3} (K/B)^{1/3}` when `K^2 >= V^3 d / B`,
/// otherwise `w = d^{2/5} (K V)^{1/5} / B^{2/5}`; then
/// `alpha = d^{1/6} sqrt(w) B^{1/3} / (K^{1/3} + (V K w)^{1/6})`.
pub fn select_save_params(d: usize, k: usize, b: f64, v: f64) -> Result<ParamChoice, HarnessError> {
    check(d, k, b, v)?;
    let (df, kf) = (d as f64, k as f64);
    let (raw, branch) = if log_ge(2.0 * kf.ln(), 3.0 * v.ln() + df.ln() - b.ln()) {
        (df.cbrt() * (kf / b).cbrt(), Branch::First)
    } else {
        (
            df.powf(0.4) * (kf * v).powf(0.2) / b.powf(0.4),
            Branch::Second,
        )
    };
    let window = round_window(raw, k);
    let w = window as f64;
    let alpha =
        df.powf(1.0 / 6.0) * w.sqrt() * b.cbrt() / (kf.cbrt() + (v * kf * w).powf(1.0 / 6.0));
    Ok(ParamChoice {
        window,
        alpha,
        branch,
        raw_window: raw,
    })
}
