//! Error bounds between the sample estimate and the exact potential.
//!
//! All bounds are returned raw. Probability bounds may exceed one; clamp
//! them when presenting.

use serde::{Deserialize, Serialize};

use super::{PotentialError, PotentialEstimate};

fn domain(msg: String) -> PotentialError {
    PotentialError::Domain(msg)
}

/// Probability that `k` i.i.d. draws all miss a sequence of mass `p_top1`:
/// `(1 - p_top1)^k`.
pub fn epsilon_tail(p_top1: f64, k: usize) -> Result<f64, PotentialError> {
    if !(p_top1 > 0.0 && p_top1 <= 1.0) {
        return Err(domain(format!("top-1 probability must be in (0, 1], got {p_top1}")));
    }
    if k < 1 {
        return Err(domain("K must be at least 1".into()));
    }
    Ok((1.0 - p_top1).powf(k as f64))
}

/// Absolute error bound `2 R^2 sqrt(ln(4/delta) / (2K))`, holding with
/// probability at least `1 - delta - 2 eps_tail`.
pub fn absolute_error_bound(r_k: f64, k: usize, delta: f64) -> Result<f64, PotentialError> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(domain(format!("delta must be in (0, 1), got {delta}")));
    }
    if !(r_k >= 0.0) || k < 1 {
        return Err(domain(format!("need r_k >= 0 and K >= 1, got r_k={r_k}, K={k}")));
    }
    Ok(2.0 * r_k * r_k * ((4.0 / delta).ln() / (2.0 * k as f64)).sqrt())
}

/// Expected error bound `2 R^2 sqrt(2 pi / K) + 4 R^2 eps_tail`.
pub fn expected_error_bound(r_k: f64, k: usize, eps_tail: f64) -> Result<f64, PotentialError> {
    if !(r_k >= 0.0) || k < 1 || !(0.0..=1.0).contains(&eps_tail) {
        return Err(domain(format!(
            "need r_k >= 0, K >= 1, eps_tail in [0, 1]; got r_k={r_k}, K={k}, eps_tail={eps_tail}"
        )));
    }
    let r2 = r_k * r_k;
    Ok(2.0 * r2 * (2.0 * std::f64::consts::PI / k as f64).sqrt() + 4.0 * r2 * eps_tail)
}

/// Tail bound `4 exp(-K lambda^2 / (2 R^4)) + 2 eps_tail` on
/// `Pr(|error| >= lambda)`.
pub fn concentration_tail_bound(r_k: f64, k: usize, lambda: f64, eps_tail: f64) -> Result<f64, PotentialError> {
    if !(lambda > 0.0) || !(r_k > 0.0) {
        return Err(domain(format!("need lambda > 0 and r_k > 0, got lambda={lambda}, r_k={r_k}")));
    }
    if k < 1 || !(0.0..=1.0).contains(&eps_tail) {
        return Err(domain(format!("need K >= 1 and eps_tail in [0, 1], got K={k}, eps_tail={eps_tail}")));
    }
    let r4 = r_k.powi(4);
    Ok(4.0 * (-(k as f64) * lambda * lambda / (2.0 * r4)).exp() + 2.0 * eps_tail)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailBound {
    pub lambda: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub delta: f64,
    pub abs_bound: f64,
    pub abs_confidence: f64,
    pub expected_bound: f64,
    pub tail_bounds: Vec<TailBound>,
    /// Set when `r_k` is zero and the tail bound is undefined.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub tail_undefined: bool,
}

/// All bounds for one estimate. `lambdas` must be ascending for the tail
/// bounds to come out decreasing.
pub fn bound_report<S>(est: &PotentialEstimate<S>, delta: f64, lambdas: &[f64]) -> Result<BoundReport, PotentialError> {
    let abs_bound = absolute_error_bound(est.r_k, est.k, delta)?;
    let expected_bound = expected_error_bound(est.r_k, est.k, est.eps_tail)?;
    let tail_undefined = est.r_k <= 0.0;
    let tail_bounds = if tail_undefined {
        Vec::new()
    } else {
        lambdas
            .iter()
            .map(|&lambda| {
                concentration_tail_bound(est.r_k, est.k, lambda, est.eps_tail).map(|bound| TailBound { lambda, bound })
            })
            .collect::<Result<_, _>>()?
    };
    Ok(BoundReport {
        delta,
        abs_bound,
        abs_confidence: 1.0 - delta - 2.0 * est.eps_tail,
        expected_bound,
        tail_bounds,
        tail_undefined,
    })
}
