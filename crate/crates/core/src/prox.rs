//! Closed-form proximity operators for `g = ‖·‖₁` and a box constraint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{FeatureMap, Image};

/// Box `[lo, hi]` applied entrywise. Infinite bounds are allowed and give
/// the unconstrained (linear) regime.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxConstraint {
    pub lo: f64,
    pub hi: f64,
}

impl Default for BoxConstraint {
    fn default() -> Self {
        BoxConstraint { lo: 0.0, hi: 1.0 }
    }
}

impl BoxConstraint {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::Parameter(format!("invalid box [{lo}, {hi}]")));
        }
        Ok(BoxConstraint { lo, hi })
    }

    pub fn unbounded() -> Self {
        BoxConstraint {
            lo: f64::NEG_INFINITY,
            hi: f64::INFINITY,
        }
    }

    pub fn contains(&self, v: f64, slack: f64) -> bool {
        v >= self.lo - slack && v <= self.hi + slack
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.max(self.lo).min(self.hi)
    }

    /// 1 where `v` lies strictly inside the box (derivative of the clamp).
    pub fn active(&self, v: f64) -> bool {
        v > self.lo && v < self.hi
    }
}

/// Euclidean projection onto the box.
pub fn project_box(x: &Image, c: &BoxConstraint) -> Image {
    x.map(|v| c.clamp(v))
}

/// `HardTanh_ν`: projection onto the ℓ∞ ball of radius `ν`, i.e. the prox of
/// the conjugate of `ν‖·‖₁` (for any step size). `ν = ∞` is the identity.
pub fn hardtanh(u: &FeatureMap, nu: f64) -> FeatureMap {
    u.map(|v| v.max(-nu).min(nu))
}

/// Soft thresholding, the prox of `θ‖·‖₁`.
pub fn soft_threshold(u: &FeatureMap, theta: f64) -> FeatureMap {
    u.map(|v| v.signum() * (v.abs() - theta).max(0.0))
}

/// `P_C((v + μz)/(1 + μ))`, the prox of `μ(½‖· − z‖² + ι_C)` at `v`.
pub fn prox_quadratic_box(v: &Image, mu: f64, z: &Image, c: &BoxConstraint) -> Result<Image> {
    v.ensure_same_shape(z, "prox_quadratic_box")?;
    if !(mu > 0.0) {
        return Err(Error::Parameter(format!("mu {mu} must be > 0")));
    }
    Ok(v.zip_map(z, |a, b| c.clamp((a + mu * b) / (1.0 + mu))))
}
