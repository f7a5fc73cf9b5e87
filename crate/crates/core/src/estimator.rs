//! Projected-gradient delay estimator `D̂̇ = γ·Proj_[a,b](D̂, ρ_D)`.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EstimatorError {
    #[error("estimate {f} outside projection interval [{a}, {b}]")]
    OutOfInterval { f: f64, a: f64, b: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(&'static str),
}

/// Projection operator: blocks motion that would leave `[a, b]`.
pub fn proj(f: f64, a: f64, b: f64, g: f64) -> Result<f64, EstimatorError> {
    if !(a <= f && f <= b) {
        return Err(EstimatorError::OutOfInterval { f, a, b });
    }
    if (f <= a && g < 0.0) || (f >= b && g > 0.0) {
        Ok(0.0)
    } else {
        Ok(g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayEstimate {
    pub d_hat: f64,
    pub gamma: f64,
    pub proj_lo: f64,
    pub proj_hi: f64,
}

impl DelayEstimate {
    pub fn new(d_hat: f64, gamma: f64, proj_lo: f64, proj_hi: f64) -> Result<Self, EstimatorError> {
        if !(gamma > 0.0) {
            return Err(EstimatorError::Invalid("gamma must be positive"));
        }
        if !(0.0 <= proj_lo && proj_lo <= proj_hi) {
            return Err(EstimatorError::Invalid(
                "projection interval must satisfy 0 <= lo <= hi",
            ));
        }
        if !(proj_lo <= d_hat && d_hat <= proj_hi) {
            return Err(EstimatorError::OutOfInterval {
                f: d_hat,
                a: proj_lo,
                b: proj_hi,
            });
        }
        Ok(Self {
            d_hat,
            gamma,
            proj_lo,
            proj_hi,
        })
    }

    /// One explicit-Euler step followed by a clamp onto the interval.
    pub fn update(&self, rho: f64, dt: f64) -> Result<Self, EstimatorError> {
        if !(dt > 0.0) {
            return Err(EstimatorError::Invalid("dt must be positive"));
        }
        let g = proj(self.d_hat, self.proj_lo, self.proj_hi, rho)?;
        let d_hat = (self.d_hat + dt * self.gamma * g).clamp(self.proj_lo, self.proj_hi);
        Ok(Self { d_hat, ..*self })
    }

    /// Replaces the projection interval and re-clamps the estimate into it.
    pub fn set_interval(&mut self, lo: f64, hi: f64) -> Result<(), EstimatorError> {
        if !(0.0 <= lo && lo <= hi) {
            return Err(EstimatorError::Invalid(
                "projection interval must satisfy 0 <= lo <= hi",
            ));
        }
        self.proj_lo = lo;
        self.proj_hi = hi;
        self.d_hat = self.d_hat.clamp(lo, hi);
        Ok(())
    }
}
