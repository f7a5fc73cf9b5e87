//! Nonlinear disturbance observer for the delay-induced input mismatch
//! `d(t) = u(t − D) − u(t − D̂)`, and its analytic error envelope `M_d(t)`.
//!
//! The observer runs on the `D̂`-delayed model with `d` entering through `g`:
//!
//! ```text
//! d̂ = z + α_h·P(x)
//! ż = −α_h·L_d(x)·(f(x) + g(x)·(u(t − D̂) + d̂))
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::SystemModel;

/// Observer gain pair with `∂P/∂x = L_d`.
pub trait GainFunctions {
    fn p(&self, x: &DVector<f64>) -> DVector<f64>;
    fn l_d(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverParams {
    pub alpha_h: f64,
    /// Envelope constant, `0 < c < 2·alpha_h`.
    pub c: f64,
    /// Bound on `‖ḋ‖`.
    pub w1: f64,
    /// Bound on the initial estimation error.
    pub e_d0_bound: f64,
}

impl ObserverParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha_h > 0.0) {
            return Err("alpha_h must be positive".into());
        }
        if !(self.c > 0.0 && self.c < 2.0 * self.alpha_h) {
            return Err("c must lie in (0, 2·alpha_h)".into());
        }
        if !(self.w1 >= 0.0 && self.e_d0_bound >= 0.0) {
            return Err("w1 and e_d0_bound must be non-negative".into());
        }
        Ok(())
    }

    pub fn k(&self) -> f64 {
        self.alpha_h - 0.5 * self.c
    }

    /// `M_d(t)`, `t` measured from observer start.
    pub fn envelope(&self, t: f64) -> f64 {
        let k = self.k();
        let two_ck = 2.0 * self.c * k;
        let decay = (-2.0 * k * t.max(0.0)).exp();
        ((two_ck * self.e_d0_bound.powi(2) * decay + self.w1.powi(2) * (1.0 - decay)) / two_ck).sqrt()
    }

    /// `lim M_d = w1/√(2ck)`.
    pub fn envelope_limit(&self) -> f64 {
        self.w1 / (2.0 * self.c * self.k()).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceObserver {
    pub params: ObserverParams,
    pub z: DVector<f64>,
    pub d_hat: DVector<f64>,
    pub t0: f64,
}

impl DisturbanceObserver {
    /// Starts at `t0` with `d̂ = d_hat0`.
    pub fn new<G: GainFunctions + ?Sized>(
        params: ObserverParams,
        gains: &G,
        x0: &DVector<f64>,
        d_hat0: DVector<f64>,
        t0: f64,
    ) -> Result<Self, String> {
        params.validate()?;
        let z = &d_hat0 - gains.p(x0) * params.alpha_h;
        Ok(Self {
            params,
            z,
            d_hat: d_hat0,
            t0,
        })
    }

    /// One Euler step of `z` with the right-hand side evaluated at `x`
    /// (time `t`) followed by `d̂ = z + α_h·P(x_next)`.
    #[allow(clippy::too_many_arguments)]
    pub fn step<G: GainFunctions + ?Sized>(
        &mut self,
        gains: &G,
        model: &dyn SystemModel,
        t: f64,
        x: &DVector<f64>,
        x_next: &DVector<f64>,
        u_delayed: &DVector<f64>,
        dt: f64,
    ) {
        let a = self.params.alpha_h;
        let flow = model.drift(t, x) + model.actuation(t, x) * (u_delayed + &self.d_hat);
        let z_dot = gains.l_d(x) * flow * (-a);
        self.z += z_dot * dt;
        self.d_hat = &self.z + gains.p(x_next) * a;
    }

    pub fn envelope(&self, t: f64) -> f64 {
        self.params.envelope(t - self.t0)
    }
}
