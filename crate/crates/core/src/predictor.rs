//! Distribution-variable state predictor and the delay-identification cost.
//!
//! For a candidate delay `D̂` the predictor integrates the model from the
//! measured `x(t − β)` across the window `[t − β, t]` with the input
//! `u(s − D̂)`. With the true delay the prediction reproduces `x(t)`; the
//! squared residual `J(D̂) = ½‖x̂_p(1, t, D̂) − x(t)‖²` therefore measures how
//! wrong a candidate is, and its normalized negative gradient `ρ_D` drives
//! the delay estimator.
//!
//! Integration runs in physical time `s = t − β + βδ`; the δ-form of the
//! predictor is the same ODE rescaled by β. `n_quad` sets the largest RK4
//! step (`β / n_quad`); steps are additionally split at input switches so
//! held inputs are integrated exactly.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dynamics::{integrate, DynamicsError, SystemModel};
use crate::history::{Delayed, InputSignal};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictorConfig {
    /// Lookback window β (s).
    pub beta: f64,
    /// RK4 steps across the window.
    pub n_quad: usize,
    /// Finite-difference width for `∂x̂_p/∂D̂` (s).
    pub fd_eps: f64,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            n_quad: 64,
            fd_eps: 1e-4,
        }
    }
}

impl PredictorConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err("beta must be positive".into());
        }
        if self.n_quad < 16 {
            return Err("n_quad must be at least 16".into());
        }
        if !(self.fd_eps > 0.0) {
            return Err("fd_eps must be positive".into());
        }
        Ok(())
    }

    pub fn max_step(&self) -> f64 {
        self.beta / self.n_quad as f64
    }
}

/// Everything the estimator needs from one predictor evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionResult {
    pub x_pred: DVector<f64>,
    pub cost: f64,
    /// `∂J/∂D̂`.
    pub grad: f64,
    /// `∂x̂_p/∂D̂`.
    pub sensitivity: DVector<f64>,
    pub rho: f64,
}

/// `x̂_p(1, t, D)`.
pub fn predict_state<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    input: &S,
    x_t_minus_beta: &DVector<f64>,
    t: f64,
    delay: f64,
    cfg: &PredictorConfig,
) -> Result<DVector<f64>, DynamicsError> {
    if delay < 0.0 {
        return Err(DynamicsError::Invalid("candidate delay must be non-negative"));
    }
    let shifted = Delayed::new(input, delay);
    integrate(model, x_t_minus_beta, t - cfg.beta, t, &shifted, cfg.max_step())
}

pub fn cost<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    input: &S,
    x_t: &DVector<f64>,
    x_t_minus_beta: &DVector<f64>,
    t: f64,
    delay: f64,
    cfg: &PredictorConfig,
) -> Result<f64, DynamicsError> {
    let xp = predict_state(model, input, x_t_minus_beta, t, delay, cfg)?;
    Ok(0.5 * (xp - x_t).norm_squared())
}

/// Predictor output, cost, gradient and `ρ_D` at `d_hat`.
///
/// `∂x̂_p/∂D̂` is a central difference of width `fd_eps` (forward difference
/// when `d_hat < fd_eps`, since negative delays would read uncommitted input).
pub fn evaluate<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    input: &S,
    x_t: &DVector<f64>,
    x_t_minus_beta: &DVector<f64>,
    t: f64,
    d_hat: f64,
    cfg: &PredictorConfig,
) -> Result<PredictionResult, DynamicsError> {
    let x_pred = predict_state(model, input, x_t_minus_beta, t, d_hat, cfg)?;
    let h = cfg.fd_eps;
    let sensitivity = if d_hat >= h {
        let xp = predict_state(model, input, x_t_minus_beta, t, d_hat + h, cfg)?;
        let xm = predict_state(model, input, x_t_minus_beta, t, d_hat - h, cfg)?;
        (xp - xm) / (2.0 * h)
    } else {
        let xp = predict_state(model, input, x_t_minus_beta, t, d_hat + h, cfg)?;
        (xp - &x_pred) / h
    };
    let residual = &x_pred - x_t;
    let cost = 0.5 * residual.norm_squared();
    let grad = residual.dot(&sensitivity);
    let rho = -grad / (1.0 + sensitivity.norm_squared());
    Ok(PredictionResult {
        x_pred,
        cost,
        grad,
        sensitivity,
        rho,
    })
}

pub fn rho<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    input: &S,
    x_t: &DVector<f64>,
    x_t_minus_beta: &DVector<f64>,
    t: f64,
    d_hat: f64,
    cfg: &PredictorConfig,
) -> Result<f64, DynamicsError> {
    evaluate(model, input, x_t, x_t_minus_beta, t, d_hat, cfg).map(|r| r.rho)
}
