//! Set-membership delay bounds.
//!
//! A candidate delay `D*` stays in the bound set only if its prediction error
//! `e_p(D*) = ‖x̂_p(1, t, D*) − x(t)‖` does not exceed the error budget
//! `‖B‖ + β∫₀¹ σ_max(g(x̂_p))·M_d dy`, where `B` is the residual of the
//! predictor that runs on `u(s − D̂) + d̂(s)`. Each update keeps the smallest
//! interval enclosing every feasible grid point, so the set only shrinks.

use nalgebra::DVector;
use rayon::prelude::*;

use crate::dynamics::{integrate_dense, spectral_norm, DynamicsError, SystemModel};
use crate::history::{Delayed, InputSignal, Sum};
use crate::predictor::{predict_state, PredictorConfig};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayBoundSet {
    pub lo: f64,
    pub hi: f64,
    pub epoch: usize,
}

impl DelayBoundSet {
    pub fn new(lo: f64, hi: f64) -> Result<Self, DynamicsError> {
        if !(0.0 <= lo && lo <= hi && hi.is_finite()) {
            return Err(DynamicsError::Invalid("bound set must satisfy 0 <= lo <= hi"));
        }
        Ok(Self { lo, hi, epoch: 0 })
    }

    pub fn d_tilde_max(&self) -> f64 {
        d_tilde_max(self)
    }

    pub fn contains(&self, d: f64) -> bool {
        self.lo <= d && d <= self.hi
    }
}

/// `D̃_max = D̄ − D̲`.
pub fn d_tilde_max(set: &DelayBoundSet) -> f64 {
    set.hi - set.lo
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PredictionErrorBudget {
    pub residual_b: f64,
    pub disturbance_term: f64,
    pub total: f64,
}

impl PredictionErrorBudget {
    pub fn new(residual_b: f64, disturbance_term: f64) -> Self {
        Self {
            residual_b,
            disturbance_term,
            total: residual_b + disturbance_term,
        }
    }
}

/// `e_p(D*)`.
pub fn prediction_error<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    input: &S,
    x_t: &DVector<f64>,
    x_t_minus_beta: &DVector<f64>,
    t: f64,
    candidate: f64,
    cfg: &PredictorConfig,
) -> Result<f64, DynamicsError> {
    Ok((predict_state(model, input, x_t_minus_beta, t, candidate, cfg)? - x_t).norm())
}

/// Error budget at time `t` for the estimate `d_hat`.
///
/// `d_hat_history` is the logged observer output (held between samples);
/// `envelope` maps absolute time to `M_d`.
#[allow(clippy::too_many_arguments)]
pub fn error_budget<S, H, M>(
    model: &dyn SystemModel,
    input: &S,
    d_hat_history: &H,
    x_t: &DVector<f64>,
    x_t_minus_beta: &DVector<f64>,
    t: f64,
    d_hat: f64,
    envelope: M,
    cfg: &PredictorConfig,
) -> Result<PredictionErrorBudget, DynamicsError>
where
    S: InputSignal + ?Sized,
    H: InputSignal + ?Sized,
    M: Fn(f64) -> f64,
{
    let shifted = Delayed::new(input, d_hat);
    let corrected = Sum {
        first: &shifted,
        second: d_hat_history,
    };
    let n = cfg.n_quad;
    let t0 = t - cfg.beta;
    let nodes: Vec<f64> = (1..n).map(|i| t0 + cfg.beta * i as f64 / n as f64).collect();
    let traj = integrate_dense(model, x_t_minus_beta, t0, t, &corrected, cfg.max_step(), &nodes)?;
    let end = traj.last().expect("dense trajectory holds its start point");
    let residual_b = (end - x_t).norm();

    let h = cfg.beta / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let tau = if i == n { t } else { t0 + i as f64 * h };
        let x = traj.at(tau)?;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += w * spectral_norm(&model.actuation(tau, &x)) * envelope(tau);
    }
    Ok(PredictionErrorBudget::new(residual_b, sum * h))
}

/// Why an update left the set untouched.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundDiagnostic {
    /// No grid candidate met the budget.
    EmptyFeasibleSet { min_error: f64, budget: f64 },
    /// A candidate evaluation failed.
    Evaluation(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundSolver {
    pub n_grid: usize,
    pub tol: f64,
}

impl Default for BoundSolver {
    fn default() -> Self {
        Self { n_grid: 201, tol: 1e-3 }
    }
}

/// Shrinks `set` to the smallest interval enclosing `{D : ep_fn(D) ≤ total}`.
///
/// Boundaries are located on a uniform grid and refined by bisection; the
/// returned endpoint is the infeasible side of the final bracket, so the
/// result always encloses the refined boundary.
pub fn update_bounds<F>(
    set: &DelayBoundSet,
    budget: &PredictionErrorBudget,
    ep_fn: F,
    solver: &BoundSolver,
) -> (DelayBoundSet, Option<BoundDiagnostic>)
where
    F: Fn(f64) -> Result<f64, DynamicsError> + Sync,
{
    let n = solver.n_grid.max(2);
    let width = set.hi - set.lo;
    let grid: Vec<f64> = if width > 0.0 {
        (0..n)
            .map(|i| {
                if i == n - 1 {
                    set.hi
                } else {
                    set.lo + width * i as f64 / (n - 1) as f64
                }
            })
            .collect()
    } else {
        vec![set.lo]
    };
    let errors: Result<Vec<f64>, DynamicsError> = grid.par_iter().map(|d| ep_fn(*d)).collect();
    let errors = match errors {
        Ok(e) => e,
        Err(e) => return (*set, Some(BoundDiagnostic::Evaluation(e.to_string()))),
    };
    let feasible = |e: f64| e <= budget.total;
    let first = errors.iter().position(|e| feasible(*e));
    let last = errors.iter().rposition(|e| feasible(*e));
    let (Some(first), Some(last)) = (first, last) else {
        let min_error = errors.iter().copied().fold(f64::INFINITY, f64::min);
        return (
            *set,
            Some(BoundDiagnostic::EmptyFeasibleSet {
                min_error,
                budget: budget.total,
            }),
        );
    };

    // Bisection keeps `out` infeasible and `inn` feasible.
    let refine = |mut out: f64, mut inn: f64| -> Result<f64, DynamicsError> {
        while (inn - out).abs() > solver.tol {
            let mid = 0.5 * (out + inn);
            if feasible(ep_fn(mid)?) {
                inn = mid;
            } else {
                out = mid;
            }
        }
        Ok(out)
    };
    let lo = if first == 0 {
        set.lo
    } else {
        match refine(grid[first - 1], grid[first]) {
            Ok(v) => v,
            Err(e) => return (*set, Some(BoundDiagnostic::Evaluation(e.to_string()))),
        }
    };
    let hi = if last == grid.len() - 1 {
        set.hi
    } else {
        match refine(grid[last + 1], grid[last]) {
            Ok(v) => v,
            Err(e) => return (*set, Some(BoundDiagnostic::Evaluation(e.to_string()))),
        }
    };
    (
        DelayBoundSet {
            lo: lo.max(set.lo),
            hi: hi.min(set.hi),
            epoch: set.epoch + 1,
        },
        None,
    )
}
