//! Closed-loop truck simulation for every mode.
//!
//! The plant integrates at `sim.dt`; the controller runs every
//! `sim.control_dt`. At each control instant `t`:
//!
//! 1. the observer integrates over the elapsed period and logs `d̂(t)`;
//! 2. the delay estimator takes one projected-gradient step;
//! 3. every `t_update` after activation the bound set is shrunk (proposed
//!    mode only) and the estimator's projection interval follows it;
//! 4. `y` is predicted forward from `x(t)`: committed inputs up to `t + D̂`,
//!    then the nominal loop; `x̂_p = y(t + D̂)`;
//! 5. `d_e` is computed from `e_max`, `Δy_max` and the live `D̃_max`;
//! 6. the filtered input is committed and the plant advances one period.

use nalgebra::DVector;
use thiserror::Error;

use crate::bounds::{error_budget, prediction_error, update_bounds, BoundDiagnostic, BoundSolver, DelayBoundSet};
use crate::config::{ConfigError, Mode, RunConfig};
use crate::dynamics::{
    integrate, integrate_dense, steps_for, DynamicsError, PlantState, SampledTrajectory, SystemModel,
};
use crate::estimator::{DelayEstimate, EstimatorError};
use crate::history::{Constant, Delayed, TimedInputBuffer};
use crate::observer::DisturbanceObserver;
use crate::predictor::evaluate;
use crate::safety::{delta_y_max, e_max, filter, robust_margin, Barrier, InputBox};
use crate::truck::{TruckBarrier, TruckGains, TruckModel};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("step {step}: {source}")]
    Dynamics { step: usize, source: DynamicsError },
    #[error("step {step}: {source}")]
    Estimator { step: usize, source: EstimatorError },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

/// One control instant.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub x: DVector<f64>,
    pub h: f64,
    pub t_pred: f64,
    pub x_pred: DVector<f64>,
    pub u_nom: DVector<f64>,
    pub u: DVector<f64>,
    pub d_hat: f64,
    pub rho: f64,
    pub lo: f64,
    pub hi: f64,
    pub d_tilde_max: f64,
    pub e_max_val: f64,
    pub delta_y_max: f64,
    pub e_tj_max: f64,
    pub d_e: f64,
    /// Margin the fixed initial bound would have required on this step.
    pub d_e_ref: f64,
    pub feasible: bool,
    pub slack: f64,
    pub obs_d_hat: f64,
    /// `u(t − D) − u(t − D̂)` for the committed input.
    pub d_true: f64,
    pub envelope: f64,
}

/// One bound-update attempt.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub t: f64,
    pub lo: f64,
    pub hi: f64,
    pub d_tilde_max: f64,
    pub residual_b: f64,
    pub disturbance_term: f64,
    pub total: f64,
    /// `e_p` at the true delay.
    pub ep_true: f64,
    pub premise: bool,
    /// `e_{t_j,max}` on the trajectory frozen at activation.
    pub e_tj_max_lit: f64,
    pub diagnostic: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub mode: Mode,
    pub true_delay: f64,
    /// Mean of `h` over control records with `t ≥ D`.
    pub avg_h: f64,
    /// Minimum of `h` over every plant step with `t ≥ D`.
    pub min_h: f64,
    pub infeasible_steps: usize,
    pub final_lo: f64,
    pub final_hi: f64,
    pub final_d_tilde_max: f64,
    pub epochs: usize,
    pub premise_failures: usize,
    pub empty_updates: usize,
    pub max_abs_rho: f64,
    pub observed_udot_max: f64,
    pub envelope_violations: usize,
}

#[derive(Debug, Clone)]
pub struct RunTrace {
    pub config: RunConfig,
    pub version: &'static str,
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
    pub summary: Summary,
}

/// Trajectory `y` on `[0, t + H]`: logged plant states before `t`, predicted after.
struct Lookahead<'a> {
    t: f64,
    past: &'a SampledTrajectory,
    future: SampledTrajectory,
}

impl Lookahead<'_> {
    fn at(&self, tau: f64) -> Result<DVector<f64>, DynamicsError> {
        if tau >= self.t {
            self.future.at(tau.min(self.future.end()))
        } else {
            self.past.at(tau.max(0.0))
        }
    }
}

/// Trajectory frozen at the first bound update; feeds the literal
/// `e_{t_j,max}` sequence.
struct Frozen {
    t0: f64,
    d_hat0: f64,
    future: SampledTrajectory,
    /// `(|s|, ‖y(t0 + D̂0 + s) − y(t0 + D̂0)‖)` on a fixed offset grid.
    shifts: Vec<(f64, f64)>,
}

const FROZEN_OFFSETS: usize = 400;

impl Frozen {
    fn e_lit(&self, model: &dyn SystemModel, d_tilde: f64, cfg: &RunConfig) -> Result<f64, DynamicsError> {
        let span = self.d_hat0 + d_tilde;
        let em = if span > 0.0 {
            let y = |tau: f64| self.future.at(tau.min(self.future.end()));
            e_max(
                model,
                y,
                self.t0,
                self.t0 + span,
                cfg.safety.udot_max * d_tilde,
                cfg.scenario.truck.input_bound(),
                cfg.predictor.n_quad,
            )?
        } else {
            0.0
        };
        let dy = self
            .shifts
            .iter()
            .filter(|(s, _)| *s <= d_tilde)
            .map(|(_, n)| *n)
            .fold(0.0, f64::max);
        Ok(em + dy)
    }
}

fn ctrl_err(step: usize) -> impl Fn(DynamicsError) -> SimError {
    move |source| SimError::Dynamics { step, source }
}

/// Runs one configuration to completion.
pub fn run(cfg: &RunConfig) -> Result<RunTrace, SimError> {
    cfg.validate()?;
    let params = &cfg.scenario.truck;
    let model = TruckModel::new(params);
    let barrier = TruckBarrier::new(params, cfg.safety.alpha0);
    let lip = barrier.lipschitz();
    let gains = TruckGains;
    let bx = InputBox::scalar(params.u_min, params.u_max).map_err(ctrl_err(0))?;
    let u_bound = params.input_bound();
    let m = 1;

    let mode = cfg.mode;
    let plant_delay = if mode == Mode::DelayFree { 0.0 } else { cfg.true_delay };
    let estimating = mode != Mode::DelayFree;
    let tc = cfg.sim.control_dt;
    let n_ctrl = steps_for(cfg.sim.t_end, tc).map_err(ctrl_err(0))?;
    let sub = (tc / cfg.sim.dt).round() as usize;
    let beta = cfg.predictor.beta;
    let beta_steps = (beta / tc).round() as usize;
    let update_every = (cfg.bounds.t_update / tc).round() as usize;
    let d_tilde0 = cfg.bounds.hi0 - cfg.bounds.lo0;
    let solver = BoundSolver {
        n_grid: cfg.bounds.n_grid,
        tol: cfg.bounds.tol,
    };

    let horizon = cfg.bounds.hi0.max(plant_delay) + beta + 4.0 * tc;
    let mut inputs = TimedInputBuffer::new(m, horizon, tc)
        .and_then(|b| b.with_pre_run(DVector::zeros(m), 0.0))
        .map_err(|e| ctrl_err(0)(e.into()))?;
    let mut d_hat_log = TimedInputBuffer::new(m, beta + 4.0 * tc, tc)
        .and_then(|b| b.with_pre_run(DVector::zeros(m), 0.0))
        .map_err(|e| ctrl_err(0)(e.into()))?;

    let x0 = DVector::from_column_slice(&cfg.scenario.x0);
    let mut plant = PlantState::new(0.0, x0.clone());
    let mut log = SampledTrajectory::with_capacity(n_ctrl + 1);
    let d_hat0 = if estimating { cfg.estimator.d_hat0 } else { 0.0 };
    let mut est = DelayEstimate::new(d_hat0, cfg.estimator.gamma, cfg.bounds.lo0, cfg.bounds.hi0)
        .map_err(|source| SimError::Estimator { step: 0, source })?;
    let mut set = DelayBoundSet::new(cfg.bounds.lo0, cfg.bounds.hi0).map_err(ctrl_err(0))?;
    let mut obs =
        DisturbanceObserver::new(cfg.observer_params(), &gains, &x0, DVector::zeros(m), 0.0).map_err(|msg| {
            SimError::Config(ConfigError {
                path: "observer".into(),
                msg,
            })
        })?;

    let mut steps = Vec::with_capacity(n_ctrl);
    let mut epochs: Vec<EpochRecord> = Vec::new();
    let mut frozen: Option<Frozen> = None;
    let mut min_h = f64::INFINITY;
    let mut max_abs_rho: f64 = 0.0;
    let mut udot_obs: f64 = 0.0;
    let mut prev_u: Option<f64> = None;
    let mut d_hat_prev = est.d_hat;
    let mut epoch_counter = 0;

    if plant_delay <= 0.0 {
        min_h = barrier.value(&plant.x);
    }

    for k in 0..n_ctrl {
        let t = k as f64 * tc;
        let x_t = plant.x.clone();
        log.push(t, x_t.clone());
        let err = ctrl_err(k);

        // 1. observer over [t − tc, t]
        if k > 0 {
            let x_prev = &log.states()[k - 1];
            let u_bar = inputs
                .average(t - tc - d_hat_prev, t - d_hat_prev)
                .map_err(|e| err(e.into()))?;
            obs.step(&gains, &model, t - tc, x_prev, &x_t, &u_bar, tc);
        }
        d_hat_log.push(t, obs.d_hat.clone()).map_err(|e| err(e.into()))?;

        // 2. delay estimator
        let mut rho = 0.0;
        if estimating && k >= beta_steps {
            let x_tmb = log.states()[k - beta_steps].clone();
            let r = evaluate(&model, &inputs, &x_t, &x_tmb, t, est.d_hat, &cfg.predictor).map_err(&err)?;
            rho = r.rho;
            max_abs_rho = max_abs_rho.max(rho.abs());
            est = est
                .update(rho, tc)
                .map_err(|source| SimError::Estimator { step: k, source })?;
        }

        // 3. bound update
        let mut new_epoch: Option<EpochRecord> = None;
        let activation_step = (cfg.bounds.activation / tc - 1e-9).ceil() as usize;
        if mode == Mode::Proposed && k >= activation_step && (k - activation_step).is_multiple_of(update_every) {
            let x_tmb = log.states()[k - beta_steps].clone();
            let budget = error_budget(
                &model,
                &inputs,
                &d_hat_log,
                &x_t,
                &x_tmb,
                t,
                est.d_hat,
                |tau| obs.envelope(tau),
                &cfg.predictor,
            )
            .map_err(&err)?;
            let ep = |d: f64| prediction_error(&model, &inputs, &x_t, &x_tmb, t, d, &cfg.predictor);
            let ep_true = ep(cfg.true_delay).map_err(&err)?;
            let (next, diag) = update_bounds(&set, &budget, ep, &solver);
            let diagnostic = match diag {
                None => String::new(),
                Some(BoundDiagnostic::EmptyFeasibleSet { min_error, budget }) => {
                    format!("empty feasible set: min e_p {min_error:.3e} > budget {budget:.3e}")
                }
                Some(BoundDiagnostic::Evaluation(msg)) => format!("evaluation failed: {msg}"),
            };
            set = next;
            est.set_interval(set.lo, set.hi)
                .map_err(|source| SimError::Estimator { step: k, source })?;
            epoch_counter += 1;
            new_epoch = Some(EpochRecord {
                epoch: epoch_counter,
                t,
                lo: set.lo,
                hi: set.hi,
                d_tilde_max: set.d_tilde_max(),
                residual_b: budget.residual_b,
                disturbance_term: budget.disturbance_term,
                total: budget.total,
                ep_true,
                premise: ep_true <= budget.total,
                e_tj_max_lit: 0.0,
                diagnostic,
            });
        }
        let d_hat = est.d_hat;

        // 4. forward prediction
        let d_tilde = match mode {
            Mode::Proposed => set.d_tilde_max(),
            Mode::DacbfBaseline => d_tilde0,
            Mode::Unfiltered | Mode::DelayFree => 0.0,
        };
        let horizon_ahead = d_hat + if mode == Mode::DelayFree { 0.0 } else { d_tilde0 };
        let mut future = if d_hat > 0.0 {
            integrate_dense(&model, &x_t, t, t + d_hat, &Delayed::new(&inputs, d_hat), tc, &[]).map_err(&err)?
        } else {
            let mut f = SampledTrajectory::with_capacity(1);
            f.push(t, x_t.clone());
            f
        };
        let t_pred = t + d_hat;
        let x_pred = future.last().cloned().unwrap_or_else(|| x_t.clone());
        let t_stop = t + horizon_ahead;
        let mut tau = t_pred;
        let mut y = x_pred.clone();
        while tau < t_stop - 1e-12 {
            let next = (tau + tc).min(t_stop);
            let u = bx.clamp(&params.nominal(&y));
            y = integrate(&model, &y, tau, next, &Constant(u), tc).map_err(&err)?;
            future.push(next, y.clone());
            tau = next;
        }
        let look = Lookahead { t, past: &log, future };
        let u_nom = params.nominal(&x_pred);

        // 5. margins
        let (mut e_val, mut dy, mut e_tj, mut d_e, mut d_e_ref) = (0.0, 0.0, 0.0, 0.0, 0.0);
        if matches!(mode, Mode::Proposed | Mode::DacbfBaseline) {
            let y = |tau: f64| look.at(tau);
            let margin_for = |dt_max: f64| -> Result<(f64, f64), DynamicsError> {
                let span = d_hat + dt_max;
                let em = if span > 0.0 {
                    e_max(
                        &model,
                        y,
                        t,
                        t + span,
                        cfg.safety.udot_max * dt_max,
                        u_bound,
                        cfg.predictor.n_quad,
                    )?
                } else {
                    0.0
                };
                let dy = delta_y_max(y, t, d_hat, dt_max, cfg.safety.n_scan)?;
                Ok((em, dy))
            };
            (e_val, dy) = margin_for(d_tilde).map_err(&err)?;
            e_tj = e_val + dy;
            d_e = robust_margin(&lip, e_tj, u_bound);
            let (e_ref, dy_ref) = margin_for(d_tilde0).map_err(&err)?;
            d_e_ref = robust_margin(&lip, e_ref + dy_ref.max(dy), u_bound);

            if let Some(ep) = new_epoch.as_mut() {
                if frozen.is_none() {
                    let center = look.at(t + d_hat).map_err(&err)?;
                    let mut shifts = Vec::with_capacity(2 * FROZEN_OFFSETS + 1);
                    for i in 0..=2 * FROZEN_OFFSETS {
                        let s = d_tilde0 * (i as f64 / FROZEN_OFFSETS as f64 - 1.0);
                        let v = look.at(t + d_hat + s).map_err(&err)?;
                        shifts.push((s.abs(), (v - &center).norm()));
                    }
                    frozen = Some(Frozen {
                        t0: t,
                        d_hat0: d_hat,
                        future: look.future.clone(),
                        shifts,
                    });
                }
                ep.e_tj_max_lit = frozen
                    .as_ref()
                    .unwrap()
                    .e_lit(&model, ep.d_tilde_max, cfg)
                    .map_err(&err)?;
            }
        }
        if let Some(ep) = new_epoch {
            epochs.push(ep);
        }

        // 6. filter
        let (u, feasible, slack) = match mode {
            Mode::Unfiltered => (bx.clamp(&u_nom), true, f64::NAN),
            _ => {
                let out = filter(&barrier, &model, t_pred, &x_pred, &u_nom, d_e, &bx);
                (out.u, out.feasible, out.slack)
            }
        };
        if let Some(p) = prev_u {
            udot_obs = udot_obs.max((u[0] - p).abs() / tc);
        }
        prev_u = Some(u[0]);
        inputs.push(t, u.clone()).map_err(|e| err(e.into()))?;

        let d_true = inputs.sample(t - plant_delay).map_err(|e| err(e.into()))?[0]
            - inputs.sample(t - d_hat).map_err(|e| err(e.into()))?[0];
        let h = barrier.value(&x_t);
        steps.push(StepRecord {
            t,
            x: x_t,
            h,
            t_pred,
            x_pred,
            u_nom,
            u,
            d_hat,
            rho,
            lo: set.lo,
            hi: set.hi,
            d_tilde_max: d_tilde,
            e_max_val: e_val,
            delta_y_max: dy,
            e_tj_max: e_tj,
            d_e,
            d_e_ref,
            feasible,
            slack,
            obs_d_hat: obs.d_hat[0],
            d_true,
            envelope: obs.envelope(t),
        });

        // 7. plant
        for i in 0..sub {
            let t_next = t + (i + 1) as f64 * cfg.sim.dt;
            plant = crate::dynamics::step(&model, &plant, &inputs, plant_delay, cfg.sim.dt).map_err(&err)?;
            plant.t = if i + 1 == sub { (k + 1) as f64 * tc } else { t_next };
            if !plant.is_finite() {
                return Err(err(DynamicsError::Divergence {
                    step: k * sub + i + 1,
                    t: plant.t,
                }));
            }
            if plant.t >= plant_delay - 1e-12 {
                min_h = min_h.min(barrier.value(&plant.x));
            }
        }
        d_hat_prev = d_hat;
    }

    let considered: Vec<f64> = steps
        .iter()
        .filter(|s| s.t >= plant_delay - 1e-12)
        .map(|s| s.h)
        .collect();
    let avg_h = considered.iter().sum::<f64>() / considered.len().max(1) as f64;
    let summary = Summary {
        mode,
        true_delay: cfg.true_delay,
        avg_h,
        min_h,
        infeasible_steps: steps.iter().filter(|s| !s.feasible).count(),
        final_lo: set.lo,
        final_hi: set.hi,
        final_d_tilde_max: match mode {
            Mode::Proposed => set.d_tilde_max(),
            Mode::DacbfBaseline => d_tilde0,
            _ => 0.0,
        },
        epochs: epochs.len(),
        premise_failures: epochs.iter().filter(|e| !e.premise).count(),
        empty_updates: epochs.iter().filter(|e| !e.diagnostic.is_empty()).count(),
        max_abs_rho,
        observed_udot_max: udot_obs,
        envelope_violations: steps
            .iter()
            .filter(|s| (s.d_true - s.obs_d_hat).abs() > s.envelope)
            .count(),
    };
    Ok(RunTrace {
        config: cfg.clone(),
        version: env!("CARGO_PKG_VERSION"),
        steps,
        epochs,
        summary,
    })
}
