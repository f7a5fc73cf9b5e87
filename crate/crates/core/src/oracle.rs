//! Brute-force reference checks used by the test suites.
//!
//! Each check runs its own simulation loop; only the plant model and the
//! integrator are shared with the production pipeline.

use std::f64::consts::SQRT_2;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::dynamics::{integrate, integrate_dense, DynamicsError};
use crate::history::{HistoryError, InputSignal};
use crate::observer::{DisturbanceObserver, ObserverParams};
use crate::truck::{TruckGains, TruckModel, TruckParams};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub name: String,
    pub samples: usize,
    pub violations: usize,
    /// Largest `observed − bound`; negative when every sample is inside.
    pub max_gap: f64,
    pub tolerance: f64,
}

impl OracleReport {
    fn new(name: &str, tolerance: f64) -> Self {
        Self {
            name: name.into(),
            samples: 0,
            violations: 0,
            max_gap: f64::NEG_INFINITY,
            tolerance,
        }
    }

    fn merge(mut self, other: Self) -> Self {
        self.samples += other.samples;
        self.violations += other.violations;
        self.max_gap = self.max_gap.max(other.max_gap);
        self
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{:.16e},{:.16e}",
            self.name, self.samples, self.violations, self.max_gap, self.tolerance
        )
    }
}

/// Smallest and largest of `n` uniform grid points in `[lo, hi]` with
/// `ep_fn ≤ total`; `None` if no point qualifies.
pub fn nlp_grid_oracle<F>(ep_fn: F, total: f64, lo: f64, hi: f64, n: usize) -> Option<(f64, f64)>
where
    F: Fn(f64) -> f64 + Sync,
{
    let n = n.max(2);
    let pts: Vec<f64> = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
    let ok: Vec<bool> = pts.par_iter().map(|d| ep_fn(*d) <= total).collect();
    let first = ok.iter().position(|b| *b)?;
    let last = ok.iter().rposition(|b| *b)?;
    Some((pts[first], pts[last]))
}

/// Zero-order hold of `values[k]` on `[t0 + k·dt, t0 + (k+1)·dt)`.
struct Held {
    t0: f64,
    dt: f64,
    values: Vec<f64>,
}

impl Held {
    fn index(&self, tau: f64) -> usize {
        (((tau - self.t0) / self.dt).floor().max(0.0) as usize).min(self.values.len() - 1)
    }

    fn value(&self, tau: f64) -> f64 {
        self.values[self.index(tau)]
    }
}

impl InputSignal for Held {
    fn dim(&self) -> usize {
        1
    }

    fn at(&self, tau: f64) -> Result<DVector<f64>, HistoryError> {
        Ok(DVector::from_element(1, self.value(tau)))
    }

    fn switches(&self, a: f64, b: f64) -> Vec<f64> {
        let k0 = ((a - self.t0) / self.dt).floor() as i64 + 1;
        let k1 = ((b - self.t0) / self.dt).ceil() as i64;
        (k0.max(1)..k1.min(self.values.len() as i64))
            .map(|k| self.t0 + k as f64 * self.dt)
            .filter(|s| *s > a && *s < b)
            .collect()
    }
}

struct Shift<'a> {
    signal: &'a Held,
    delay: f64,
}

impl InputSignal for Shift<'_> {
    fn dim(&self) -> usize {
        1
    }

    fn at(&self, tau: f64) -> Result<DVector<f64>, HistoryError> {
        self.signal.at(tau - self.delay)
    }

    fn switches(&self, a: f64, b: f64) -> Vec<f64> {
        self.signal
            .switches(a - self.delay, b - self.delay)
            .into_iter()
            .map(|s| s + self.delay)
            .collect()
    }
}

const T1_HORIZON: f64 = 2.0;
const T1_SAMPLE: f64 = 0.01;

fn paired_trial(model: &TruckModel, seed: u64, eps_scale: f64) -> Result<OracleReport, DynamicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = rng.gen_range(0.0..1.0);
    let d_hat = rng.gen_range(0.0..1.0);
    let ramp = rng.gen_range(-1.0..1.0);
    let waves: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.0..2.0),
                rng.gen_range(0.2..6.0),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    let t0 = -1.5;
    let n = ((T1_HORIZON - t0) / T1_SAMPLE).round() as usize + 1;
    let values = (0..n)
        .map(|k| {
            let s = t0 + k as f64 * T1_SAMPLE;
            ramp * s + waves.iter().map(|(a, w, p)| a * (w * s + p).sin()).sum::<f64>()
        })
        .collect();
    let u = Held {
        t0,
        dt: T1_SAMPLE,
        values,
    };

    // Measured mismatch: both shifted signals are piecewise constant, so
    // the midpoints of their joint switch grid cover every value.
    let mut knots = vec![0.0, T1_HORIZON];
    knots.extend(u.switches(-d, T1_HORIZON - d).into_iter().map(|s| s + d));
    knots.extend(u.switches(-d_hat, T1_HORIZON - d_hat).into_iter().map(|s| s + d_hat));
    knots.sort_by(f64::total_cmp);
    let eps = knots
        .windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| {
            let m = 0.5 * (w[0] + w[1]);
            (u.value(m - d) - u.value(m - d_hat)).abs()
        })
        .fold(0.0, f64::max);

    let x0 = DVector::from_vec(vec![
        rng.gen_range(10.0..60.0),
        rng.gen_range(0.0..15.0),
        rng.gen_range(0.0..15.0),
    ]);
    let nodes: Vec<f64> = (1..(T1_HORIZON / T1_SAMPLE).round() as usize)
        .map(|k| k as f64 * T1_SAMPLE)
        .collect();
    let y = integrate_dense(
        model,
        &x0,
        0.0,
        T1_HORIZON,
        &Shift {
            signal: &u,
            delay: d_hat,
        },
        T1_SAMPLE,
        &nodes,
    )?;

    let mut report = OracleReport::new("prediction_error_bound", 1e-9);
    let mut x = x0.clone();
    let mut t = 0.0;
    let x_sig = Shift { signal: &u, delay: d };
    for k in 1..=(T1_HORIZON / T1_SAMPLE).round() as usize {
        let t_next = k as f64 * T1_SAMPLE;
        x = integrate(model, &x, t, t_next, &x_sig, T1_SAMPLE)?;
        t = t_next;
        let err = (&x - y.at(t)?).norm();
        let bound = truck_e_max_closed_form(eps * eps_scale, t);
        report.samples += 1;
        let gap = err - bound;
        report.max_gap = report.max_gap.max(gap);
        if gap > report.tolerance * (1.0 + bound) {
            report.violations += 1;
        }
    }
    Ok(report)
}

/// Paired open-loop truck simulations with delays `D` and `D̂` from equal
/// initial states; checks `‖x(t) − y(t)‖ ≤ e_max(t)` (closed form) with
/// `ε_max` set to `eps_scale` times the measured input mismatch.
pub fn theorem1_check(n_trials: usize, seed: u64, eps_scale: f64) -> Result<OracleReport, DynamicsError> {
    let model = TruckModel::new(&TruckParams::default());
    let reports: Result<Vec<OracleReport>, DynamicsError> = (0..n_trials)
        .into_par_iter()
        .map(|i| paired_trial(&model, seed.wrapping_add(i as u64), eps_scale))
        .collect();
    Ok(reports?
        .into_iter()
        .fold(OracleReport::new("prediction_error_bound", 1e-9), OracleReport::merge))
}

const ENV_HORIZON: f64 = 5.0;
const ENV_DT: f64 = 1e-3;

/// Independent evaluation of the envelope formula.
fn envelope_bound(alpha_h: f64, c: f64, w1: f64, e0: f64, t: f64) -> f64 {
    let k = alpha_h - 0.5 * c;
    let decay = (-2.0 * k * t).exp();
    (e0 * e0 * decay + w1 * w1 * (1.0 - decay) / (2.0 * c * k)).sqrt()
}

fn envelope_trial(alpha_h: f64, c: f64, w1: f64, seed: u64, w1_scale: f64) -> OracleReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_waves = rng.gen_range(1..=3);
    let mut waves: Vec<(f64, f64, f64)> = (0..n_waves)
        .map(|_| {
            (
                rng.gen_range(0.1..1.0),
                rng.gen_range(0.5..alpha_h),
                rng.gen_range(0.0..std::f64::consts::TAU),
            )
        })
        .collect();
    // scale amplitudes so that Σ A_i·ω_i = w1, hence |ḋ| ≤ w1
    let slope: f64 = waves.iter().map(|(a, w, _)| a * w).sum();
    for wave in &mut waves {
        wave.0 *= w1 / slope;
    }
    let d = |t: f64| waves.iter().map(|(a, w, p)| a * (w * t + p).sin()).sum::<f64>();
    // v̇ = d exactly, integrated in closed form
    let v0 = 10.0;
    let v = |t: f64| {
        v0 + waves
            .iter()
            .map(|(a, w, p)| a * (p.cos() - (w * t + p).cos()) / w)
            .sum::<f64>()
    };

    let model = TruckModel::new(&TruckParams {
        lead: crate::truck::LeadProfile { phases: vec![] },
        ..TruckParams::default()
    });
    let state = |t: f64| DVector::from_vec(vec![50.0, v(t), 12.0]);
    let params = ObserverParams {
        alpha_h,
        c,
        w1,
        e_d0_bound: d(0.0).abs(),
    };
    let mut obs = DisturbanceObserver::new(params, &TruckGains, &state(0.0), DVector::zeros(1), 0.0)
        .expect("valid observer parameters");
    let zero = DVector::zeros(1);
    let mut report = OracleReport::new("envelope", 1e-3);
    let steps = (ENV_HORIZON / ENV_DT).round() as usize;
    for k in 0..steps {
        let t = k as f64 * ENV_DT;
        let t_next = (k + 1) as f64 * ENV_DT;
        obs.step(&TruckGains, &model, t, &state(t), &state(t_next), &zero, ENV_DT);
        let err = (d(t_next) - obs.d_hat[0]).abs();
        let bound = envelope_bound(alpha_h, c, w1 * w1_scale, params.e_d0_bound, t_next);
        report.samples += 1;
        report.max_gap = report.max_gap.max(err - bound);
        if err > bound * (1.0 + report.tolerance) {
            report.violations += 1;
        }
    }
    report
}

/// Runs the disturbance observer against smooth sinusoidal disturbances with
/// `|ḋ| ≤ w1` and checks `|d − d̂| ≤ M_d(t)` computed with `w1_scale·w1`.
pub fn envelope_check(alpha_h: f64, c: f64, w1: f64, n_trials: usize, seed: u64, w1_scale: f64) -> OracleReport {
    (0..n_trials)
        .into_par_iter()
        .map(|i| envelope_trial(alpha_h, c, w1, seed.wrapping_add(i as u64), w1_scale))
        .collect::<Vec<_>>()
        .into_iter()
        .fold(OracleReport::new("envelope", 1e-3), OracleReport::merge)
}

/// `e_max` in closed form for a constant unit-norm `g` with `𝔏_g = 0`.
pub fn truck_e_max_closed_form(eps: f64, span: f64) -> f64 {
    eps * ((SQRT_2 * span).exp() - 1.0) / SQRT_2
}

/// Undelayed barrier filter for the truck, written out by hand:
/// `(v_L − v) − T·u ≥ −α0·h + d_e` projected onto `[u_min, u_max]`.
pub fn truck_reference_filter(p: &TruckParams, alpha0: f64, x: &DVector<f64>, u_nom: f64, d_e: f64) -> (f64, bool) {
    let h = x[0] - p.xi_sf - p.headway * x[1];
    let cap = ((x[2] - x[1]) + alpha0 * h - d_e) / p.headway;
    if cap < p.u_min {
        (p.u_min, false)
    } else {
        (u_nom.min(cap).clamp(p.u_min, p.u_max), true)
    }
}
