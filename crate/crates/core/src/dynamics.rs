//! Control-affine input-delayed systems `ẋ = f(t, x) + g(t, x) u(t - D)` and a
//! deterministic fixed-step RK4 integrator.
//!
//! The integrator splits every interval at the switch times of the
//! (piecewise-constant) input signal and at the model's own exogenous
//! breakpoints, then runs RK4 inside each smooth segment. For models whose
//! right-hand side is polynomial in time within a segment (the truck is) the
//! result is exact up to rounding, so a predictor run with the true delay
//! reproduces the plant state bit-for-bit up to floating-point noise.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::history::{Delayed, HistoryError, InputSignal, TimedInputBuffer};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("non-finite state at step {step} (t = {t})")]
    Divergence { step: usize, t: f64 },
    #[error("t_end {t_end} is not an integer multiple of dt {dt}")]
    Grid { t_end: f64, dt: f64 },
    #[error("time {t} outside trajectory range [{start}, {end}]")]
    Range { t: f64, start: f64, end: f64 },
    #[error("invalid parameter: {0}")]
    Invalid(&'static str),
}

/// Declared Lipschitz constants of `f` and `g` over the scenario's
/// admissible state box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lipschitz {
    pub f: f64,
    pub g: f64,
}

pub trait SystemModel: Send + Sync {
    fn state_dim(&self) -> usize;

    fn input_dim(&self) -> usize;

    /// Drift `f(t, x)`. Time enters only through known exogenous signals.
    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64>;

    /// Input matrix `g(t, x)`, `n × m`.
    fn actuation(&self, t: f64, x: &DVector<f64>) -> DMatrix<f64>;

    fn lipschitz(&self) -> Lipschitz;

    /// Times at which the exogenous part of `f` may be discontinuous.
    fn breakpoints(&self) -> &[f64] {
        &[]
    }

    fn rhs(&self, t: f64, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        self.drift(t, x) + self.actuation(t, x) * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    pub t: f64,
    pub x: DVector<f64>,
}

impl PlantState {
    pub fn new(t: f64, x: DVector<f64>) -> Self {
        Self { t, x }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite() && self.x.iter().all(|v| v.is_finite())
    }
}

/// Breakpoints closer than this to each other are merged.
const KNOT_MERGE: f64 = 1e-12;

fn segment_knots<S: InputSignal + ?Sized>(model: &dyn SystemModel, input: &S, t0: f64, t1: f64) -> Vec<f64> {
    let mut inner = input.switches(t0, t1);
    inner.extend(model.breakpoints().iter().copied().filter(|b| *b > t0 && *b < t1));
    inner.sort_by(f64::total_cmp);
    let mut knots = Vec::with_capacity(inner.len() + 2);
    knots.push(t0);
    for k in inner {
        if k - knots.last().unwrap() > KNOT_MERGE && t1 - k > KNOT_MERGE {
            knots.push(k);
        }
    }
    knots.push(t1);
    knots
}

fn rk4_segment(
    model: &dyn SystemModel,
    x: &DVector<f64>,
    a: f64,
    b: f64,
    u: &DVector<f64>,
    max_step: f64,
) -> DVector<f64> {
    let len = b - a;
    let n = ((len / max_step) - 1e-9).ceil().max(1.0) as usize;
    let h = len / n as f64;
    // Exogenous signals are evaluated strictly inside the segment so that a
    // switch exactly at an end point never leaks into this segment.
    let eta = 1e-9 * len;
    let clamp = |t: f64| t.clamp(a + eta, b - eta);
    let mut x = x.clone();
    for i in 0..n {
        let t = a + i as f64 * h;
        let k1 = model.rhs(clamp(t), &x, u);
        let k2 = model.rhs(clamp(t + 0.5 * h), &(&x + &k1 * (0.5 * h)), u);
        let k3 = model.rhs(clamp(t + 0.5 * h), &(&x + &k2 * (0.5 * h)), u);
        let k4 = model.rhs(clamp(t + h), &(&x + &k3 * h), u);
        x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    x
}

/// Integrates `ẋ = f + g·input(τ)` from `(t0, x0)` to `t1`, splitting at the
/// input's switch times and the model's breakpoints. `max_step` bounds the
/// RK4 step inside each segment.
pub fn integrate<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    input: &S,
    max_step: f64,
) -> Result<DVector<f64>, DynamicsError> {
    let mut x = x0.clone();
    if t1 <= t0 {
        return Ok(x);
    }
    let knots = segment_knots(model, input, t0, t1);
    for w in knots.windows(2) {
        let u = input.at(0.5 * (w[0] + w[1]))?;
        x = rk4_segment(model, &x, w[0], w[1], &u, max_step);
    }
    Ok(x)
}

/// Same as [`integrate`] but also returns the state at every segment knot and
/// at the requested `nodes` (sorted, inside `[t0, t1]`).
pub fn integrate_dense<S: InputSignal + ?Sized>(
    model: &dyn SystemModel,
    x0: &DVector<f64>,
    t0: f64,
    t1: f64,
    input: &S,
    max_step: f64,
    nodes: &[f64],
) -> Result<SampledTrajectory, DynamicsError> {
    let mut knots = segment_knots(model, input, t0, t1);
    knots.extend(nodes.iter().copied().filter(|n| *n > t0 && *n < t1));
    knots.sort_by(f64::total_cmp);
    knots.dedup_by(|b, a| (*b - *a).abs() <= KNOT_MERGE);
    let mut traj = SampledTrajectory::with_capacity(knots.len());
    let mut x = x0.clone();
    traj.push(t0, x.clone());
    for w in knots.windows(2) {
        let u = input.at(0.5 * (w[0] + w[1]))?;
        x = rk4_segment(model, &x, w[0], w[1], &u, max_step);
        traj.push(w[1], x.clone());
    }
    Ok(traj)
}

/// One plant step of length `dt` with the input delayed by `delay`.
pub fn step(
    model: &dyn SystemModel,
    state: &PlantState,
    buffer: &TimedInputBuffer,
    delay: f64,
    dt: f64,
) -> Result<PlantState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::Invalid("dt must be positive"));
    }
    let input = Delayed::new(buffer, delay);
    let x = integrate(model, &state.x, state.t, state.t + dt, &input, dt)?;
    Ok(PlantState::new(state.t + dt, x))
}

/// Closed-loop simulation with a constant input delay. The controller is
/// called once per step with the current state; its output is pushed into
/// the run's input buffer before the step is integrated.
pub fn simulate<C>(
    model: &dyn SystemModel,
    x0: DVector<f64>,
    mut controller: C,
    delay: f64,
    t_end: f64,
    dt: f64,
) -> Result<Vec<PlantState>, DynamicsError>
where
    C: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = steps_for(t_end, dt)?;
    let mut buffer = TimedInputBuffer::new(model.input_dim(), delay + t_end + dt, dt)?;
    let mut state = PlantState::new(0.0, x0);
    let mut out = Vec::with_capacity(n + 1);
    out.push(state.clone());
    for k in 0..n {
        let t = k as f64 * dt;
        state.t = t;
        let u = controller(t, &state.x);
        buffer.push(t, u)?;
        state = step(model, &state, &buffer, delay, dt)?;
        state.t = (k + 1) as f64 * dt;
        if !state.is_finite() {
            return Err(DynamicsError::Divergence {
                step: k + 1,
                t: state.t,
            });
        }
        out.push(state.clone());
    }
    Ok(out)
}

/// Number of `dt` steps that make up `t_end`.
pub fn steps_for(t_end: f64, dt: f64) -> Result<usize, DynamicsError> {
    if !(dt > 0.0) || !(t_end >= 0.0) {
        return Err(DynamicsError::Invalid("dt must be positive and t_end non-negative"));
    }
    let n = (t_end / dt).round();
    if (n * dt - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(DynamicsError::Grid { t_end, dt });
    }
    Ok(n as usize)
}

/// Time-stamped states with linear interpolation between samples.
#[derive(Debug, Clone, Default)]
pub struct SampledTrajectory {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
}

impl SampledTrajectory {
    pub fn with_capacity(n: usize) -> Self {
        Self {
            times: Vec::with_capacity(n),
            states: Vec::with_capacity(n),
        }
    }

    pub fn from_states(states: &[PlantState]) -> Self {
        let mut traj = Self::with_capacity(states.len());
        for s in states {
            traj.push(s.t, s.x.clone());
        }
        traj
    }

    /// Appends a sample; a time equal to the last one replaces it.
    pub fn push(&mut self, t: f64, x: DVector<f64>) {
        if let Some(last) = self.times.last() {
            if t <= *last {
                let n = self.times.len();
                self.states[n - 1] = x;
                return;
            }
        }
        self.times.push(t);
        self.states.push(x);
    }

    pub fn start(&self) -> f64 {
        self.times.first().copied().unwrap_or(f64::NAN)
    }

    pub fn end(&self) -> f64 {
        self.times.last().copied().unwrap_or(f64::NAN)
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[DVector<f64>] {
        &self.states
    }

    pub fn last(&self) -> Option<&DVector<f64>> {
        self.states.last()
    }

    pub fn at(&self, t: f64) -> Result<DVector<f64>, DynamicsError> {
        let (start, end) = (self.start(), self.end());
        let tol = 1e-9 * (1.0 + end.abs());
        if self.is_empty() || t < start - tol || t > end + tol {
            return Err(DynamicsError::Range { t, start, end });
        }
        let i = self.times.partition_point(|s| *s <= t);
        if i == 0 {
            return Ok(self.states[0].clone());
        }
        if i == self.times.len() {
            return Ok(self.states[i - 1].clone());
        }
        let (ta, tb) = (self.times[i - 1], self.times[i]);
        let w = (t - ta) / (tb - ta);
        Ok(&self.states[i - 1] * (1.0 - w) + &self.states[i] * w)
    }
}

/// Outcome of a sampled Lipschitz check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LipschitzCheck {
    pub samples: usize,
    /// Largest observed `‖f(x) − f(y)‖ / ‖x − y‖`.
    pub worst_f: f64,
    /// Largest observed `‖g(x) − g(y)‖₂ / ‖x − y‖`.
    pub worst_g: f64,
}

impl LipschitzCheck {
    pub fn holds(&self, declared: Lipschitz, slack: f64) -> bool {
        self.worst_f <= declared.f + slack && self.worst_g <= declared.g + slack
    }
}

/// Samples random state pairs from the box `[lo, hi]` and records the worst
/// observed difference quotients of `f` and `g` at time `t`.
pub fn sample_lipschitz<R: Rng>(
    model: &dyn SystemModel,
    t: f64,
    lo: &[f64],
    hi: &[f64],
    samples: usize,
    rng: &mut R,
) -> LipschitzCheck {
    let n = model.state_dim();
    let draw = |rng: &mut R| DVector::from_fn(n, |i, _| rng.gen_range(lo[i]..=hi[i]));
    let mut worst_f: f64 = 0.0;
    let mut worst_g: f64 = 0.0;
    for _ in 0..samples {
        let x = draw(rng);
        let y = draw(rng);
        let dist = (&x - &y).norm();
        if dist == 0.0 {
            continue;
        }
        let df = (model.drift(t, &x) - model.drift(t, &y)).norm();
        let dg = spectral_norm(&(model.actuation(t, &x) - model.actuation(t, &y)));
        worst_f = worst_f.max(df / dist);
        worst_g = worst_g.max(dg / dist);
    }
    LipschitzCheck {
        samples,
        worst_f,
        worst_g,
    }
}

/// Largest singular value.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.ncols() == 1 || m.nrows() == 1 {
        return m.norm();
    }
    m.clone().singular_values().max()
}
