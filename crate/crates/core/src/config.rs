//! Run configuration. Every field is required in the file; defaults exist
//! only as a starting point for `RunConfig::default()` and are echoed into
//! every trace header.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observer::ObserverParams;
use crate::predictor::PredictorConfig;
use crate::truck::TruckParams;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {msg}")]
pub struct ConfigError {
    pub path: String,
    pub msg: String,
}

fn bad(path: &str, msg: impl Into<String>) -> ConfigError {
    ConfigError {
        path: path.into(),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Fixed delay-error bound.
    DacbfBaseline,
    /// Online bound shrinking.
    Proposed,
    /// Nominal input on the predicted state, clamped to the box.
    Unfiltered,
    /// No delay, no margin.
    DelayFree,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::DacbfBaseline, Mode::Proposed, Mode::Unfiltered, Mode::DelayFree];

    pub fn as_str(&self) -> &'static str {
        match self {
            Mode::DacbfBaseline => "dacbf_baseline",
            Mode::Proposed => "proposed",
            Mode::Unfiltered => "unfiltered",
            Mode::DelayFree => "delay_free",
        }
    }

    /// Modes whose runs must keep `h ≥ 0`.
    pub fn asserts_safety(&self) -> bool {
        !matches!(self, Mode::Unfiltered)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Mode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| bad("mode", format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub x0: Vec<f64>,
    pub truck: TruckParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub gamma: f64,
    pub d_hat0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverConfig {
    pub alpha_h: f64,
    pub c: f64,
    /// Lower bound for `w1`; the run uses `max(w1_floor, 2·udot_max)`.
    pub w1_floor: f64,
    pub e_d0_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundsConfig {
    pub lo0: f64,
    pub hi0: f64,
    pub n_grid: usize,
    pub tol: f64,
    pub t_update: f64,
    /// First bound update time (s).
    pub activation: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SafetyConfig {
    pub alpha0: f64,
    pub n_scan: usize,
    /// Input slew bound used for `ε_max = udot_max·D̃_max` and for `w1`.
    pub udot_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    /// Plant integration step (s).
    pub dt: f64,
    /// Controller period (s); an integer multiple of `dt`.
    pub control_dt: f64,
    pub t_end: f64,
    /// Seeds randomized test harnesses only.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    pub true_delay: f64,
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub observer: ObserverConfig,
    pub predictor: PredictorConfig,
    pub bounds: BoundsConfig,
    pub safety: SafetyConfig,
    pub sim: SimConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        let truck = TruckParams::default();
        let e_d0_bound = 2.0 * truck.input_bound();
        let predictor = PredictorConfig::default();
        let (lo0, hi0) = (0.0, 2.0);
        Self {
            mode: Mode::Proposed,
            true_delay: 0.5,
            scenario: ScenarioConfig {
                x0: vec![40.0, 10.0, 12.0],
                truck,
            },
            estimator: EstimatorConfig {
                gamma: 40.0,
                d_hat0: 0.0,
            },
            observer: ObserverConfig {
                alpha_h: 10.0,
                c: 10.0,
                w1_floor: 0.1,
                e_d0_bound,
            },
            predictor,
            bounds: BoundsConfig {
                lo0,
                hi0,
                n_grid: 201,
                tol: 1e-3,
                t_update: 0.1,
                activation: predictor.beta + hi0,
            },
            safety: SafetyConfig {
                alpha0: 1.0,
                n_scan: 41,
                udot_max: 0.1,
            },
            sim: SimConfig {
                dt: 1e-3,
                control_dt: 0.01,
                t_end: 20.0,
                seed: 2024,
            },
        }
    }
}

fn is_multiple(x: f64, step: f64) -> bool {
    let n = (x / step).round();
    n >= 1.0 && (n * step - x).abs() <= 1e-9 * x.max(1.0)
}

impl RunConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s).map_err(|e| bad("config", e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| bad(&path.display().to_string(), e.to_string()))?;
        Self::from_toml_str(&text)
    }

    /// Observer parameters with the run's `w1`.
    pub fn observer_params(&self) -> ObserverParams {
        ObserverParams {
            alpha_h: self.observer.alpha_h,
            c: self.observer.c,
            w1: self.w1(),
            e_d0_bound: self.observer.e_d0_bound,
        }
    }

    pub fn w1(&self) -> f64 {
        self.observer.w1_floor.max(2.0 * self.safety.udot_max)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.scenario;
        if s.x0.len() != 3 || s.x0.iter().any(|v| !v.is_finite()) {
            return Err(bad("scenario.x0", "expected three finite numbers"));
        }
        s.truck.validate().map_err(|m| bad("scenario.truck", m))?;
        if !(self.true_delay >= 0.0 && self.true_delay.is_finite()) {
            return Err(bad("true_delay", "must be non-negative"));
        }
        let e = &self.estimator;
        if !(e.gamma > 0.0) {
            return Err(bad("estimator.gamma", "must be positive"));
        }
        let b = &self.bounds;
        if !(0.0 <= b.lo0 && b.lo0 <= b.hi0 && b.hi0.is_finite()) {
            return Err(bad("bounds", "need 0 <= lo0 <= hi0"));
        }
        if !(b.lo0 <= e.d_hat0 && e.d_hat0 <= b.hi0) {
            return Err(bad("estimator.d_hat0", "must lie in [bounds.lo0, bounds.hi0]"));
        }
        if self.mode.asserts_safety()
            && self.mode != Mode::DelayFree
            && !(b.lo0 <= self.true_delay && self.true_delay <= b.hi0)
        {
            return Err(bad("true_delay", "must lie in [bounds.lo0, bounds.hi0]"));
        }
        if b.n_grid < 3 {
            return Err(bad("bounds.n_grid", "must be at least 3"));
        }
        if !(b.tol > 0.0) {
            return Err(bad("bounds.tol", "must be positive"));
        }
        self.predictor.validate().map_err(|m| bad("predictor", m))?;
        let sim = &self.sim;
        if !(sim.dt > 0.0 && sim.control_dt > 0.0 && sim.t_end > 0.0) {
            return Err(bad("sim", "dt, control_dt and t_end must be positive"));
        }
        if !is_multiple(sim.control_dt, sim.dt) {
            return Err(bad("sim.control_dt", "must be an integer multiple of sim.dt"));
        }
        if !is_multiple(sim.t_end, sim.control_dt) {
            return Err(bad("sim.t_end", "must be an integer multiple of sim.control_dt"));
        }
        if !is_multiple(self.predictor.beta, sim.control_dt) {
            return Err(bad("predictor.beta", "must be an integer multiple of sim.control_dt"));
        }
        if !is_multiple(b.t_update, sim.control_dt) {
            return Err(bad("bounds.t_update", "must be an integer multiple of sim.control_dt"));
        }
        if !(b.activation >= self.predictor.beta) {
            return Err(bad("bounds.activation", "must be at least predictor.beta"));
        }
        let o = &self.observer;
        if !(o.alpha_h > 0.0 && o.alpha_h <= 0.5 / sim.control_dt) {
            return Err(bad("observer.alpha_h", "must lie in (0, 1/(2·sim.control_dt)]"));
        }
        if !(o.c > 0.0 && o.c < 2.0 * o.alpha_h) {
            return Err(bad("observer.c", "must lie in (0, 2·alpha_h)"));
        }
        if !(o.w1_floor >= 0.0 && o.e_d0_bound >= 0.0) {
            return Err(bad("observer", "w1_floor and e_d0_bound must be non-negative"));
        }
        let sf = &self.safety;
        if !(sf.alpha0 > 0.0) {
            return Err(bad("safety.alpha0", "must be positive"));
        }
        if sf.n_scan < 2 {
            return Err(bad("safety.n_scan", "must be at least 2"));
        }
        if !(sf.udot_max >= 0.0 && sf.udot_max.is_finite()) {
            return Err(bad("safety.udot_max", "must be non-negative"));
        }
        Ok(())
    }
}
