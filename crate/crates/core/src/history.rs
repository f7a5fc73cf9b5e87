//! Timestamped control-input history with zero-order-hold reconstruction.
//!
//! Every delayed-input evaluation in the crate (plant integration, the
//! distribution-variable predictor, the forward prediction used by the
//! safety filter) reads the applied input `u(t - D)` from a
//! [`TimedInputBuffer`]. Between samples the input is held constant, so
//! integrating against the buffer is exact as long as the integrator splits
//! its steps at the reported switch times (see [`InputSignal::switches`]).

use std::collections::VecDeque;

use nalgebra::DVector;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HistoryError {
    #[error("sample time {t} is not after the last stored time {last}")]
    NonMonotone { t: f64, last: f64 },
    #[error("input has dimension {got}, buffer expects {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("lookback to {requested} is not retained (oldest retained sample at {oldest}, missing span {missing})")]
    Lookback { requested: f64, oldest: f64, missing: f64 },
    #[error("input at {requested} is not committed yet (newest sample at {newest})")]
    Future { requested: f64, newest: f64 },
    #[error("horizon {horizon} is shorter than the required lookback {required}")]
    HorizonTooShort { horizon: f64, required: f64 },
    #[error("invalid buffer parameter: {0}")]
    Invalid(&'static str),
}

/// A piecewise-constant signal that can be queried at any time and reports
/// where its value may change.
pub trait InputSignal {
    fn dim(&self) -> usize;

    fn at(&self, tau: f64) -> Result<DVector<f64>, HistoryError>;

    /// Times strictly inside `(a, b)` at which the held value may switch.
    fn switches(&self, a: f64, b: f64) -> Vec<f64>;
}

#[derive(Debug, Clone)]
pub struct TimedInputBuffer {
    samples: VecDeque<(f64, DVector<f64>)>,
    dim: usize,
    horizon: f64,
    dt: f64,
    pre_run: DVector<f64>,
    run_start: f64,
    evicted: bool,
}

impl TimedInputBuffer {
    /// Empty buffer for `dim`-dimensional inputs. The pre-run input defaults
    /// to zero and the run is assumed to start at `t = 0`.
    pub fn new(dim: usize, horizon: f64, dt: f64) -> Result<Self, HistoryError> {
        if dim == 0 {
            return Err(HistoryError::Invalid("input dimension must be positive"));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(HistoryError::Invalid("horizon must be positive and finite"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(HistoryError::Invalid("dt must be positive and finite"));
        }
        Ok(Self {
            samples: VecDeque::new(),
            dim,
            horizon,
            dt,
            pre_run: DVector::zeros(dim),
            run_start: 0.0,
            evicted: false,
        })
    }

    pub fn with_pre_run(mut self, pre_run: DVector<f64>, run_start: f64) -> Result<Self, HistoryError> {
        if pre_run.len() != self.dim {
            return Err(HistoryError::Dimension {
                expected: self.dim,
                got: pre_run.len(),
            });
        }
        self.pre_run = pre_run;
        self.run_start = run_start;
        Ok(self)
    }

    /// Checks that the retention horizon covers the deepest lookback a
    /// consumer will perform.
    pub fn require_horizon(&self, required: f64) -> Result<(), HistoryError> {
        if self.horizon < required {
            return Err(HistoryError::HorizonTooShort {
                horizon: self.horizon,
                required,
            });
        }
        Ok(())
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn run_start(&self) -> f64 {
        self.run_start
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn newest_time(&self) -> Option<f64> {
        self.samples.back().map(|(t, _)| *t)
    }

    pub fn oldest_time(&self) -> Option<f64> {
        self.samples.front().map(|(t, _)| *t)
    }

    pub fn push(&mut self, t: f64, u: DVector<f64>) -> Result<(), HistoryError> {
        if u.len() != self.dim {
            return Err(HistoryError::Dimension {
                expected: self.dim,
                got: u.len(),
            });
        }
        if let Some(last) = self.newest_time() {
            if t <= last {
                return Err(HistoryError::NonMonotone { t, last });
            }
        }
        self.samples.push_back((t, u));

        // Keep the sample that governs `t - horizon` so the whole horizon
        // stays answerable.
        let cutoff = t - self.horizon;
        while self.samples.len() >= 2 && self.samples[1].0 <= cutoff {
            self.samples.pop_front();
            self.evicted = true;
        }
        Ok(())
    }

    /// Zero-order-hold value at `tau`.
    pub fn sample(&self, tau: f64) -> Result<DVector<f64>, HistoryError> {
        if tau < self.run_start && !self.evicted {
            return Ok(self.pre_run.clone());
        }
        let (oldest, newest) = match (self.samples.front(), self.samples.back()) {
            (Some((a, _)), Some((b, _))) => (*a, *b),
            _ => {
                return Err(HistoryError::Future {
                    requested: tau,
                    newest: f64::NEG_INFINITY,
                })
            }
        };
        if tau < oldest {
            return Err(HistoryError::Lookback {
                requested: tau,
                oldest,
                missing: oldest - tau,
            });
        }
        // The newest sample is held for one nominal period.
        if tau > newest + self.dt * (1.0 + 1e-9) {
            return Err(HistoryError::Future { requested: tau, newest });
        }
        let idx = self.samples.partition_point(|(t, _)| *t <= tau);
        Ok(self.samples[idx - 1].1.clone())
    }

    /// Exact mean of the held signal over `[a, b]`.
    pub fn average(&self, a: f64, b: f64) -> Result<DVector<f64>, HistoryError> {
        if b <= a {
            return self.sample(a);
        }
        let mut knots = vec![a];
        knots.extend(self.switches(a, b));
        knots.push(b);
        let mut acc = DVector::zeros(self.dim);
        for w in knots.windows(2) {
            let mid = 0.5 * (w[0] + w[1]);
            acc += self.sample(mid)? * (w[1] - w[0]);
        }
        Ok(acc / (b - a))
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, DVector<f64>)> {
        self.samples.iter()
    }
}

impl InputSignal for TimedInputBuffer {
    fn dim(&self) -> usize {
        self.dim
    }

    fn at(&self, tau: f64) -> Result<DVector<f64>, HistoryError> {
        self.sample(tau)
    }

    fn switches(&self, a: f64, b: f64) -> Vec<f64> {
        let mut out = Vec::new();
        if !self.evicted && a < self.run_start && self.run_start < b {
            out.push(self.run_start);
        }
        let start = self.samples.partition_point(|(t, _)| *t <= a);
        for (t, _) in self.samples.iter().skip(start) {
            if *t >= b {
                break;
            }
            out.push(*t);
        }
        out.dedup();
        out
    }
}

/// `signal(tau - delay)`.
pub struct Delayed<'a, S: ?Sized> {
    pub signal: &'a S,
    pub delay: f64,
}

impl<'a, S: InputSignal + ?Sized> Delayed<'a, S> {
    pub fn new(signal: &'a S, delay: f64) -> Self {
        Self { signal, delay }
    }
}

impl<S: InputSignal + ?Sized> InputSignal for Delayed<'_, S> {
    fn dim(&self) -> usize {
        self.signal.dim()
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

/// Pointwise sum of two signals of equal dimension.
pub struct Sum<'a, A: ?Sized, B: ?Sized> {
    pub first: &'a A,
    pub second: &'a B,
}

impl<A: InputSignal + ?Sized, B: InputSignal + ?Sized> InputSignal for Sum<'_, A, B> {
    fn dim(&self) -> usize {
        self.first.dim()
    }

    fn at(&self, tau: f64) -> Result<DVector<f64>, HistoryError> {
        Ok(self.first.at(tau)? + self.second.at(tau)?)
    }

    fn switches(&self, a: f64, b: f64) -> Vec<f64> {
        let mut s = self.first.switches(a, b);
        s.extend(self.second.switches(a, b));
        s.sort_by(f64::total_cmp);
        s.dedup();
        s
    }
}

/// A signal that never changes.
#[derive(Debug, Clone)]
pub struct Constant(pub DVector<f64>);

impl InputSignal for Constant {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn at(&self, _tau: f64) -> Result<DVector<f64>, HistoryError> {
        Ok(self.0.clone())
    }

    fn switches(&self, _a: f64, _b: f64) -> Vec<f64> {
        Vec::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(x: f64) -> DVector<f64> {
        DVector::from_element(1, x)
    }

    #[test]
    fn push_holds_both_samples() {
        let mut b = TimedInputBuffer::new(1, 10.0, 0.1).unwrap();
        b.push(0.0, v(1.0)).unwrap();
        b.push(0.1, v(2.0)).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b.sample(0.0).unwrap()[0], 1.0);
        assert_eq!(b.sample(0.1).unwrap()[0], 2.0);
    }

    #[test]
    fn repeated_time_is_rejected() {
        let mut b = TimedInputBuffer::new(1, 10.0, 0.1).unwrap();
        b.push(0.1, v(1.0)).unwrap();
        let err = b.push(0.1, v(2.0)).unwrap_err();
        assert!(matches!(err, HistoryError::NonMonotone { .. }));
    }

    #[test]
    fn wrong_dimension_is_rejected() {
        let mut b = TimedInputBuffer::new(2, 10.0, 0.1).unwrap();
        assert!(matches!(
            b.push(0.0, v(1.0)),
            Err(HistoryError::Dimension { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn eviction_follows_horizon() {
        let mut b = TimedInputBuffer::new(1, 5.0, 1.0).unwrap();
        for k in 0..=10 {
            b.push(k as f64, v(k as f64)).unwrap();
        }
        assert_eq!(b.oldest_time(), Some(5.0));
        assert_eq!(b.sample(5.0).unwrap()[0], 5.0);
        match b.sample(4.9) {
            Err(HistoryError::Lookback { oldest, missing, .. }) => {
                assert_eq!(oldest, 5.0);
                assert!((missing - 0.1).abs() < 1e-12);
            }
            other => panic!("expected lookback error, got {other:?}"),
        }
    }

    #[test]
    fn zero_order_hold_between_samples() {
        let mut b = TimedInputBuffer::new(1, 10.0, 1.0).unwrap();
        b.push(0.0, v(1.0)).unwrap();
        b.push(1.0, v(3.0)).unwrap();
        assert_eq!(b.sample(0.5).unwrap()[0], 1.0);
        assert_eq!(b.sample(1.0).unwrap()[0], 3.0);
    }

    #[test]
    fn pre_run_input_before_start() {
        let mut b = TimedInputBuffer::new(1, 10.0, 0.1).unwrap();
        b.push(0.0, v(5.0)).unwrap();
        assert_eq!(b.sample(-0.2).unwrap()[0], 0.0);

        let mut c = TimedInputBuffer::new(1, 10.0, 0.1)
            .unwrap()
            .with_pre_run(v(-1.5), 0.0)
            .unwrap();
        c.push(0.0, v(5.0)).unwrap();
        assert_eq!(c.sample(-3.0).unwrap()[0], -1.5);
    }

    #[test]
    fn uncommitted_future_is_an_error() {
        let mut b = TimedInputBuffer::new(1, 10.0, 0.1).unwrap();
        b.push(0.0, v(5.0)).unwrap();
        assert!(b.sample(0.05).is_ok());
        assert!(matches!(b.sample(0.5), Err(HistoryError::Future { .. })));
    }

    #[test]
    fn horizon_requirement() {
        let b = TimedInputBuffer::new(1, 2.0, 0.1).unwrap();
        assert!(b.require_horizon(2.5).is_err());
        assert!(b.require_horizon(1.5).is_ok());
    }

    #[test]
    fn average_is_exact_for_held_signal() {
        let mut b = TimedInputBuffer::new(1, 10.0, 1.0).unwrap();
        b.push(0.0, v(1.0)).unwrap();
        b.push(1.0, v(3.0)).unwrap();
        let avg = b.average(0.5, 1.5).unwrap()[0];
        assert!((avg - 2.0).abs() < 1e-15);
        // spans the pre-run boundary
        let avg = b.average(-1.0, 1.0).unwrap()[0];
        assert!((avg - 0.5).abs() < 1e-15);
    }

    #[test]
    fn delayed_switches_are_shifted() {
        let mut b = TimedInputBuffer::new(1, 10.0, 0.1).unwrap();
        for k in 0..5 {
            b.push(0.1 * k as f64, v(k as f64)).unwrap();
        }
        let d = Delayed::new(&b, 0.25);
        let s = d.switches(0.3, 0.6);
        assert_eq!(s.len(), 3);
        for (got, want) in s.iter().zip([0.35, 0.45, 0.55]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert_eq!(d.at(0.36).unwrap()[0], 1.0);
    }

    proptest! {
        #[test]
        fn stored_samples_round_trip(vals in proptest::collection::vec(-100.0f64..100.0, 1..40)) {
            let mut b = TimedInputBuffer::new(1, 1e6, 0.1).unwrap();
            for (k, x) in vals.iter().enumerate() {
                b.push(0.1 * k as f64, v(*x)).unwrap();
            }
            for (k, x) in vals.iter().enumerate() {
                prop_assert_eq!(b.sample(0.1 * k as f64).unwrap()[0], *x);
            }
        }

        #[test]
        fn piecewise_constant_between_samples(
            vals in proptest::collection::vec(-10.0f64..10.0, 2..20),
            f1 in 0.0f64..1.0,
            f2 in 0.0f64..1.0,
        ) {
            let mut b = TimedInputBuffer::new(1, 1e6, 1.0).unwrap();
            for (k, x) in vals.iter().enumerate() {
                b.push(k as f64, v(*x)).unwrap();
            }
            let k = (vals.len() - 2) as f64;
            let (lo, hi) = if f1 <= f2 { (f1, f2) } else { (f2, f1) };
            // no sample inside (k + lo, k + hi] unless hi reaches the next one
            let t1 = k + lo * 0.999;
            let t2 = k + hi * 0.999;
            prop_assert_eq!(b.sample(t1).unwrap(), b.sample(t2).unwrap());
        }
    }
}
