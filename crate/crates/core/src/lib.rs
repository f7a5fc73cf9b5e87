//! Delay-adaptive safety filtering for control-affine systems with an
//! unknown constant input delay.
//!
//! The pipeline per control step: estimate the delay from past prediction
//! errors, observe the residual input mismatch, shrink a guaranteed interval
//! of admissible delays, and filter a nominal input through a barrier
//! condition evaluated at the delay-ahead predicted state.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bounds;
pub mod config;
pub mod dynamics;
pub mod estimator;
pub mod history;
pub mod observer;
pub mod oracle;
pub mod predictor;
pub mod safety;
pub mod sim;
pub mod trace;
pub mod truck;
