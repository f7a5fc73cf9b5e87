//! Delay-adaptive barrier condition: prediction-error bounds, the robustness
//! margin `d_e`, and the minimum-deviation safety filter.
//!
//! The filter enforces, at the predicted state `x̂_p`,
//!
//! ```text
//! L_f h(x̂_p) + L_g h(x̂_p)·u − d_e ≥ −α(h(x̂_p)),   u ∈ [u_lo, u_hi]
//! ```
//!
//! where `d_e` absorbs the worst-case state prediction error `e_{t_j,max}`.

use nalgebra::DVector;

use crate::dynamics::{spectral_norm, DynamicsError, SystemModel};

/// Lipschitz constants of `L_f h`, `L_g h` and `α∘h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BarrierLipschitz {
    pub lf_h: f64,
    pub lg_h: f64,
    pub alpha_h: f64,
}

pub trait Barrier: Send + Sync {
    fn value(&self, x: &DVector<f64>) -> f64;
    fn gradient(&self, x: &DVector<f64>) -> DVector<f64>;
    /// Extended class-K∞ gain.
    fn alpha(&self, s: f64) -> f64;
    fn lipschitz(&self) -> BarrierLipschitz;
}

/// `(L_f h, L_g h)` at `(t, x)`.
pub fn lie_derivatives(bf: &dyn Barrier, model: &dyn SystemModel, t: f64, x: &DVector<f64>) -> (f64, DVector<f64>) {
    let grad = bf.gradient(x);
    let lf = grad.dot(&model.drift(t, x));
    let lg = (model.actuation(t, x).transpose() * grad).into_owned();
    (lf, lg)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SafetyMargins {
    pub e_max_val: f64,
    pub delta_y_max: f64,
    pub e_tj_max: f64,
    pub d_e: f64,
    pub eps_max: f64,
    pub a_const: f64,
    pub u_max: f64,
    pub udot_max: f64,
}

impl SafetyMargins {
    pub fn new(e_max_val: f64, delta_y_max: f64, eps_max: f64, a_const: f64, u_max: f64, udot_max: f64) -> Self {
        Self {
            e_max_val,
            delta_y_max,
            e_tj_max: e_max_val + delta_y_max,
            d_e: 0.0,
            eps_max,
            a_const,
            u_max,
            udot_max,
        }
    }

    pub fn with_margin(mut self, lip: &BarrierLipschitz, u_norm: f64) -> Self {
        self.d_e = robust_margin(lip, self.e_tj_max, u_norm);
        self
    }
}

/// Growth constant `a = 𝔏_f + 𝔏_g·(u_max + ε_max)`.
pub fn growth_constant(model: &dyn SystemModel, u_max: f64, eps_max: f64) -> f64 {
    let l = model.lipschitz();
    l.f + l.g * (u_max + eps_max)
}

/// `ε_max·∫_{t1}^{t2} e^{a(t2−τ)}‖g(y(τ))‖ dτ` by the trapezoid rule on
/// `n_quad` intervals.
pub fn e_max<Y>(
    model: &dyn SystemModel,
    traj: Y,
    t1: f64,
    t2: f64,
    eps_max: f64,
    u_max: f64,
    n_quad: usize,
) -> Result<f64, DynamicsError>
where
    Y: Fn(f64) -> Result<DVector<f64>, DynamicsError>,
{
    if !(t1 < t2) {
        return Err(DynamicsError::Invalid("e_max needs t1 < t2"));
    }
    if eps_max == 0.0 {
        return Ok(0.0);
    }
    let n = n_quad.max(1);
    let a = growth_constant(model, u_max, eps_max);
    let h = (t2 - t1) / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let tau = if i == n { t2 } else { t1 + i as f64 * h };
        let y = traj(tau)?;
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        sum += w * (a * (t2 - tau)).exp() * spectral_norm(&model.actuation(tau, &y));
    }
    Ok(eps_max * sum * h)
}

/// `max ‖y(t + D̂ + D̃) − y(t + D̂)‖` over `n_scan` uniform `D̃ ∈ [−D̃_max, D̃_max]`.
pub fn delta_y_max<Y>(traj: Y, t: f64, d_hat: f64, d_tilde_max: f64, n_scan: usize) -> Result<f64, DynamicsError>
where
    Y: Fn(f64) -> Result<DVector<f64>, DynamicsError>,
{
    if d_tilde_max <= 0.0 {
        return Ok(0.0);
    }
    let n = n_scan.max(2);
    let center = traj(t + d_hat)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let s = -d_tilde_max + 2.0 * d_tilde_max * i as f64 / (n - 1) as f64;
        worst = worst.max((traj(t + d_hat + s)? - &center).norm());
    }
    Ok(worst)
}

/// `d_e = (𝔏_{L_f h} + 𝔏_{α∘h})·e + 𝔏_{L_g h}·e·‖u‖`.
pub fn robust_margin(lip: &BarrierLipschitz, e_tj_max: f64, u_norm: f64) -> f64 {
    (lip.lf_h + lip.alpha_h) * e_tj_max + lip.lg_h * e_tj_max * u_norm
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub u: DVector<f64>,
    /// False when no input in the box satisfies the constraint; `u` then
    /// maximizes the constraint slack.
    pub feasible: bool,
    /// `L_f h + L_g h·u − d_e + α(h)` at the returned `u`.
    pub slack: f64,
}

/// Box bounds of the input.
#[derive(Debug, Clone, PartialEq)]
pub struct InputBox {
    pub lo: DVector<f64>,
    pub hi: DVector<f64>,
}

impl InputBox {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Result<Self, DynamicsError> {
        if lo.len() != hi.len() || lo.iter().zip(hi.iter()).any(|(a, b)| !(a <= b)) {
            return Err(DynamicsError::Invalid("input box must be nonempty"));
        }
        Ok(Self { lo, hi })
    }

    pub fn scalar(lo: f64, hi: f64) -> Result<Self, DynamicsError> {
        Self::new(DVector::from_element(1, lo), DVector::from_element(1, hi))
    }

    pub fn clamp(&self, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(u.len(), |i, _| u[i].clamp(self.lo[i], self.hi[i]))
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.iter().enumerate().all(|(i, v)| self.lo[i] <= *v && *v <= self.hi[i])
    }
}

/// Minimizes `‖u − u_nom‖²` subject to `a·u ≥ b` and the box.
pub fn project_halfspace_box(a: &DVector<f64>, b: f64, u_nom: &DVector<f64>, bx: &InputBox) -> (DVector<f64>, bool) {
    let base = bx.clamp(u_nom);
    if a.dot(&base) >= b {
        return (base, true);
    }
    if a.len() == 1 {
        let (a0, bound) = (a[0], if a[0] != 0.0 { b / a[0] } else { 0.0 });
        let (lo, hi) = (bx.lo[0], bx.hi[0]);
        return if a0 > 0.0 {
            if bound <= hi {
                (DVector::from_element(1, bound.max(lo)), true)
            } else {
                (DVector::from_element(1, hi), false)
            }
        } else if a0 < 0.0 {
            if bound >= lo {
                (DVector::from_element(1, bound.min(hi)), true)
            } else {
                (DVector::from_element(1, lo), false)
            }
        } else {
            (base, false)
        };
    }
    // u(λ) = clamp(u_nom + λ·a) is the KKT point for multiplier λ; a·u(λ)
    // is non-decreasing in λ, so bisect for a·u(λ) = b.
    let best = DVector::from_fn(a.len(), |i, _| {
        if a[i] > 0.0 {
            bx.hi[i]
        } else if a[i] < 0.0 {
            bx.lo[i]
        } else {
            base[i]
        }
    });
    if a.dot(&best) < b {
        return (best, false);
    }
    let at = |lam: f64| bx.clamp(&(u_nom + a * lam));
    let mut hi = 1.0;
    while a.dot(&at(hi)) < b {
        hi *= 2.0;
        if hi > 1e300 {
            return (best, true);
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if a.dot(&at(mid)) >= b {
            hi = mid;
        } else {
            lo = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    (at(hi), true)
}

/// Safety filter at the predicted state `x_pred` (time `t_pred`).
pub fn filter(
    bf: &dyn Barrier,
    model: &dyn SystemModel,
    t_pred: f64,
    x_pred: &DVector<f64>,
    u_nom: &DVector<f64>,
    d_e: f64,
    bx: &InputBox,
) -> FilterOutcome {
    let (lf, lg) = lie_derivatives(bf, model, t_pred, x_pred);
    let b = -bf.alpha(bf.value(x_pred)) - lf + d_e;
    let (u, feasible) = project_halfspace_box(&lg, b, u_nom, bx);
    let slack = lg.dot(&u) - b;
    FilterOutcome { u, feasible, slack }
}
