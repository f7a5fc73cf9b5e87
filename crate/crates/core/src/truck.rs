//! Connected-truck following scenario.
//!
//! State `[ξ, v, v_L]`: gap to the lead truck, follower speed, lead speed.
//! The follower's acceleration command arrives after an unknown constant
//! delay; the lead's acceleration `a_L(t)` is a known exogenous profile.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dynamics::{Lipschitz, SystemModel};
use crate::observer::GainFunctions;
use crate::safety::{Barrier, BarrierLipschitz};

/// One constant-acceleration phase of the lead vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadPhase {
    pub start: f64,
    pub end: f64,
    pub accel: f64,
}

/// Piecewise-constant lead acceleration; zero outside every phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LeadProfile {
    pub phases: Vec<LeadPhase>,
}

impl LeadProfile {
    /// Cruise, brake at −3 m/s² on `[5, 8)` s, then hold speed.
    pub fn braking() -> Self {
        Self {
            phases: vec![LeadPhase {
                start: 5.0,
                end: 8.0,
                accel: -3.0,
            }],
        }
    }

    pub fn accel(&self, t: f64) -> f64 {
        self.phases
            .iter()
            .find(|p| t >= p.start && t < p.end)
            .map_or(0.0, |p| p.accel)
    }

    fn breakpoints(&self) -> Vec<f64> {
        let mut b: Vec<f64> = self.phases.iter().flat_map(|p| [p.start, p.end]).collect();
        b.sort_by(f64::total_cmp);
        b.dedup();
        b
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruckParams {
    /// Stopping distance ξ_sf (m).
    pub xi_sf: f64,
    /// Time headway T (s).
    pub headway: f64,
    /// Standstill distance of the nominal range policy ξ_st (m).
    pub xi_st: f64,
    /// Range-policy slope k (1/s).
    pub k_gain: f64,
    pub v_max: f64,
    /// Distance gain A (1/s).
    pub a_gain: f64,
    /// Velocity gain B (1/s).
    pub b_gain: f64,
    pub u_min: f64,
    pub u_max: f64,
    pub lead: LeadProfile,
}

impl Default for TruckParams {
    fn default() -> Self {
        Self {
            xi_sf: 5.0,
            headway: 1.0,
            xi_st: 5.0,
            k_gain: 2.0,
            v_max: 15.0,
            a_gain: 0.4,
            b_gain: 0.5,
            u_min: -6.0,
            u_max: 3.0,
            lead: LeadProfile::braking(),
        }
    }
}

impl TruckParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.xi_sf > 0.0 && self.headway > 0.0 && self.v_max > 0.0) {
            return Err("xi_sf, headway and v_max must be positive".into());
        }
        if !(self.u_min < 0.0 && 0.0 < self.u_max) {
            return Err("input box must satisfy u_min < 0 < u_max".into());
        }
        for p in &self.lead.phases {
            if !(p.start < p.end) {
                return Err(format!("lead phase [{}, {}) is empty", p.start, p.end));
            }
        }
        Ok(())
    }

    /// Largest input norm in the box.
    pub fn input_bound(&self) -> f64 {
        self.u_min.abs().max(self.u_max.abs())
    }

    /// Range policy `V(ξ) = min{k(ξ − ξ_st), v_max}`.
    pub fn range_policy(&self, xi: f64) -> f64 {
        (self.k_gain * (xi - self.xi_st)).min(self.v_max)
    }

    /// Speed policy `W(v_L) = min{v_L, v_max}`.
    pub fn speed_policy(&self, v_lead: f64) -> f64 {
        v_lead.min(self.v_max)
    }

    pub fn nominal(&self, x: &DVector<f64>) -> DVector<f64> {
        let (xi, v, vl) = (x[0], x[1], x[2]);
        let u = self.a_gain * (self.range_policy(xi) - v) + self.b_gain * (self.speed_policy(vl) - v);
        DVector::from_element(1, u)
    }
}

pub struct TruckModel {
    lead: LeadProfile,
    breakpoints: Vec<f64>,
}

impl TruckModel {
    pub fn new(params: &TruckParams) -> Self {
        Self {
            lead: params.lead.clone(),
            breakpoints: params.lead.breakpoints(),
        }
    }
}

impl SystemModel for TruckModel {
    fn state_dim(&self) -> usize {
        3
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn drift(&self, t: f64, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![x[2] - x[1], 0.0, self.lead.accel(t)])
    }

    fn actuation(&self, _t: f64, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_column_slice(3, 1, &[0.0, 1.0, 0.0])
    }

    /// Constant Jacobian `[[0,−1,1],[0,0,0],[0,0,0]]` has spectral norm √2;
    /// `g` is constant.
    fn lipschitz(&self) -> Lipschitz {
        Lipschitz {
            f: std::f64::consts::SQRT_2,
            g: 0.0,
        }
    }

    fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }
}

/// `h(x) = ξ − ξ_sf − T·v` with a linear class-K gain.
#[derive(Debug, Clone)]
pub struct TruckBarrier {
    pub xi_sf: f64,
    pub headway: f64,
    pub alpha0: f64,
}

impl TruckBarrier {
    pub fn new(params: &TruckParams, alpha0: f64) -> Self {
        Self {
            xi_sf: params.xi_sf,
            headway: params.headway,
            alpha0,
        }
    }
}

impl Barrier for TruckBarrier {
    fn value(&self, x: &DVector<f64>) -> f64 {
        x[0] - self.xi_sf - self.headway * x[1]
    }

    fn gradient(&self, _x: &DVector<f64>) -> DVector<f64> {
        DVector::from_vec(vec![1.0, -self.headway, 0.0])
    }

    fn alpha(&self, s: f64) -> f64 {
        self.alpha0 * s
    }

    fn lipschitz(&self) -> BarrierLipschitz {
        // L_f h = v_L − v has gradient [0, −1, 1]; L_g h = −T is constant.
        BarrierLipschitz {
            lf_h: std::f64::consts::SQRT_2,
            lg_h: 0.0,
            alpha_h: self.alpha0 * (1.0 + self.headway * self.headway).sqrt(),
        }
    }
}

/// Observer gains for the speed channel: `P(x) = v`, `L_d = [0, 1, 0]`,
/// so `L_d·g = 1`.
#[derive(Debug, Clone, Copy, Default)]
pub struct TruckGains;

impl GainFunctions for TruckGains {
    fn p(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_element(1, x[1])
    }

    fn l_d(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 0.0])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::sample_lipschitz;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn x(a: f64, b: f64, c: f64) -> DVector<f64> {
        DVector::from_vec(vec![a, b, c])
    }

    #[test]
    fn matched_speeds_are_an_equilibrium() {
        let model = TruckModel::new(&TruckParams::default());
        let rhs = model.rhs(0.0, &x(10.0, 5.0, 5.0), &DVector::zeros(1));
        assert_eq!(rhs, DVector::zeros(3));
    }

    #[test]
    fn declared_lipschitz_constants_hold() {
        let model = TruckModel::new(&TruckParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let check = sample_lipschitz(&model, 6.0, &[0.0, 0.0, 0.0], &[100.0, 20.0, 20.0], 10_000, &mut rng);
        assert!(check.holds(model.lipschitz(), 1e-6), "{check:?}");
        assert_eq!(check.worst_g, 0.0);
        // the bound is tight along the worst direction [0, −1, 1]
        let d = (model.drift(0.0, &x(0.0, 0.0, 1.0)) - model.drift(0.0, &x(0.0, 1.0, 0.0))).norm();
        assert!((d / 2f64.sqrt() - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn barrier_is_zero_on_boundary_and_gradient_matches() {
        let p = TruckParams::default();
        let bf = TruckBarrier::new(&p, 1.0);
        let v = 7.0;
        assert!(bf.value(&x(p.xi_sf + p.headway * v, v, 3.0)).abs() < 1e-12);
        let x0 = x(30.0, 8.0, 9.0);
        let h = 1e-6;
        for i in 0..3 {
            let mut xp = x0.clone();
            let mut xm = x0.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (bf.value(&xp) - bf.value(&xm)) / (2.0 * h);
            assert!((fd - bf.gradient(&x0)[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn lie_derivative_of_g_is_constant() {
        let p = TruckParams::default();
        let model = TruckModel::new(&p);
        let bf = TruckBarrier::new(&p, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        use rand::Rng;
        for _ in 0..1000 {
            let s = x(
                rng.gen_range(0.0..100.0),
                rng.gen_range(0.0..20.0),
                rng.gen_range(0.0..20.0),
            );
            let lgh = (bf.gradient(&s).transpose() * model.actuation(0.0, &s))[(0, 0)];
            assert_eq!(lgh, -p.headway);
        }
    }

    #[test]
    fn nominal_controller_cases() {
        let p = TruckParams::default();
        assert_eq!(p.nominal(&x(p.xi_st, 0.0, 0.0))[0], 0.0);
        let v = 4.0;
        let u = p.nominal(&x(1e4, v, 12.0))[0];
        assert!((u - (p.a_gain * (p.v_max - v) + p.b_gain * (12.0 - v))).abs() < 1e-12);
        // cruise equilibrium v = V(ξ) = W(v_L)
        let v = 10.0;
        let xi = p.xi_st + v / p.k_gain;
        assert!(p.nominal(&x(xi, v, v))[0].abs() < 1e-12);
    }

    #[test]
    fn policies_are_lipschitz() {
        let p = TruckParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        use rand::Rng;
        for _ in 0..10_000 {
            let (a, b): (f64, f64) = (rng.gen_range(-50.0..100.0), rng.gen_range(-50.0..100.0));
            if a == b {
                continue;
            }
            assert!((p.range_policy(a) - p.range_policy(b)).abs() <= p.k_gain * (a - b).abs() + 1e-12);
            assert!((p.speed_policy(a) - p.speed_policy(b)).abs() <= (a - b).abs() + 1e-12);
        }
    }

    #[test]
    fn lead_profile_is_piecewise_constant() {
        let lead = LeadProfile::braking();
        assert_eq!(lead.accel(4.999), 0.0);
        assert_eq!(lead.accel(5.0), -3.0);
        assert_eq!(lead.accel(7.999), -3.0);
        assert_eq!(lead.accel(8.0), 0.0);
        assert_eq!(lead.breakpoints(), vec![5.0, 8.0]);
    }
}
