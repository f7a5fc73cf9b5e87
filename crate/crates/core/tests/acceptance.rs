//! End-to-end acceptance checks on the default truck scenario. Each test
//! prints one PASS/FAIL line.

mod common;

use std::collections::HashMap;
use std::sync::OnceLock;

use common::{inputs_before, verdict};
use dacbf::bounds::{prediction_error, update_bounds, BoundSolver, DelayBoundSet, PredictionErrorBudget};
use dacbf::config::{Mode, RunConfig};
use dacbf::observer::ObserverParams;
use dacbf::oracle::{envelope_check, nlp_grid_oracle, theorem1_check, truck_e_max_closed_form};
use dacbf::predictor::{cost, evaluate};
use dacbf::safety::e_max;
use dacbf::sim::{run, RunTrace};
use dacbf::truck::TruckModel;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

const DELAYS: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
const SAFETY_TOL: f64 = 1e-6;

fn key(mode: Mode, delay: f64) -> (Mode, u64) {
    (mode, (delay * 1000.0).round() as u64)
}

/// Every run the criteria need, computed once and shared by all tests.
fn runs() -> &'static HashMap<(Mode, u64), RunTrace> {
    static RUNS: OnceLock<HashMap<(Mode, u64), RunTrace>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let mut jobs: Vec<(Mode, f64)> = DELAYS
            .iter()
            .flat_map(|d| [(Mode::DacbfBaseline, *d), (Mode::Proposed, *d)])
            .collect();
        jobs.push((Mode::Unfiltered, 0.5));
        jobs.par_iter()
            .map(|(mode, delay)| {
                let cfg = RunConfig {
                    mode: *mode,
                    true_delay: *delay,
                    ..RunConfig::default()
                };
                let started = std::time::Instant::now();
                let trace = run(&cfg).expect("run completes");
                assert!(
                    started.elapsed().as_secs_f64() <= 60.0,
                    "{mode} at D = {delay} exceeded 60 s"
                );
                (key(*mode, *delay), trace)
            })
            .collect()
    })
}

fn trace(mode: Mode, delay: f64) -> &'static RunTrace {
    &runs()[&key(mode, delay)]
}

#[test]
fn c01_safety_invariance() {
    let mut worst = f64::INFINITY;
    let mut ok = true;
    for d in DELAYS {
        for mode in [Mode::DacbfBaseline, Mode::Proposed] {
            let min_h = trace(mode, d).summary.min_h;
            worst = worst.min(min_h);
            ok &= min_h >= -SAFETY_TOL;
        }
    }
    verdict("1 safety invariance", ok, &format!("min h over 10 runs = {worst:.4e}"));
    assert!(ok);
}

#[test]
fn c02_conservatism_trend() {
    let base: Vec<f64> = DELAYS
        .iter()
        .map(|d| trace(Mode::DacbfBaseline, *d).summary.avg_h)
        .collect();
    let prop: Vec<f64> = DELAYS.iter().map(|d| trace(Mode::Proposed, *d).summary.avg_h).collect();
    let below = prop.iter().zip(&base).all(|(p, b)| p < b);
    let rising = base.windows(2).all(|w| w[1] >= w[0]);
    let mean_p = prop.iter().sum::<f64>() / prop.len() as f64;
    let mean_b = base.iter().sum::<f64>() / base.len() as f64;
    let spread = (prop.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - prop.iter().copied().fold(f64::INFINITY, f64::min))
        / mean_p;
    let ratio = mean_p / mean_b;
    let ok = below && rising && spread <= 0.20 && ratio <= 0.35;
    verdict(
        "2 conservatism trend",
        ok,
        &format!("baseline {base:.3?}, proposed {prop:.3?}, spread {spread:.3}, ratio {ratio:.3}"),
    );
    assert!(ok);
}

#[test]
fn c03_set_membership() {
    let mut nested = true;
    let mut member = true;
    for d in DELAYS {
        let t = trace(Mode::Proposed, d);
        let (mut lo, mut hi) = (t.config.bounds.lo0, t.config.bounds.hi0);
        for e in &t.epochs {
            nested &= e.lo >= lo && e.hi <= hi;
            if e.premise {
                member &= e.lo <= d && d <= e.hi;
            }
            (lo, hi) = (e.lo, e.hi);
        }
    }
    let t = trace(Mode::Proposed, 0.5);
    let fail_rate = t.summary.premise_failures as f64 / t.summary.epochs.max(1) as f64;
    let d0 = t.config.bounds.hi0 - t.config.bounds.lo0;
    let shrunk = t.summary.final_d_tilde_max <= 0.5 * d0;
    let ok = nested && member && fail_rate < 0.01 && shrunk && t.summary.epochs > 0;
    verdict(
        "3 set-membership soundness",
        ok,
        &format!(
            "nested {nested}, contains D {member}, premise failures {}/{}, final D̃_max {:.4e}",
            t.summary.premise_failures, t.summary.epochs, t.summary.final_d_tilde_max
        ),
    );
    assert!(ok);
}

#[test]
fn c04_monotone_conservatism() {
    let mut monotone = true;
    let mut below_ref = true;
    let mut below_base = true;
    let mut worst_step = 0.0_f64;
    for d in DELAYS {
        let p = trace(Mode::Proposed, d);
        monotone &= p
            .epochs
            .windows(2)
            .all(|w| w[1].e_tj_max_lit <= w[0].e_tj_max_lit + 1e-9);
        below_ref &= p.steps.iter().all(|s| s.d_e <= s.d_e_ref);
        let b = trace(Mode::DacbfBaseline, d);
        for (sp, sb) in p.steps.iter().zip(&b.steps) {
            assert_eq!(sp.t, sb.t);
            worst_step = worst_step.max(sp.d_e - sb.d_e);
            below_base &= sp.d_e <= sb.d_e;
        }
    }
    let ok = monotone && below_ref && below_base;
    verdict(
        "4 monotone conservatism",
        ok,
        &format!(
            "e_tj_max non-increasing {monotone}, d_e <= counterfactual baseline {below_ref}, \
             d_e <= baseline run {below_base} (max excess {worst_step:.3e})"
        ),
    );
    assert!(ok);
}

#[test]
fn c05_prediction_error_bound_oracle() {
    let started = std::time::Instant::now();
    let sound = theorem1_check(100, 11, 1.0).unwrap();
    let control = theorem1_check(100, 11, 0.5).unwrap();
    let secs = started.elapsed().as_secs_f64();
    // production quadrature against the closed form: the integrand is convex,
    // so the trapezoid rule may only overestimate
    let model = TruckModel::new(&RunConfig::default().scenario.truck);
    let y = |_: f64| Ok(nalgebra::DVector::from_vec(vec![30.0, 10.0, 10.0]));
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut quad_ok = true;
    for _ in 0..100 {
        let (eps, t0, span) = (
            rng.gen_range(0.0..1.0),
            rng.gen_range(0.0..20.0),
            rng.gen_range(0.01..2.5),
        );
        let prod = e_max(&model, y, t0, t0 + span, eps, 6.0, 64).unwrap();
        let exact = truck_e_max_closed_form(eps, span);
        quad_ok &= prod >= exact * (1.0 - 1e-12) && prod <= exact * (1.0 + 1e-3);
    }
    let ok = sound.violations == 0 && control.violations >= 1 && quad_ok && secs <= 300.0;
    verdict(
        "5 prediction-error bound oracle",
        ok,
        &format!(
            "{} samples, {} violations, max gap {:.3e}; negative control {} violations; \
             quadrature within bounds {quad_ok}; {secs:.1} s",
            sound.samples, sound.violations, sound.max_gap, control.violations
        ),
    );
    assert!(ok);
}

#[test]
fn c06_envelope_oracle() {
    let cfg = RunConfig::default();
    let p = cfg.observer_params();
    let sound = envelope_check(p.alpha_h, p.c, p.w1, 50, 23, 1.0);
    let control = envelope_check(p.alpha_h, p.c, p.w1, 50, 23, 0.5);
    let mut analytic = 0.0_f64;
    for (e0, w1, c) in [(12.0, 0.2, 10.0), (0.0, 1.0, 3.0), (2.5, 0.0, 19.0)] {
        let q = ObserverParams {
            alpha_h: 10.0,
            c,
            w1,
            e_d0_bound: e0,
        };
        analytic = analytic.max((q.envelope(0.0) - e0).abs());
        let limit = w1 / (2.0 * c * q.k()).sqrt();
        analytic = analytic.max((q.envelope(1e3) - limit).abs());
        analytic = analytic.max((q.envelope_limit() - limit).abs());
    }
    let ok = sound.violations == 0 && control.violations > 0 && analytic <= 1e-12;
    verdict(
        "6 observer envelope oracle",
        ok,
        &format!(
            "{} samples, {} violations, max gap {:.3e}; negative control {} violations; analytic error {analytic:.1e}",
            sound.samples, sound.violations, sound.max_gap, control.violations
        ),
    );
    assert!(ok);
}

#[test]
fn c07_estimator_properties() {
    let t = trace(Mode::Proposed, 0.5);
    let d = t.config.true_delay;
    let gamma = t.config.estimator.gamma;
    let tc = t.config.sim.control_dt;
    let mut sign_ok = true;
    let mut mono_ok = true;
    let mut worst_sign = f64::INFINITY;
    let mut prior = t.config.estimator.d_hat0;
    for s in &t.steps {
        let prod = (d - prior) * s.rho;
        worst_sign = worst_sign.min(prod);
        sign_ok &= prod >= -1e-9;
        mono_ok &= (d - s.d_hat).abs() <= (d - prior).abs() + gamma * s.rho.abs() * tc + 1e-12;
        prior = s.d_hat;
    }

    let model = TruckModel::new(&t.config.scenario.truck);
    let pc = t.config.predictor;
    let beta_steps = (pc.beta / tc).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_rel = 0.0_f64;
    for _ in 0..100 {
        let k = rng.gen_range(beta_steps..t.steps.len());
        let buf = inputs_before(t, k);
        // off the kinks at multiples of the hold period
        let d_hat = (rng.gen_range(0..150) as f64 + rng.gen_range(0.1..0.9)) * tc;
        let (x_t, x_tmb) = (&t.steps[k].x, &t.steps[k - beta_steps].x);
        let tk = t.steps[k].t;
        let r = evaluate(&model, &buf, x_t, x_tmb, tk, d_hat, &pc).unwrap();
        let h = 1e-6;
        let jp = cost(&model, &buf, x_t, x_tmb, tk, d_hat + h, &pc).unwrap();
        let jm = cost(&model, &buf, x_t, x_tmb, tk, d_hat - h, &pc).unwrap();
        let fd = (jp - jm) / (2.0 * h);
        let scale = r.grad.abs().max(fd.abs());
        let rel = if scale > 1e-12 {
            (r.grad - fd).abs() / scale
        } else {
            0.0
        };
        worst_rel = worst_rel.max(rel);
    }
    let ok = sign_ok && mono_ok && worst_rel <= 1e-3;
    verdict(
        "7 estimator properties",
        ok,
        &format!("min D̃·ρ {worst_sign:.3e}, |D̃| monotone {mono_ok}, worst gradient rel. error {worst_rel:.3e}"),
    );
    assert!(ok);
}

#[test]
fn c08_nlp_oracle() {
    let t = trace(Mode::Proposed, 0.5);
    let model = TruckModel::new(&t.config.scenario.truck);
    let pc = t.config.predictor;
    let tc = t.config.sim.control_dt;
    let beta_steps = (pc.beta / tc).round() as usize;
    let solver = BoundSolver {
        n_grid: t.config.bounds.n_grid,
        tol: t.config.bounds.tol,
    };
    let n_fine = 10 * (solver.n_grid - 1) + 1;
    let picks: Vec<usize> = (0..50).map(|i| i * (t.epochs.len() - 1) / 49).collect();
    let mut ok = true;
    let mut worst = 0.0_f64;
    let mut replayed = true;
    for j in picks {
        let e = &t.epochs[j];
        let prev = if j == 0 {
            DelayBoundSet::new(t.config.bounds.lo0, t.config.bounds.hi0).unwrap()
        } else {
            DelayBoundSet::new(t.epochs[j - 1].lo, t.epochs[j - 1].hi).unwrap()
        };
        let k = (e.t / tc).round() as usize;
        let buf = inputs_before(t, k);
        let (x_t, x_tmb) = (&t.steps[k].x, &t.steps[k - beta_steps].x);
        let ep = |d: f64| prediction_error(&model, &buf, x_t, x_tmb, e.t, d, &pc);
        let budget = PredictionErrorBudget::new(e.residual_b, e.disturbance_term);
        let (set, diag) = update_bounds(&prev, &budget, ep, &solver);
        replayed &= diag.is_none() && (set.lo - e.lo).abs() <= 1e-12 && (set.hi - e.hi).abs() <= 1e-12;
        let (olo, ohi) = nlp_grid_oracle(|d| ep(d).unwrap(), budget.total, prev.lo, prev.hi, n_fine).expect("feasible");
        let allow = solver.tol + (prev.hi - prev.lo) / (n_fine - 1) as f64;
        let gap = (set.lo - olo).abs().max((set.hi - ohi).abs());
        worst = worst.max(gap);
        ok &= (set.lo - olo).abs() <= allow && (set.hi - ohi).abs() <= allow;
    }
    ok &= replayed;
    verdict(
        "8 NLP oracle equivalence",
        ok,
        &format!("50 snapshots, worst boundary gap {worst:.3e}, replay matches run {replayed}"),
    );
    assert!(ok);
}

#[test]
fn c09_filter_optimality() {
    let t = trace(Mode::Proposed, 0.5);
    let p = &t.config.scenario.truck;
    let alpha0 = t.config.safety.alpha0;
    let n = 10_000;
    let spacing = (p.u_max - p.u_min) / (n - 1) as f64;
    let mut ok = true;
    let mut worst = 0.0_f64;
    let mut min_slack = f64::INFINITY;
    for s in &t.steps {
        let x = &s.x_pred;
        let h = x[0] - p.xi_sf - p.headway * x[1];
        let slack_at = |u: f64| (x[2] - x[1]) - p.headway * u + alpha0 * h - s.d_e;
        let u_nom = s.u_nom[0];
        let best = (0..n)
            .map(|i| p.u_min + spacing * i as f64)
            .filter(|u| slack_at(*u) >= 0.0)
            .min_by(|a, b| (a - u_nom).abs().total_cmp(&(b - u_nom).abs()));
        match best {
            Some(ub) => {
                let gap = (s.u[0] - ub).abs();
                worst = worst.max(gap);
                ok &= s.feasible && gap <= spacing;
            }
            None => ok &= !s.feasible || slack_at(p.u_min) >= -1e-9,
        }
        if s.feasible {
            let sl = slack_at(s.u[0]);
            min_slack = min_slack.min(sl);
            ok &= sl >= -1e-9 && s.slack >= -1e-9;
        }
    }
    verdict(
        "9 filter optimality",
        ok,
        &format!(
            "{} steps, worst gap to scan {worst:.3e} (spacing {spacing:.1e}), min slack {min_slack:.3e}",
            t.steps.len()
        ),
    );
    assert!(ok);
}

#[test]
fn c10_scenario_criticality() {
    let s = &trace(Mode::Unfiltered, 0.5).summary;
    let ok = s.min_h < 0.0;
    verdict(
        "10 scenario criticality",
        ok,
        &format!("unfiltered min h = {:.4e}", s.min_h),
    );
    assert!(ok);
}
