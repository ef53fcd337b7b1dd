use std::f64::consts::PI;

use charflow::catalog;
use charflow::characteristics::Interp;
use charflow::solver::{Propagation, Solver, SolverConfig, SolverError};

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// Sine bump before breaking: u solves x = x0 + t sin(x0).
fn sine_smooth(x: f64, t: f64) -> f64 {
    if x <= 0.0 || x >= PI {
        return 0.0;
    }
    bisect(|x0| x0 + t * x0.sin() - x, 0.0, PI).sin()
}

// Sine bump after breaking: the left foot `a` of the shock carries the whole mass 2.
fn sine_shock(t: f64) -> (f64, f64) {
    let mass = |a: f64| 1.0 - a.cos() + 0.5 * t * a.sin() * a.sin() - 2.0;
    let a = bisect(mass, PI / 2.0, PI);
    (a + t * a.sin(), a.sin())
}

fn run(prob: charflow::characteristics::Problem, cfg: SolverConfig, t: f64) -> Solver {
    let mut s = Solver::initialize(prob, cfg).unwrap();
    s.advance(t).unwrap();
    s
}

#[test]
fn smooth_sine_matches_implicit_solution() {
    let s = run(catalog::sine_burgers(), SolverConfig { n_nodes: 160, ..SolverConfig::default() }, 0.5);
    assert!(s.shocks().unwrap().is_empty());
    let xs: Vec<f64> = (1..40).map(|k| -1.5 + 0.25 * k as f64).collect();
    let sample = s.sample(&xs).unwrap();
    for &(x, u) in &sample.points {
        assert!((u - sine_smooth(x, 0.5)).abs() < 1e-8, "x={x}: {u} vs {}", sine_smooth(x, 0.5));
    }
}

#[test]
fn sine_shock_position_and_states() {
    let s = run(catalog::sine_burgers(), SolverConfig { n_nodes: 160, ..SolverConfig::default() }, 2.0);
    let (xs, ul) = sine_shock(2.0);
    let shocks = s.shocks().unwrap();
    assert_eq!(shocks.len(), 1);
    assert!((shocks[0].x - xs).abs() < 1e-9, "{} vs {xs}", shocks[0].x);
    assert!((shocks[0].u_left - ul).abs() < 1e-8);
    assert!(shocks[0].u_right.abs() < 1e-12);
    let at = s.sample(&[shocks[0].x]).unwrap();
    assert_eq!(at.points.len(), 2);
    assert!(at.points[0].1 > at.points[1].1);
}

#[test]
fn sine_conserves_area() {
    let ap = run(catalog::sine_burgers(), SolverConfig { n_nodes: 80, ..SolverConfig::default() }, 3.0);
    assert!(ap.conservation_report().unwrap().abs() < 1e-10);
    // Hermite segments only approximate the area.
    let h = run(catalog::sine_burgers(), SolverConfig { n_nodes: 80, interp: Interp::Hermite, ..SolverConfig::default() }, 3.0);
    assert!(h.conservation_report().unwrap().abs() < 1e-5);
}

#[test]
fn tracking_agrees_with_envelope_on_sine() {
    let cfg = SolverConfig { n_nodes: 80, propagation: Propagation::Pspm, ..SolverConfig::default() };
    let s = run(catalog::sine_burgers(), cfg, 2.0);
    assert!(s.is_tracking());
    let x = s.shocks().unwrap()[0].x;
    assert!((x - sine_shock(2.0).0).abs() < 1e-4);
    assert_eq!(s.diagnostics().births, 1);
    assert!(s.diagnostics().min_overlap_margin > 0.0);
}

// Right-hand side of the shock ODE for constant states decaying under -u(1-u).
fn logistic(g: f64, t: f64) -> f64 {
    g / (g + (1.0 - g) * t.exp())
}

fn rk4(f: impl Fn(f64, f64) -> f64, x0: f64, t0: f64, t1: f64, n: usize) -> f64 {
    let h = (t1 - t0) / n as f64;
    let mut x = x0;
    for k in 0..n {
        let t = t0 + h * k as f64;
        let k1 = f(t, x);
        let k2 = f(t + h / 2.0, x + h / 2.0 * k1);
        let k3 = f(t + h / 2.0, x + h / 2.0 * k2);
        let k4 = f(t + h, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[test]
fn three_states_follow_rankine_hugoniot() {
    let s = run(catalog::three_state_collision(), SolverConfig { n_nodes: 40, dt: 0.01, ..SolverConfig::default() }, 1.0);
    let got: Vec<f64> = s.shocks().unwrap().iter().map(|r| r.x).collect();
    let left = rk4(|t, _| 0.5 * (logistic(0.9, t) + logistic(0.5, t)), 2.0, 0.0, 1.0, 4000);
    let right = rk4(|t, _| 0.5 * (logistic(0.5, t) + logistic(0.2, t)), 2.5, 0.0, 1.0, 4000);
    assert_eq!(got.len(), 2);
    assert!((got[0] - left).abs() < 1e-7, "{} vs {left}", got[0]);
    assert!((got[1] - right).abs() < 1e-7, "{} vs {right}", got[1]);
}

#[test]
fn three_states_merge_once() {
    let s = run(catalog::three_state_collision(), SolverConfig { n_nodes: 40, dt: 0.01, ..SolverConfig::default() }, 2.0);
    assert_eq!(s.shocks().unwrap().len(), 1);
    let d = s.diagnostics();
    assert_eq!(d.merges, 1);
    assert!((d.collision_times[0] - 1.4476864522).abs() < 1e-6);
}

#[test]
fn steady_particle_data_stays_put() {
    let s = run(catalog::particle_path(), SolverConfig { n_nodes: 80, dt: 0.01, interp: Interp::Hermite, ..SolverConfig::default() }, 2.0);
    assert!(s.shocks().unwrap().is_empty());
    assert!(s.curve_error(|x, _| 1.5 - x.cos(), 16).unwrap() < 1e-4);
}

#[test]
fn sampling_outside_the_domain_fails() {
    let s = Solver::initialize(catalog::sine_burgers(), SolverConfig::default()).unwrap();
    assert!(matches!(s.sample(&[10.5]), Err(SolverError::OutOfDomain { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let bad = [
        SolverConfig { n_nodes: 1, ..SolverConfig::default() },
        SolverConfig { dt: 0.0, ..SolverConfig::default() },
        SolverConfig { dt: f64::NAN, ..SolverConfig::default() },
    ];
    for cfg in bad {
        assert!(matches!(Solver::initialize(catalog::sine_burgers(), cfg), Err(SolverError::Config(_))));
    }
}

#[test]
fn advancing_backwards_fails() {
    let mut s = run(catalog::sine_burgers(), SolverConfig::default(), 0.5);
    assert!(s.advance(0.25).is_err());
}

#[test]
fn runs_are_deterministic() {
    let go = || {
        run(catalog::three_state_collision(), SolverConfig { n_nodes: 40, dt: 0.02, ..SolverConfig::default() }, 1.7)
            .sample_uniform(101)
            .unwrap()
    };
    assert_eq!(go(), go());
}
