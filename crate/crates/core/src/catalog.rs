//! Built-in problems and their reference solutions.

use std::f64::consts::PI;

use crate::characteristics::{IcPiece, Inflow, Problem, Source};
use crate::expr::Expr;

/// Names of the built-in problems, in catalog order.
pub const NAMES: [&str; 5] = ["sine-burgers", "box-logistic-k", "particle-path", "three-state-collision", "sine-source-shock"];

/// Tunable catalog parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CatalogParams {
    /// Exponent of the logistic-type source in `box-logistic-k`.
    pub k: f64,
}

impl Default for CatalogParams {
    fn default() -> Self {
        CatalogParams { k: 1.0 }
    }
}

/// Reference solution registered with a problem.
#[derive(Debug, Clone, Copy)]
pub enum Oracle {
    /// Exact shock positions at time `t`, left to right.
    Shocks(fn(f64) -> Vec<f64>),
    /// Exact solution `u(x, t)` of a smooth problem.
    Field(fn(f64, f64) -> f64),
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub parameters: &'static str,
    pub oracle: Option<Oracle>,
    pub oracle_note: &'static str,
}

fn e(s: &str) -> Expr {
    Expr::parse(s).expect("catalog expressions parse")
}

fn piece(lo: f64, hi: f64, g: &str, dg: &str) -> IcPiece {
    IcPiece { lo, hi, g: e(g), dg: e(dg) }
}

fn burgers(name: &str) -> Problem {
    Problem {
        name: name.to_string(),
        flux: e("u^2/2"),
        dflux: e("u"),
        d2flux: e("1"),
        source: None,
        pieces: Vec::new(),
        domain: (0.0, 1.0),
        inflow: None,
    }
}

fn number(v: f64) -> String {
    format!("{v:?}")
}

pub fn sine_burgers() -> Problem {
    Problem {
        pieces: vec![piece(-2.0, 0.0, "0", "0"), piece(0.0, PI, "sin(x)", "cos(x)"), piece(PI, 10.0, "0", "0")],
        domain: (-2.0, 10.0),
        ..burgers("sine-burgers")
    }
}

pub fn box_logistic(k: f64) -> Problem {
    // |u(1-u)| keeps fractional powers defined when round-off leaves [0, 1].
    let q = format!("-abs(u*(1-u))^{}", number(k));
    let dq = format!("-{}*abs(u*(1-u))^{}*(1-2*u)", number(k), number(k - 1.0));
    Problem {
        source: Some(Source { q: e(&q), dq_du: e(&dq), dq_dx: e("0") }),
        pieces: vec![piece(-1.0, 0.0, "0", "0"), piece(0.0, 1.0, "1", "0"), piece(1.0, 4.0, "0", "0")],
        domain: (-1.0, 4.0),
        ..burgers("box-logistic-k")
    }
}

fn sine_source() -> Source {
    Source { q: e("sin(x)*u"), dq_du: e("sin(x)"), dq_dx: e("cos(x)*u") }
}

pub fn particle_path() -> Problem {
    Problem {
        source: Some(sine_source()),
        pieces: vec![piece(0.0, 2.0 * PI, "3/2-cos(x)", "sin(x)")],
        domain: (0.0, 2.0 * PI),
        ..burgers("particle-path")
    }
}

pub fn three_state_collision() -> Problem {
    Problem {
        source: Some(Source { q: e("-u*(1-u)"), dq_du: e("2*u-1"), dq_dx: e("0") }),
        pieces: vec![piece(-1.0, 2.0, "0.9", "0"), piece(2.0, 2.5, "0.5", "0"), piece(2.5, 6.0, "0.2", "0")],
        domain: (-1.0, 6.0),
        ..burgers("three-state-collision")
    }
}

pub fn sine_source_shock() -> Problem {
    Problem {
        source: Some(sine_source()),
        pieces: vec![piece(0.0, 8.0, "0", "0")],
        domain: (0.0, 8.0),
        inflow: Some(Inflow { u: e("1/2"), du: e("0") }),
        ..burgers("sine-source-shock")
    }
}

pub fn builtin(name: &str, params: &CatalogParams) -> Option<Problem> {
    Some(match name {
        "sine-burgers" => sine_burgers(),
        "box-logistic-k" => box_logistic(params.k),
        "particle-path" => particle_path(),
        "three-state-collision" => three_state_collision(),
        "sine-source-shock" => sine_source_shock(),
        _ => return None,
    })
}

pub fn entries() -> Vec<CatalogEntry> {
    vec![
        CatalogEntry {
            name: "sine-burgers",
            summary: "Burgers' equation, sine bump on [0, pi], zero elsewhere; one shock from t = 1",
            parameters: "",
            oracle: Some(Oracle::Shocks(|t| if t >= 1.0 { vec![sine_burgers_shock(t)] } else { vec![] })),
            oracle_note: "analytic: x*(t) = arccos((t-2)/t) + 2 sqrt(t-1), u_L = 2 sqrt(t-1)/t, u_R = 0",
        },
        CatalogEntry {
            name: "box-logistic-k",
            summary: "Burgers with source -(u(1-u))^k, box initial data on [0, 1]",
            parameters: "k (default 1)",
            oracle: None,
            oracle_note: "none (qualitative); the true shock speed is 1/2 for every k until t = 2",
        },
        CatalogEntry {
            name: "particle-path",
            summary: "Burgers with source sin(x) u, steady data 3/2 - cos(x) on [0, 2 pi]",
            parameters: "",
            oracle: Some(Oracle::Field(|x, _| 1.5 - x.cos())),
            oracle_note: "analytic: u = 3/2 - cos(x); the particle from 0 follows 2 arctan(tan(sqrt5 t/4)/sqrt5)",
        },
        CatalogEntry {
            name: "three-state-collision",
            summary: "Burgers with source -u(1-u), states 0.9 / 0.5 / 0.2; two shocks merge",
            parameters: "",
            oracle: Some(Oracle::Shocks(three_state_shocks)),
            oracle_note: "analytic: closed-form shock paths, collision at t* = 1.4476864522...",
        },
        CatalogEntry {
            name: "sine-source-shock",
            summary: "Burgers with source sin(x) u, zero data, boundary value 1/2 at x = 0",
            parameters: "",
            oracle: Some(Oracle::Shocks(|t| vec![sine_source_shock_position(t)])),
            oracle_note: "derived: solution of dx/dt = (3 - 2 cos x)/4, x(0) = 0, i.e. 2 arctan(tan(sqrt5 t/8)/sqrt5)",
        },
    ]
}

pub fn entry(name: &str) -> Option<CatalogEntry> {
    entries().into_iter().find(|c| c.name == name)
}

/// `2 arctan(tan(theta)/sqrt5)` continued across the poles of `tan`.
fn weierstrass_path(theta: f64) -> f64 {
    let sqrt5 = 5.0_f64.sqrt();
    2.0 * ((theta.tan() / sqrt5).atan() + PI * (theta / PI).round())
}

pub fn sine_burgers_shock(t: f64) -> f64 {
    ((t - 2.0) / t).acos() + 2.0 * (t - 1.0).sqrt()
}

pub fn sine_burgers_left_state(t: f64) -> f64 {
    2.0 * (t - 1.0).sqrt() / t
}

/// Particle path from `x(0) = 0, u(0) = 1/2` under `x' = u, u' = sin(x) u`.
pub fn particle_path_position(t: f64) -> f64 {
    weierstrass_path(5.0_f64.sqrt() * t / 4.0)
}

pub fn sine_source_shock_position(t: f64) -> f64 {
    weierstrass_path(5.0_f64.sqrt() * t / 8.0)
}

/// Shock speed `(3 - 2 cos x)/4` of the boundary-driven problem.
pub fn sine_source_shock_speed(x: f64) -> f64 {
    (3.0 - 2.0 * x.cos()) / 4.0
}

/// Logistic state `1/(1 + (1/g - 1) e^t)` of a constant piece.
pub fn logistic_state(g: f64, t: f64) -> f64 {
    1.0 / (1.0 + (1.0 / g - 1.0) * t.exp())
}

const A_LEFT: f64 = 0.1 / 0.9;
const A_MID: f64 = 1.0;
const A_RIGHT: f64 = 4.0;

/// `∫_0^t 1/(1 + a e^τ) dτ`.
fn logistic_integral(a: f64, t: f64) -> f64 {
    t - ((1.0 + a * t.exp()) / (1.0 + a)).ln()
}

pub fn three_state_left_shock(t: f64) -> f64 {
    2.0 + t + 0.5 * ((2.0_f64 / 0.9).ln() - ((1.0 + A_LEFT * t.exp()) * (1.0 + t.exp())).ln())
}

pub fn three_state_right_shock(t: f64) -> f64 {
    2.5 + t + 0.5 * (10.0_f64.ln() - ((1.0 + t.exp()) * (1.0 + 4.0 * t.exp())).ln())
}

/// Collision time of the two shocks.
pub fn three_state_collision_time() -> f64 {
    let e1 = 1.0_f64.exp();
    ((1.0 + 0.1 / 0.9 - 5.0 * e1) / (0.5 / 0.9 * e1 - 4.0 / 0.9)).ln()
}

/// Position of the merged shock for `t >= t*`.
pub fn three_state_merged_shock(t: f64) -> f64 {
    let ts = three_state_collision_time();
    let x0 = three_state_left_shock(ts);
    let part = |a: f64| logistic_integral(a, t) - logistic_integral(a, ts);
    x0 + 0.5 * (part(A_LEFT) + part(A_RIGHT))
}

pub fn three_state_shocks(t: f64) -> Vec<f64> {
    if t < three_state_collision_time() {
        vec![three_state_left_shock(t), three_state_right_shock(t)]
    } else {
        vec![three_state_merged_shock(t)]
    }
}

/// Middle state, kept for completeness of the closed forms.
pub fn three_state_middle(t: f64) -> f64 {
    1.0 / (1.0 + A_MID * t.exp())
}

/// Classical RK4 for a scalar autonomous ODE, used as a derived oracle.
pub fn rk4_scalar(f: impl Fn(f64) -> f64, x0: f64, t_end: f64, steps: usize) -> f64 {
    let h = t_end / steps as f64;
    let mut x = x0;
    for _ in 0..steps {
        let k1 = f(x);
        let k2 = f(x + 0.5 * h * k1);
        let k3 = f(x + 0.5 * h * k2);
        let k4 = f(x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_builtin_validates() {
        for name in NAMES {
            let p = builtin(name, &CatalogParams::default()).unwrap();
            p.validate().unwrap_or_else(|err| panic!("{name}: {err}"));
        }
        for k in [1.5, 6.0] {
            box_logistic(k).validate().unwrap();
        }
    }

    #[test]
    fn sine_burgers_shock_at_two() {
        assert!((sine_burgers_shock(2.0) - (PI / 2.0 + 2.0)).abs() < 1e-15);
        assert_eq!(sine_burgers_left_state(2.0), 1.0);
        assert!((sine_burgers_shock(1.0) - PI).abs() < 1e-15);
    }

    #[test]
    fn collision_time_matches_both_paths() {
        let ts = three_state_collision_time();
        assert!((three_state_left_shock(ts) - three_state_right_shock(ts)).abs() < 1e-12);
        assert!((ts - 1.44769).abs() < 5e-6);
        assert!((three_state_merged_shock(ts) - three_state_left_shock(ts)).abs() < 1e-15);
    }

    #[test]
    fn merged_shock_follows_rankine_hugoniot() {
        let ts = three_state_collision_time();
        let speed = |t: f64| 0.5 * (logistic_state(0.9, t) + logistic_state(0.2, t));
        let h = 1e-4;
        let t = ts + 0.3;
        let fd = (three_state_merged_shock(t + h) - three_state_merged_shock(t - h)) / (2.0 * h);
        assert!((fd - speed(t)).abs() < 1e-8);
    }

    #[test]
    fn closed_form_shock_paths_integrate_their_speeds() {
        let h = 1e-4;
        let t = 0.7;
        let fd = (three_state_left_shock(t + h) - three_state_left_shock(t - h)) / (2.0 * h);
        assert!((fd - 0.5 * (logistic_state(0.9, t) + three_state_middle(t))).abs() < 1e-8);
        let fd = (three_state_right_shock(t + h) - three_state_right_shock(t - h)) / (2.0 * h);
        assert!((fd - 0.5 * (three_state_middle(t) + logistic_state(0.2, t))).abs() < 1e-8);
    }

    #[test]
    fn boundary_shock_oracle_agrees_with_ode() {
        for t in [1.0, 3.0, 5.0, 9.0] {
            let ode = rk4_scalar(sine_source_shock_speed, 0.0, t, 20_000);
            assert!((ode - sine_source_shock_position(t)).abs() < 1e-12, "t = {t}");
        }
        let x5 = particle_path_position(5.0);
        let ode = rk4_scalar(|x| 1.5 - x.cos(), 0.0, 5.0, 20_000);
        assert!((x5 - ode).abs() < 1e-12);
    }
}
