//! Shock propagation: Runge–Kutta on the Rankine–Hugoniot slope field,
//! collisions and merges.

use std::str::FromStr;

use thiserror::Error;

use crate::characteristics::Problem;
use crate::curve::{ChainParam, CurveChain, CurveError, Inversion, Run};
use crate::expr::ExprError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RkMethod {
    Euler,
    Heun,
    #[default]
    Rk4,
}

impl RkMethod {
    pub fn order(self) -> u32 {
        match self {
            RkMethod::Euler => 1,
            RkMethod::Heun => 2,
            RkMethod::Rk4 => 4,
        }
    }

    /// Stage time fractions.
    pub fn nodes(self) -> &'static [f64] {
        match self {
            RkMethod::Euler => &[0.0],
            RkMethod::Heun => &[0.0, 1.0],
            RkMethod::Rk4 => &[0.0, 0.5, 0.5, 1.0],
        }
    }
}

impl FromStr for RkMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "euler" => Ok(RkMethod::Euler),
            "heun" => Ok(RkMethod::Heun),
            "rk4" => Ok(RkMethod::Rk4),
            other => Err(format!("unknown shock method '{other}' (expected euler, heun or rk4)")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ShockError {
    #[error("stage abscissa {z} outside the region of overlap [{lo}, {hi}]")]
    OutOfOverlap { z: f64, lo: f64, hi: f64 },
    #[error("no increasing run next to the shock anchor")]
    NoSheet,
    #[error("entropy condition violated: u_left = {u_left}, u_right = {u_right}")]
    Entropy { u_left: f64, u_right: f64 },
    #[error("shocks {0} and {1} are not adjacent")]
    NotAdjacent(usize, usize),
    #[error(transparent)]
    Eval(#[from] ExprError),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Chain label of a segment start plus a local parameter: a position on a
/// branch that survives rebuilding the chain at another time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub label: f64,
    pub t: f64,
}

impl Anchor {
    pub fn of(chain: &CurveChain, p: ChainParam) -> Anchor {
        Anchor { label: chain.node_params[p.seg], t: p.t }
    }

    /// Position of the anchor on `chain`; a label the chain does not carry
    /// maps to the start of the segment that would contain it.
    pub fn locate(&self, chain: &CurveChain) -> ChainParam {
        let n = chain.len();
        let idx = chain.node_params[..n].partition_point(|&s| s <= self.label).saturating_sub(1).min(n - 1);
        let t = if chain.node_params[idx] == self.label { self.t } else { 0.0 };
        ChainParam::new(idx, t)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Shock {
    pub id: u64,
    pub x_star: f64,
    pub u_left: f64,
    pub u_right: f64,
    /// Where the left state sits on the left branch.
    pub left_anchor: Anchor,
    /// Where the right state sits on the right branch.
    pub right_anchor: Anchor,
}

impl Shock {
    pub fn check_entropy(&self) -> Result<(), ShockError> {
        if self.u_left > self.u_right {
            Ok(())
        } else {
            Err(ShockError::Entropy { u_left: self.u_left, u_right: self.u_right })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapRegion {
    pub lo: f64,
    pub hi: f64,
}

impl OverlapRegion {
    pub fn contains(&self, z: f64) -> bool {
        self.lo <= z && z <= self.hi
    }

    /// Distance from `z` to the nearer edge; negative outside.
    pub fn margin(&self, z: f64) -> f64 {
        (z - self.lo).min(self.hi - z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hand {
    Left,
    Right,
}

/// The increasing run of a branch that carries one shock state.
#[derive(Debug, Clone)]
pub struct Side<'a> {
    pub chain: &'a CurveChain,
    pub run: Run,
}

impl<'a> Side<'a> {
    pub fn resolve(chain: &'a CurveChain, anchor: Anchor, hand: Hand) -> Result<Side<'a>, ShockError> {
        if chain.is_empty() {
            return Err(ShockError::NoSheet);
        }
        let p = anchor.locate(chain);
        let runs = chain.runs();
        let here = chain.run_index(&runs, p, hand == Hand::Right).ok_or(ShockError::NoSheet)?;
        let idx = if runs[here].sign > 0 {
            here
        } else {
            match hand {
                Hand::Left => (0..here).rev().find(|&i| runs[i].sign > 0),
                Hand::Right => (here + 1..runs.len()).find(|&i| runs[i].sign > 0),
            }
            .ok_or(ShockError::NoSheet)?
        };
        Ok(Side { chain, run: runs[idx] })
    }

    pub fn span(&self) -> (f64, f64) {
        self.chain.run_x_span(&self.run)
    }

    pub fn invert(&self, z: f64) -> Result<Inversion, ShockError> {
        let (lo, hi) = self.span();
        self.chain.invert_run(&self.run, z).map_err(|e| match e {
            CurveError::OutOfRange { .. } => ShockError::OutOfOverlap { z, lo, hi },
            other => ShockError::Curve(other),
        })
    }
}

/// Region where both branches are defined around the shock.
pub fn overlap(left: &Side, right: &Side) -> OverlapRegion {
    OverlapRegion { lo: right.span().0.max(left.span().0), hi: left.span().1.min(right.span().1) }
}

/// Rankine–Hugoniot speed, or the characteristic speed of the mean state
/// when the jump has vanished.
pub fn rh_speed(prob: &Problem, u_left: f64, u_right: f64) -> Result<f64, ExprError> {
    if (u_left - u_right).abs() < 1e-12 {
        prob.df(0.5 * (u_left + u_right))
    } else {
        Ok((prob.f(u_left)? - prob.f(u_right)?) / (u_left - u_right))
    }
}

/// Slope of the shock path at `z`, with both states read from the branches.
pub fn rh_slope(z: f64, left: &Side, right: &Side, prob: &Problem) -> Result<f64, ShockError> {
    let region = overlap(left, right);
    if !region.contains(z) {
        return Err(ShockError::OutOfOverlap { z, lo: region.lo, hi: region.hi });
    }
    let ul = left.invert(z)?.u;
    let ur = right.invert(z)?.u;
    Ok(rh_speed(prob, ul, ur)?)
}

/// One explicit Runge–Kutta step of the shock path. `slope(c, z)` returns
/// the slope at abscissa `z` from branches at time `t + c dt`.
pub fn step_shock(
    x: f64,
    dt: f64,
    method: RkMethod,
    mut slope: impl FnMut(f64, f64) -> Result<f64, ShockError>,
) -> Result<f64, ShockError> {
    let k1 = slope(0.0, x)?;
    Ok(match method {
        RkMethod::Euler => x + dt * k1,
        RkMethod::Heun => {
            let k2 = slope(1.0, x + dt * k1)?;
            x + 0.5 * dt * (k1 + k2)
        }
        RkMethod::Rk4 => {
            let k2 = slope(0.5, x + 0.5 * dt * k1)?;
            let k3 = slope(0.5, x + 0.5 * dt * k2)?;
            let k4 = slope(1.0, x + dt * k3)?;
            x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        }
    })
}

/// Gap below which two shocks count as one.
pub fn contact_tol(x: f64) -> f64 {
    1e-13 * x.abs().max(1.0)
}

/// First adjacent pair whose positions crossed or touched.
pub fn detect_collision(positions: &[f64]) -> Option<usize> {
    positions.windows(2).position(|w| w[1] - w[0] <= contact_tol(w[0]))
}

/// Time in `[t0, t1]` where `gap` vanishes, by the Illinois variant of
/// regula falsi. Expects `g0 > 0`; a gap that only touched at `t1` returns `t1`.
pub fn refine_collision<E>(
    mut gap: impl FnMut(f64) -> Result<f64, E>,
    t0: f64,
    t1: f64,
    g0: f64,
    g1: f64,
    tol: f64,
) -> Result<f64, E> {
    if g1 >= 0.0 {
        return Ok(t1);
    }
    let (mut a, mut b, mut ga, mut gb) = (t0, t1, g0, g1);
    let mut side = 0;
    for _ in 0..200 {
        let t = b - gb * (b - a) / (gb - ga);
        let t = if t > a && t < b { t } else { 0.5 * (a + b) };
        let g = gap(t)?;
        if g.abs() <= tol || b - a <= 4.0 * f64::EPSILON * b.abs().max(1.0) {
            return Ok(t);
        }
        if g > 0.0 {
            a = t;
            ga = g;
            if side == -1 {
                gb *= 0.5;
            }
            side = -1;
        } else {
            b = t;
            gb = g;
            if side == 1 {
                ga *= 0.5;
            }
            side = 1;
        }
    }
    Ok(0.5 * (a + b))
}

/// Single shock replacing two adjacent ones that met: `a`'s left state and
/// `b`'s right state.
pub fn merge_shocks(a: &Shock, b: &Shock, id: u64) -> Result<Shock, ShockError> {
    let merged = Shock {
        id,
        x_star: 0.5 * (a.x_star + b.x_star),
        u_left: a.u_left,
        u_right: b.u_right,
        left_anchor: a.left_anchor,
        right_anchor: b.right_anchor,
    };
    merged.check_entropy()?;
    Ok(merged)
}

/// Labels bounding what each branch keeps after the shock moved to the
/// anchors: the left branch up to `guard` segments past its anchor segment,
/// the right branch from `guard` segments before its anchor segment.
pub fn trim_labels(left: &CurveChain, left_at: ChainParam, right: &CurveChain, right_at: ChainParam, guard: usize) -> (f64, f64) {
    let hi = left.node_params[(left_at.seg + 1 + guard).min(left.len())];
    let lo = right.node_params[right_at.seg.saturating_sub(guard)];
    (hi, lo)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;
    use crate::characteristics::{chain_from_knots, ChainNode, Parametrization};
    use crate::curve::Vec2;

    fn flat(u: f64, x0: f64, x1: f64, n: usize, label0: f64) -> CurveChain {
        let knots: Vec<ChainNode> = (0..=n)
            .map(|i| {
                let x = x0 + (x1 - x0) * i as f64 / n as f64;
                ChainNode { s: label0 + x - x0, pos: Vec2::new(x, u), tan: Vec2::new(1.0, 0.0) }
            })
            .collect();
        chain_from_knots(&knots, None, Parametrization::Graph, 0.0).unwrap().chain
    }

    #[test]
    fn constant_states_give_the_mean() {
        let prob = catalog::three_state_collision();
        let left = flat(0.9, 0.0, 3.0, 6, 0.0);
        let right = flat(0.5, 1.0, 4.0, 6, 10.0);
        let l = Side::resolve(&left, Anchor { label: 2.0, t: 0.0 }, Hand::Left).unwrap();
        let r = Side::resolve(&right, Anchor { label: 11.0, t: 0.0 }, Hand::Right).unwrap();
        assert!((rh_slope(2.0, &l, &r, &prob).unwrap() - 0.7).abs() < 1e-15);
        assert!(matches!(rh_slope(3.5, &l, &r, &prob), Err(ShockError::OutOfOverlap { .. })));
    }

    #[test]
    fn symmetric_states_stand_still() {
        let prob = catalog::sine_burgers();
        assert_eq!(rh_speed(&prob, 0.75, -0.75).unwrap(), 0.0);
        assert_eq!(rh_speed(&prob, 0.3, 0.3).unwrap(), 0.3);
    }

    #[test]
    fn boundary_problem_slope() {
        let prob = catalog::sine_source_shock();
        for x in [0.0, 1.0, 2.4] {
            let ul = 1.5 - f64::cos(x);
            assert!((rh_speed(&prob, ul, 0.0).unwrap() - catalog::sine_source_shock_speed(x)).abs() < 1e-15);
        }
    }

    #[test]
    fn rk4_on_a_known_field() {
        // x' = x over one unit with 64 steps.
        let mut x = 1.0;
        for _ in 0..64 {
            x = step_shock(x, 1.0 / 64.0, RkMethod::Rk4, |_, z| Ok(z)).unwrap();
        }
        assert!((x - 1.0_f64.exp()).abs() < 1e-8);
        let heun = step_shock(1.0, 0.1, RkMethod::Heun, |_, z| Ok(z)).unwrap();
        assert!((heun - 1.105).abs() < 1e-15);
    }

    #[test]
    fn parallel_shocks_never_collide() {
        assert_eq!(detect_collision(&[1.0, 2.0, 3.0]), None);
        assert_eq!(detect_collision(&[1.0, 2.0, 2.0]), Some(1));
        assert_eq!(detect_collision(&[1.0, 0.5]), Some(0));
    }

    #[test]
    fn collision_refinement_finds_crossing() {
        let gap = |t: f64| Ok::<_, ()>(1.0 - t * t);
        let t = refine_collision(gap, 0.0, 2.0, 1.0, -3.0, 1e-14).unwrap();
        assert!((t - 1.0).abs() < 1e-13);
    }

    #[test]
    fn merge_keeps_outer_states() {
        let anchor = Anchor { label: 0.0, t: 0.0 };
        let a = Shock { id: 0, x_star: 1.0, u_left: 0.9, u_right: 0.5, left_anchor: anchor, right_anchor: anchor };
        let b = Shock { id: 1, x_star: 1.0, u_left: 0.5, u_right: 0.2, ..a.clone() };
        let m = merge_shocks(&a, &b, 2).unwrap();
        assert_eq!((m.u_left, m.u_right, m.id), (0.9, 0.2, 2));
        let bad = Shock { u_right: 0.95, ..b };
        assert!(merge_shocks(&a, &bad, 3).is_err());
    }
}
