//! Characteristic flow: the problem bundle, node advancement along the
//! extended characteristic system, the homogeneous area ledger and the
//! construction of interpolating chains from node data.
//!
//! A node carries `(x, u)` and the tangents `(x_s, u_s)` with respect to its
//! curve parameter `s`. For nodes seeded on an initial-condition piece `s` is
//! the Lagrangian label `x0`; jump connectors and boundary inflow nodes use
//! their own parameters, but the tangent transport is the same.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use thiserror::Error;

use crate::curve::{
    area_preserving_segment, hermite_segment, parametric_segment, BezierSegment, CurveChain, CurveError, Vec2,
};
use crate::expr::{Expr, ExprError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProblemError {
    #[error("cannot evaluate {what}: {source}")]
    Eval { what: String, source: ExprError },
    #[error("initial-condition pieces do not tile the domain: {0}")]
    Tiling(String),
    #[error("flux is not uniformly convex: F''({u}) = {d2f}")]
    NotConvex { u: f64, d2f: f64 },
    #[error("{what} disagrees with finite differences at {at}: supplied {supplied}, expected {expected}")]
    Derivative { what: String, at: String, supplied: f64, expected: f64 },
    #[error("invalid problem: {0}")]
    Invalid(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharError {
    #[error("node with label {label}: {what}: {source}")]
    Eval { label: f64, what: &'static str, source: ExprError },
    #[error("nodes are not sorted by label at index {0}")]
    Unsorted(usize),
    #[error("interval {index}: {source}")]
    Curve { index: usize, source: CurveError },
    #[error("area-preserving targets need a homogeneous problem")]
    NeedsHomogeneous,
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

/// Source term `Q(u, x, t)` with its partial derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub q: Expr,
    pub dq_du: Expr,
    pub dq_dx: Expr,
}

/// One smooth piece of the initial condition on `[lo, hi]`.
#[derive(Debug, Clone, PartialEq)]
pub struct IcPiece {
    pub lo: f64,
    pub hi: f64,
    pub g: Expr,
    pub dg: Expr,
}

/// Boundary value `u(x_min, t) = u_b(t)` feeding characteristics into the domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Inflow {
    pub u: Expr,
    pub du: Expr,
}

/// Discontinuity between consecutive initial-condition pieces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jump {
    pub x: f64,
    pub u_minus: f64,
    pub u_plus: f64,
}

impl Jump {
    /// Compressive jumps (`u- > u+` for convex flux) start as shocks.
    pub fn is_compressive(&self) -> bool {
        self.u_minus > self.u_plus
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub name: String,
    pub flux: Expr,
    pub dflux: Expr,
    pub d2flux: Expr,
    pub source: Option<Source>,
    pub pieces: Vec<IcPiece>,
    pub domain: (f64, f64),
    pub inflow: Option<Inflow>,
}

fn eval_named(e: &Expr, what: &str, u: f64, x: f64, t: f64) -> Result<f64, ProblemError> {
    e.eval_at(u, x, t, x).map_err(|source| ProblemError::Eval { what: what.to_string(), source })
}

/// Relative tolerance of the finite-difference derivative check.
pub const DERIVATIVE_TOL: f64 = 1e-6;

/// Largest relative disagreement found for each supplied derivative.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DerivativeReport {
    pub checks: Vec<(String, f64)>,
}

impl DerivativeReport {
    pub fn worst(&self) -> f64 {
        self.checks.iter().map(|c| c.1).fold(0.0, f64::max)
    }
}

impl Problem {
    pub fn is_homogeneous(&self) -> bool {
        self.source.is_none()
    }

    pub fn f(&self, u: f64) -> Result<f64, ExprError> {
        self.flux.eval_at(u, 0.0, 0.0, 0.0)
    }

    pub fn df(&self, u: f64) -> Result<f64, ExprError> {
        self.dflux.eval_at(u, 0.0, 0.0, 0.0)
    }

    pub fn d2f(&self, u: f64) -> Result<f64, ExprError> {
        self.d2flux.eval_at(u, 0.0, 0.0, 0.0)
    }

    /// `Φ(u) = u F'(u) - F(u)`, the flux of parametric area through a node.
    pub fn area_flux(&self, u: f64) -> Result<f64, ExprError> {
        Ok(u * self.df(u)? - self.f(u)?)
    }

    pub fn q(&self, u: f64, x: f64, t: f64) -> Result<f64, ExprError> {
        match &self.source {
            Some(s) => s.q.eval_at(u, x, t, x),
            None => Ok(0.0),
        }
    }

    pub fn piece_at(&self, x: f64) -> Option<&IcPiece> {
        self.pieces.iter().find(|p| p.lo <= x && x <= p.hi)
    }

    pub fn inflow_value(&self, t: f64) -> Option<Result<(f64, f64), ExprError>> {
        self.inflow.as_ref().map(|b| Ok((b.u.eval_at(0.0, self.domain.0, t, 0.0)?, b.du.eval_at(0.0, self.domain.0, t, 0.0)?)))
    }

    /// Jumps between adjacent pieces; continuous junctions are omitted.
    pub fn jumps(&self) -> Result<Vec<Jump>, ProblemError> {
        let mut out = Vec::new();
        for w in self.pieces.windows(2) {
            let x = w[0].hi;
            let um = eval_named(&w[0].g, "g", 0.0, x, 0.0)?;
            let up = eval_named(&w[1].g, "g", 0.0, x, 0.0)?;
            if !same_state(um, up) {
                out.push(Jump { x, u_minus: um, u_plus: up });
            }
        }
        Ok(out)
    }

    /// Range of initial values sampled over all pieces (and the inflow at t=0).
    pub fn ic_range(&self) -> Result<(f64, f64), ProblemError> {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in &self.pieces {
            for k in 0..=64 {
                let x = p.lo + (p.hi - p.lo) * k as f64 / 64.0;
                let v = eval_named(&p.g, "g", 0.0, x, 0.0)?;
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if let Some(b) = &self.inflow {
            let v = eval_named(&b.u, "u_b", 0.0, self.domain.0, 0.0)?;
            lo = lo.min(v);
            hi = hi.max(v);
        }
        Ok((lo, hi))
    }

    pub fn check_tiling(&self) -> Result<(), ProblemError> {
        let (a, b) = self.domain;
        if !(a < b) {
            return Err(ProblemError::Tiling(format!("empty domain [{a}, {b}]")));
        }
        let first = self.pieces.first().ok_or_else(|| ProblemError::Tiling("no pieces".into()))?;
        if first.lo != a {
            return Err(ProblemError::Tiling(format!("first piece starts at {} not {a}", first.lo)));
        }
        for (i, p) in self.pieces.iter().enumerate() {
            if !(p.lo < p.hi) {
                return Err(ProblemError::Tiling(format!("piece {i} is empty")));
            }
            if i > 0 && self.pieces[i - 1].hi != p.lo {
                return Err(ProblemError::Tiling(format!("gap or overlap before piece {i}")));
            }
        }
        let last = &self.pieces[self.pieces.len() - 1];
        if last.hi != b {
            return Err(ProblemError::Tiling(format!("last piece ends at {} not {b}", last.hi)));
        }
        Ok(())
    }

    /// Samples `F''` on the initial-value range.
    pub fn check_convexity(&self) -> Result<(), ProblemError> {
        let (lo, hi) = self.ic_range()?;
        for k in 0..=100 {
            let u = lo + (hi - lo) * k as f64 / 100.0;
            let d2f = eval_named(&self.d2flux, "F''", u, 0.0, 0.0)?;
            if !(d2f > 0.0) {
                return Err(ProblemError::NotConvex { u, d2f });
            }
        }
        Ok(())
    }

    /// Compares every supplied derivative with centred finite differences of
    /// its base expression at `samples` random points.
    pub fn derivative_consistency(&self, samples: usize, seed: u64) -> Result<DerivativeReport, ProblemError> {
        let mut rng = StdRng::seed_from_u64(seed);
        let (ulo, uhi) = self.ic_range()?;
        let margin = 0.05 * (uhi - ulo);
        let (ulo, uhi) = if uhi > ulo { (ulo + margin, uhi - margin) } else { (ulo - 0.5, ulo + 0.5) };
        let (xlo, xhi) = self.domain;
        let mut report = DerivativeReport::default();

        let mut check = |what: &str,
                         base: &Expr,
                         deriv: &Expr,
                         var: usize,
                         draw: &mut dyn FnMut() -> [f64; 3]|
         -> Result<(), ProblemError> {
            let mut worst = 0.0_f64;
            for _ in 0..samples {
                let p = draw();
                let h = 1e-5 * p[var].abs().max(1.0);
                let mut plus = p;
                let mut minus = p;
                plus[var] += h;
                minus[var] -= h;
                let fp = eval_named(base, what, plus[0], plus[1], plus[2])?;
                let fm = eval_named(base, what, minus[0], minus[1], minus[2])?;
                let expected = (fp - fm) / (2.0 * h);
                let supplied = eval_named(deriv, what, p[0], p[1], p[2])?;
                let rel = (supplied - expected).abs() / expected.abs().max(1.0);
                if rel > DERIVATIVE_TOL {
                    return Err(ProblemError::Derivative {
                        what: what.to_string(),
                        at: format!("(u, x, t) = ({}, {}, {})", p[0], p[1], p[2]),
                        supplied,
                        expected,
                    });
                }
                worst = worst.max(rel);
            }
            report.checks.push((what.to_string(), worst));
            Ok(())
        };

        let mut draw_u = || [rng.gen_range(ulo..=uhi), 0.0, 0.0];
        check("F'", &self.flux, &self.dflux, 0, &mut draw_u)?;
        check("F''", &self.dflux, &self.d2flux, 0, &mut draw_u)?;
        if let Some(s) = &self.source {
            let mut draw = || [rng.gen_range(ulo..=uhi), rng.gen_range(xlo..=xhi), rng.gen_range(0.0..=1.0)];
            check("Q_u", &s.q, &s.dq_du, 0, &mut draw)?;
            check("Q_x", &s.q, &s.dq_dx, 1, &mut draw)?;
        }
        for (i, p) in self.pieces.iter().enumerate() {
            // Keep the stencil inside the piece.
            let w = 1e-4 * (p.hi - p.lo);
            let (a, b) = (p.lo + w, p.hi - w);
            let mut draw = || [0.0, rng.gen_range(a..=b), 0.0];
            check(&format!("g' (piece {i})"), &p.g, &p.dg, 1, &mut draw)?;
        }
        if let Some(b) = &self.inflow {
            let mut draw = || [0.0, xlo, rng.gen_range(0.0..=10.0)];
            check("u_b'", &b.u, &b.du, 2, &mut draw)?;
        }
        Ok(report)
    }

    /// Tiling, convexity and derivative consistency.
    pub fn validate(&self) -> Result<DerivativeReport, ProblemError> {
        self.check_tiling()?;
        self.check_convexity()?;
        if let Some(b) = &self.inflow {
            let u0 = eval_named(&b.u, "u_b", 0.0, self.domain.0, 0.0)?;
            let speed = eval_named(&self.dflux, "F'", u0, 0.0, 0.0)?;
            if !(speed > 0.0) {
                return Err(ProblemError::Invalid(format!(
                    "boundary value {u0} does not enter the domain (F' = {speed})"
                )));
            }
        }
        self.derivative_consistency(100, 0x5eed)
    }
}

/// Two initial values closer than this (relative) are treated as continuous.
pub fn same_state(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * (1.0 + a.abs().max(b.abs()))
}

/// One characteristic node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharState {
    pub x0: f64,
    pub x: f64,
    pub u: f64,
    pub dx_dx0: f64,
    pub du_dx0: f64,
    pub t: f64,
}

impl CharState {
    /// Node on the initial condition at label `x0`.
    pub fn initial(x0: f64, g: f64, dg: f64) -> Self {
        CharState { x0, x: x0, u: g, dx_dx0: 1.0, du_dx0: dg, t: 0.0 }
    }

    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.u)
    }

    pub fn tangent(&self) -> Vec2 {
        Vec2::new(self.dx_dx0, self.du_dx0)
    }

    fn offset(&self, k: &[f64; 4], h: f64) -> CharState {
        CharState {
            x: self.x + h * k[0],
            dx_dx0: self.dx_dx0 + h * k[1],
            u: self.u + h * k[2],
            du_dx0: self.du_dx0 + h * k[3],
            t: self.t + h,
            ..*self
        }
    }
}

/// Exact homogeneous flow from the initial condition, per the closed form
/// `x = x0 + F'(g) t`, `x_s = 1 + F''(g) g' t`.
pub fn advance_homogeneous(node: &CharState, g: f64, dg: f64, t_target: f64, prob: &Problem) -> Result<CharState, CharError> {
    let start = CharState::initial(node.x0, g, dg);
    advance_exact(&start, t_target, prob)
}

/// Exact homogeneous flow of any node from its own time to `t_target`.
pub fn advance_exact(node: &CharState, t_target: f64, prob: &Problem) -> Result<CharState, CharError> {
    let dt = t_target - node.t;
    if dt == 0.0 {
        return Ok(*node);
    }
    let err = |what, source| CharError::Eval { label: node.x0, what, source };
    let speed = prob.df(node.u).map_err(|e| err("F'", e))?;
    let curv = prob.d2f(node.u).map_err(|e| err("F''", e))?;
    Ok(CharState {
        x: node.x + speed * dt,
        dx_dx0: node.dx_dx0 + curv * node.du_dx0 * dt,
        t: t_target,
        ..*node
    })
}

/// Rates `(x', x_s', u', u_s')` of the extended characteristic system.
pub fn rhs_extended(state: &CharState, prob: &Problem) -> Result<[f64; 4], CharError> {
    let err = |what, source| CharError::Eval { label: state.x0, what, source };
    let speed = prob.df(state.u).map_err(|e| err("F'", e))?;
    let curv = prob.d2f(state.u).map_err(|e| err("F''", e))?;
    let (q, qu, qx) = match &prob.source {
        None => (0.0, 0.0, 0.0),
        Some(s) => {
            let (u, x, t) = (state.u, state.x, state.t);
            (
                s.q.eval_at(u, x, t, state.x0).map_err(|e| err("Q", e))?,
                s.dq_du.eval_at(u, x, t, state.x0).map_err(|e| err("Q_u", e))?,
                s.dq_dx.eval_at(u, x, t, state.x0).map_err(|e| err("Q_x", e))?,
            )
        }
    };
    Ok([speed, curv * state.du_dx0, q, qu * state.du_dx0 + qx * state.dx_dx0])
}

/// One classical fourth-order Runge–Kutta step of the extended system.
pub fn step_rk4(state: &CharState, prob: &Problem, dt: f64) -> Result<CharState, CharError> {
    if dt == 0.0 {
        return Ok(*state);
    }
    let k1 = rhs_extended(state, prob)?;
    let k2 = rhs_extended(&state.offset(&k1, 0.5 * dt), prob)?;
    let k3 = rhs_extended(&state.offset(&k2, 0.5 * dt), prob)?;
    let k4 = rhs_extended(&state.offset(&k3, dt), prob)?;
    let mut k = [0.0; 4];
    for i in 0..4 {
        k[i] = (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0;
    }
    let mut next = state.offset(&k, dt);
    next.t = state.t + dt;
    Ok(next)
}

/// Adaptive Simpson quadrature to absolute tolerance `tol`.
pub fn adaptive_simpson<E>(f: &mut impl FnMut(f64) -> Result<f64, E>, a: f64, b: f64, tol: f64) -> Result<f64, E> {
    fn recurse<E>(
        f: &mut impl FnMut(f64) -> Result<f64, E>,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64, E> {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let m = 0.5 * (a + b);
    let fm = f(m)?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Absolute tolerance for the one-time quadrature of the initial condition.
pub const IC_QUADRATURE_TOL: f64 = 1e-12;

/// `∫ g` over `[a, b]`, which must lie inside a single piece.
pub fn ic_area(prob: &Problem, a: f64, b: f64) -> Result<f64, ProblemError> {
    let piece = prob
        .pieces
        .iter()
        .find(|p| p.lo <= a && b <= p.hi)
        .ok_or_else(|| ProblemError::Invalid(format!("[{a}, {b}] crosses a piece boundary")))?;
    adaptive_simpson(&mut |x| eval_named(&piece.g, "g", 0.0, x, 0.0), a, b, IC_QUADRATURE_TOL)
}

/// Area under the homogeneous solution curve between the characteristics
/// from `x_i` and `x_{i+1}` at time `t`:
/// `∫ g + t (Φ(g(x_{i+1})) - Φ(g(x_i)))` with `Φ(u) = u F'(u) - F(u)`.
pub fn area_ledger_update(prob: &Problem, interval: (f64, f64), t: f64) -> Result<f64, ProblemError> {
    let static_area = ic_area(prob, interval.0, interval.1)?;
    ledger_at(prob, static_area, interval, t)
}

/// Ledger update from a cached static area.
pub fn ledger_at(prob: &Problem, static_area: f64, interval: (f64, f64), t: f64) -> Result<f64, ProblemError> {
    let piece = prob
        .piece_at(interval.0)
        .ok_or_else(|| ProblemError::Invalid(format!("{} outside the domain", interval.0)))?;
    let gl = eval_named(&piece.g, "g", 0.0, interval.0, 0.0)?;
    let gr = eval_named(&piece.g, "g", 0.0, interval.1, 0.0)?;
    let phi = |u| prob.area_flux(u).map_err(|source| ProblemError::Eval { what: "area flux".into(), source });
    Ok(static_area + t * (phi(gr)? - phi(gl)?))
}

/// Segment interpolation mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interp {
    Hermite,
    #[default]
    AreaPreserving,
}

/// How segment magnitudes are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Parametrization {
    /// Graph-space Hermite where the horizontal tangents allow it, the
    /// curve's own parameter elsewhere.
    Graph,
    /// Always the curve's own parameter: `r1 = r2 = Δs`.
    Label,
}

/// Interpolation data for one knot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainNode {
    pub s: f64,
    pub pos: Vec2,
    pub tan: Vec2,
}

impl From<&CharState> for ChainNode {
    fn from(c: &CharState) -> Self {
        ChainNode { s: c.x0, pos: c.position(), tan: c.tangent() }
    }
}

/// Graph-space magnitudes are accepted when within this factor of `Δs`.
const GRAPH_RATIO: f64 = 3.0;

/// Hermite segment between two knots under the given parametrization.
pub fn knot_segment(a: &ChainNode, b: &ChainNode, param: Parametrization) -> BezierSegment {
    let ds = b.s - a.s;
    // Repeated knots at a kink differ only by round-off.
    if same_state(a.pos.x, b.pos.x) && same_state(a.pos.u, b.pos.u) {
        return BezierSegment::line(a.pos, b.pos);
    }
    if param == Parametrization::Graph {
        let dx = b.pos.x - a.pos.x;
        if let Ok(seg) = hermite_segment(a.pos, b.pos, a.tan, b.tan) {
            let ok = |r: f64| r.is_finite() && r > 0.0 && r <= GRAPH_RATIO * ds && r * GRAPH_RATIO >= ds;
            if dx > 0.0 && ok(seg.r1) && ok(seg.r2) {
                return seg;
            }
        }
    }
    parametric_segment(a.pos, b.pos, a.tan, b.tan, ds)
}

/// Sum of Hermite areas over a run of knots.
pub fn hermite_area(nodes: &[ChainNode], param: Parametrization) -> f64 {
    nodes.windows(2).map(|w| knot_segment(&w[0], &w[1], param).parametric_area()).sum()
}

/// Chain plus per-segment diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct BuiltChain {
    pub chain: CurveChain,
    /// Area defect of segments whose area solve was degenerate.
    pub defects: Vec<Option<f64>>,
}

impl BuiltChain {
    pub fn max_defect(&self) -> f64 {
        self.defects.iter().flatten().fold(0.0, |a, &b| a.max(b))
    }
}

/// Builds a chain through `nodes`; with `targets` each segment's `r2` is
/// re-solved so that its area equals the target.
pub fn chain_from_knots(
    nodes: &[ChainNode],
    targets: Option<&[f64]>,
    param: Parametrization,
    time: f64,
) -> Result<BuiltChain, CharError> {
    let mut segments = Vec::with_capacity(nodes.len().saturating_sub(1));
    let mut defects = Vec::with_capacity(segments.capacity());
    for (i, w) in nodes.windows(2).enumerate() {
        if !(w[1].s > w[0].s) {
            return Err(CharError::Unsorted(i + 1));
        }
        let base = knot_segment(&w[0], &w[1], param);
        match targets {
            Some(t) => {
                let (seg, defect) = area_preserving_segment(&base, t[i]);
                segments.push(seg);
                defects.push(defect);
            }
            None => {
                segments.push(base);
                defects.push(None);
            }
        }
    }
    let params = nodes.iter().map(|n| n.s).collect();
    let chain = CurveChain::new(segments, params, time).map_err(|source| CharError::Curve { index: 0, source })?;
    Ok(BuiltChain { chain, defects })
}

/// Chain through nodes of one smooth piece at a common time. In
/// area-preserving mode the targets come from the homogeneous area ledger.
pub fn build_chain(nodes: &[CharState], interp: Interp, prob: &Problem) -> Result<BuiltChain, CharError> {
    for i in 1..nodes.len() {
        if !(nodes[i].x0 > nodes[i - 1].x0) {
            return Err(CharError::Unsorted(i));
        }
    }
    for (i, w) in nodes.windows(2).enumerate() {
        if w[0].dx_dx0 == 0.0 || w[1].dx_dx0 == 0.0 {
            return Err(CharError::Curve { index: i, source: CurveError::VanishingHorizontalTangent });
        }
    }
    let knots: Vec<ChainNode> = nodes.iter().map(ChainNode::from).collect();
    let time = nodes.first().map_or(0.0, |n| n.t);
    let targets = match interp {
        Interp::Hermite => None,
        Interp::AreaPreserving => {
            if !prob.is_homogeneous() {
                return Err(CharError::NeedsHomogeneous);
            }
            let mut t = Vec::with_capacity(nodes.len());
            for w in nodes.windows(2) {
                t.push(area_ledger_update(prob, (w[0].x0, w[1].x0), time)?);
            }
            Some(t)
        }
    };
    chain_from_knots(&knots, targets.as_deref(), Parametrization::Graph, time)
}
