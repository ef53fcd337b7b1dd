//! Simulation driver: node seeding, time stepping, shock birth, propagation
//! and merging, and sampling of the weak solution.
//!
//! Homogeneous problems are solved statelessly: every node moves on a
//! straight characteristic and the weak solution at time `t` is the lower
//! envelope of the curve's sheets. Problems with a source (or runs that ask
//! for it) track shocks explicitly between branches of Lagrangian nodes.

use std::ops::Range;

use thiserror::Error;

use crate::characteristics::{
    adaptive_simpson, advance_exact, chain_from_knots, ic_area, knot_segment, step_rk4, CharError, CharState, ChainNode,
    Interp, Parametrization, Problem, ProblemError, IC_QUADRATURE_TOL,
};
use crate::curve::{area_preserving_segment, ChainParam, CurveChain, CurveError, Run, GAUSS3};
use crate::expr::ExprError;
use crate::projection::{find_modified_equal_area, lower_envelope, Envelope, ProjectionError, Sheets};
use crate::shock::{
    contact_tol, detect_collision, merge_shocks, refine_collision, rh_speed, step_shock, trim_labels, Anchor, Hand,
    RkMethod, Shock, ShockError, Side,
};

/// How shocks are moved.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagation {
    /// Equal-area projection for homogeneous problems, tracking otherwise.
    #[default]
    Auto,
    /// Always track shocks with the Runge–Kutta propagation.
    Pspm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Nodes per smooth initial piece.
    pub n_nodes: usize,
    pub dt: f64,
    pub interp: Interp,
    pub shock_method: RkMethod,
    pub propagation: Propagation,
    /// Segments kept past a shock on each branch.
    pub guard: usize,
    /// Hermite sub-intervals per segment that supply area targets when
    /// tracking with area-preserving interpolation.
    pub fine: usize,
    /// Time between boundary injections; defaults to the spacing that
    /// matches the initial grid.
    pub inflow_spacing: Option<f64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            n_nodes: 80,
            dt: 0.01,
            interp: Interp::AreaPreserving,
            shock_method: RkMethod::Rk4,
            propagation: Propagation::Auto,
            guard: 2,
            fine: 10,
            inflow_spacing: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if self.n_nodes < 2 {
            return Err(SolverError::Config(format!("n_nodes must be at least 2, got {}", self.n_nodes)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SolverError::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.fine == 0 {
            return Err(SolverError::Config("fine must be at least 1".into()));
        }
        if let Some(h) = self.inflow_spacing {
            if !(h > 0.0 && h.is_finite()) {
                return Err(SolverError::Config(format!("inflow spacing must be positive, got {h}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("at t = {t}: {source}")]
    Char { t: f64, source: CharError },
    #[error("at t = {t}: {source}")]
    Projection { t: f64, source: ProjectionError },
    #[error("at t = {t}: {source}")]
    Shock { t: f64, source: ShockError },
    #[error("at t = {t}: {source}")]
    Curve { t: f64, source: CurveError },
    #[error("at t = {t}: {source}")]
    Eval { t: f64, source: ExprError },
    #[error("step rejected {halvings} times at t = {t} (last dt = {dt:e}): {reason}\n{dump}")]
    StepCollapse { t: f64, dt: f64, halvings: usize, reason: String, dump: String },
    #[error("x = {x} outside the domain [{lo}, {hi}]")]
    OutOfDomain { x: f64, lo: f64, hi: f64 },
}

/// Most halvings of a rejected step.
pub const MAX_HALVINGS: usize = 40;
/// Label gap between arcs that meet at a repeated knot.
const ARC_GAP: f64 = 1.0;

/// Where a node came from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Origin {
    Piece(usize),
    Connector,
    Inflow { tau: f64 },
}

/// A characteristic node with its chain label. Derivatives in `st` are
/// taken with respect to the label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub s: f64,
    pub st: CharState,
    pub coarse: bool,
    pub origin: Origin,
}

impl Node {
    fn knot(&self) -> ChainNode {
        ChainNode { s: self.s, pos: self.st.position(), tan: self.st.tangent() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShockReport {
    pub id: u64,
    pub x: f64,
    pub u_left: f64,
    pub u_right: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakSolutionSample {
    pub t: f64,
    /// `(x, u)` sorted by `x`; a point on a shock appears twice, left value first.
    pub points: Vec<(f64, f64)>,
    pub shock_positions: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    pub steps: usize,
    pub rejected_steps: usize,
    pub births: usize,
    pub merges: usize,
    /// Runge–Kutta stages evaluated away from the current shock position
    /// in accepted steps.
    pub stage_evaluations: usize,
    /// Smallest distance of an accepted stage abscissa to the edge of its
    /// region of overlap (negative would mean a stage outside it).
    pub min_overlap_margin: f64,
    /// Largest area defect of a segment whose area solve was degenerate.
    pub max_area_defect: f64,
    /// Collision times found, in order.
    pub collision_times: [f64; 4],
    pub collisions: usize,
}

impl Default for Diagnostics {
    fn default() -> Self {
        Diagnostics {
            steps: 0,
            rejected_steps: 0,
            births: 0,
            merges: 0,
            stage_evaluations: 0,
            min_overlap_margin: f64::INFINITY,
            max_area_defect: 0.0,
            collision_times: [f64::NAN; 4],
            collisions: 0,
        }
    }
}

impl Diagnostics {
    fn record_collision(&mut self, t: f64) {
        if self.collisions < self.collision_times.len() {
            self.collision_times[self.collisions] = t;
        }
        self.collisions += 1;
    }
}

// ---------------------------------------------------------------------------
// Seeding

struct Seeding {
    nodes: Vec<Node>,
    /// Initial shocks as (index of the last node left of the jump, jump).
    shocks: Vec<(usize, f64, f64, f64)>,
    /// Label just left of the first arc, where boundary injections start.
    inflow_label: f64,
}

fn eval_ic(prob: &Problem, piece: usize, x: f64) -> Result<(f64, f64), ProblemError> {
    let p = &prob.pieces[piece];
    let wrap = |what: &str| {
        let what = what.to_string();
        move |source| ProblemError::Eval { what: what.clone(), source }
    };
    Ok((p.g.eval_at(0.0, x, 0.0, x).map_err(wrap("g"))?, p.dg.eval_at(0.0, x, 0.0, x).map_err(wrap("g'"))?))
}

fn u_scale(prob: &Problem, n: usize) -> Result<f64, ProblemError> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (i, p) in prob.pieces.iter().enumerate() {
        for k in 0..n {
            let x = p.lo + (p.hi - p.lo) * k as f64 / (n - 1) as f64;
            let (g, _) = eval_ic(prob, i, x)?;
            lo = lo.min(g);
            hi = hi.max(g);
        }
    }
    if let Some(Ok((ub, _))) = prob.inflow_value(0.0) {
        lo = lo.min(ub);
        hi = hi.max(ub);
    }
    Ok((hi - lo).max(1e-300))
}

fn connector(x: f64, um: f64, up: f64, intervals: usize, s0: f64) -> Vec<Node> {
    let du = up - um;
    let sign = du.signum();
    (0..=intervals)
        .map(|j| {
            let frac = j as f64 / intervals as f64;
            Node {
                s: s0 + du.abs() * frac,
                st: CharState { x0: x, x, u: um + du * frac, dx_dx0: 0.0, du_dx0: sign, t: 0.0 },
                coarse: true,
                origin: Origin::Connector,
            }
        })
        .collect()
}

fn seed(prob: &Problem, n: usize, fine: usize, shocks_at_jumps: bool) -> Result<Seeding, ProblemError> {
    let scale = u_scale(prob, n)?;
    let mut nodes: Vec<Node> = Vec::new();
    let mut shocks = Vec::new();
    let mut off = 0.0;
    let connector_nodes = |x: f64, um: f64, up: f64, s0: f64| {
        let k = (((n - 1) as f64 * (up - um).abs() / scale).ceil() as usize).max(2) * fine;
        let mut c = connector(x, um, up, k, s0);
        for (j, node) in c.iter_mut().enumerate() {
            node.coarse = j % fine == 0;
        }
        c
    };
    // A rarefaction from the boundary value into the initial data.
    if let Some(b) = prob.inflow_value(0.0) {
        let (ub, _) = b.map_err(|source| ProblemError::Eval { what: "boundary value".into(), source })?;
        let (g0, _) = eval_ic(prob, 0, prob.pieces[0].lo)?;
        let compressive = ub > g0 && !crate::characteristics::same_state(ub, g0);
        if !crate::characteristics::same_state(ub, g0) && !(compressive && shocks_at_jumps) {
            let c = connector_nodes(prob.pieces[0].lo, ub, g0, off);
            off = c.last().map_or(off, |c| c.s) + ARC_GAP;
            nodes.extend(c);
        }
    }
    let inflow_label = -ARC_GAP;
    for (i, p) in prob.pieces.iter().enumerate() {
        let intervals = (n - 1) * fine;
        for k in 0..=intervals {
            let x0 = if k == intervals { p.hi } else { p.lo + (p.hi - p.lo) * k as f64 / intervals as f64 };
            let (g, dg) = eval_ic(prob, i, x0)?;
            nodes.push(Node { s: off + (x0 - p.lo), st: CharState::initial(x0, g, dg), coarse: k % fine == 0, origin: Origin::Piece(i) });
        }
        off += p.hi - p.lo + ARC_GAP;
        if let Some(next) = prob.pieces.get(i + 1) {
            let (um, _) = eval_ic(prob, i, p.hi)?;
            let (up, _) = eval_ic(prob, i + 1, next.lo)?;
            if crate::characteristics::same_state(um, up) {
                continue;
            }
            if um > up && shocks_at_jumps {
                shocks.push((nodes.len() - 1, p.hi, um, up));
                continue;
            }
            let c = connector_nodes(p.hi, um, up, off);
            off = c.last().map_or(off, |c| c.s) + ARC_GAP;
            nodes.extend(c);
        }
    }
    Ok(Seeding { nodes, shocks, inflow_label })
}

/// Boundary injection schedule.
#[derive(Debug, Clone)]
struct InflowSchedule {
    label0: f64,
    delta: f64,
    fine: usize,
    next: u64,
}

impl InflowSchedule {
    fn time(&self, k: u64) -> f64 {
        k as f64 * self.delta
    }

    /// Injections due at or before `tau`, as `next..end`.
    fn due(&self, tau: f64) -> Range<u64> {
        let tol = 1e-12 * tau.abs().max(1.0);
        let mut end = self.next;
        while self.time(end) <= tau + tol {
            end += 1;
        }
        self.next..end
    }

    fn node(&self, prob: &Problem, k: u64, tau: f64) -> Result<Node, ExprError> {
        let mut node = boundary_node(prob, self.label0, tau)?;
        node.coarse = k.is_multiple_of(self.fine as u64);
        Ok(node)
    }
}

/// Node leaving the inflow boundary at time `tau`; labels decrease with
/// injection time, so `x_s = F'(u_b)` and `u_s = Q - u_b'`.
fn boundary_node(prob: &Problem, label0: f64, tau: f64) -> Result<Node, ExprError> {
    let (ub, dub) = prob.inflow_value(tau).expect("problem has an inflow boundary")?;
    let xb = prob.domain.0;
    let q = prob.q(ub, xb, tau)?;
    Ok(Node {
        s: label0 - tau,
        st: CharState { x0: xb, x: xb, u: ub, dx_dx0: prob.df(ub)?, du_dx0: q - dub, t: tau },
        coarse: true,
        origin: Origin::Inflow { tau },
    })
}

fn default_inflow_spacing(prob: &Problem, cfg: &SolverConfig) -> Result<f64, ExprError> {
    let (ub, _) = prob.inflow_value(0.0).expect("inflow")?;
    let speed = prob.df(ub)?.abs().max(1e-12);
    let length = prob.domain.1 - prob.domain.0;
    Ok(length / (cfg.n_nodes - 1) as f64 / speed)
}

fn advance_node(prob: &Problem, node: &Node, tau: f64) -> Result<Node, CharError> {
    let st = if prob.is_homogeneous() { advance_exact(&node.st, tau, prob)? } else { step_rk4(&node.st, prob, tau - node.st.t)? };
    Ok(Node { st, ..*node })
}

/// Advances every node to `tau`, in parallel for large sets.
fn advance_all(prob: &Problem, nodes: &[Node], tau: f64) -> Result<Vec<Node>, CharError> {
    const CHUNK: usize = 1024;
    if nodes.len() <= CHUNK {
        return nodes.iter().map(|n| advance_node(prob, n, tau)).collect();
    }
    let parts: Vec<Result<Vec<Node>, CharError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = nodes
            .chunks(CHUNK)
            .map(|chunk| scope.spawn(move || chunk.iter().map(|n| advance_node(prob, n, tau)).collect()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("node worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(nodes.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Chain through the coarse nodes of `nodes`. With area preservation each
/// segment takes the area of the Hermite chain through the fine nodes it spans.
fn chain_through(nodes: &[Node], interp: Interp, time: f64) -> (CurveChain, f64) {
    let mut segments = Vec::new();
    let mut params = Vec::new();
    let mut defect = 0.0_f64;
    let mut last: Option<usize> = None;
    for (i, n) in nodes.iter().enumerate() {
        if !n.coarse && i + 1 != nodes.len() && i != 0 {
            continue;
        }
        if let Some(j) = last {
            let base = knot_segment(&nodes[j].knot(), &n.knot(), Parametrization::Graph);
            let seg = match interp {
                Interp::Hermite => base,
                Interp::AreaPreserving if i == j + 1 => base,
                Interp::AreaPreserving => {
                    let target: f64 = nodes[j..=i]
                        .windows(2)
                        .map(|w| knot_segment(&w[0].knot(), &w[1].knot(), Parametrization::Graph).parametric_area())
                        .sum();
                    let (seg, d) = area_preserving_segment(&base, target);
                    defect = defect.max(d.unwrap_or(0.0));
                    seg
                }
            };
            segments.push(seg);
        }
        params.push(n.s);
        last = Some(i);
    }
    let chain = CurveChain { segments, node_params: params, time_stamp: time };
    (chain, defect)
}

/// Label-parametrized Hermite chain through coarse nodes, as used for birth
/// detection and the modified equal-area cut.
fn label_chain(nodes: &[Node], time: f64) -> Result<CurveChain, CharError> {
    let knots: Vec<ChainNode> = nodes.iter().filter(|n| n.coarse).map(Node::knot).collect();
    Ok(chain_from_knots(&knots, None, Parametrization::Label, time)?.chain)
}

/// Whether `x_s` turns negative anywhere from `first` on the first segment
/// to `last` on the final one.
fn overturned(chain: &CurveChain, first: f64, last: f64) -> bool {
    let n = chain.segments.len();
    let scale = chain.segments.iter().map(|s| (s.d - s.a).norm()).fold(0.0, f64::max).max(1e-300);
    let min = chain
        .segments
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let lo = if i == 0 { first } else { 0.0 };
            let hi = if i + 1 == n { last } else { 1.0 };
            if hi > lo { s.min_x_slope_on(lo, hi).1 } else { f64::INFINITY }
        })
        .fold(f64::INFINITY, f64::min);
    min < -1e-12 * scale
}

/// `∫ f(u, x) dx` along a chain between two parameters, with `dx = x_s ds`.
fn integrate_param(
    chain: &CurveChain,
    from: ChainParam,
    to: ChainParam,
    f: &mut dyn FnMut(f64, f64) -> Result<f64, ExprError>,
) -> Result<f64, ExprError> {
    let mut total = 0.0;
    if to.global() <= from.global() {
        return Ok(0.0);
    }
    for k in from.seg..=to.seg.min(chain.len() - 1) {
        let seg = &chain.segments[k];
        let lo = if k == from.seg { from.t } else { 0.0 };
        let hi = if k == to.seg { to.t } else { 1.0 };
        for half in 0..2 {
            let a = lo + (hi - lo) * 0.5 * half as f64;
            let h = 0.5 * (hi - lo);
            for &(node, w) in &GAUSS3 {
                let s = a + h * node;
                let p = seg.point(s);
                let xs = seg.derivative(s).x;
                if xs != 0.0 {
                    total += w * h * f(p.u, p.x)? * xs;
                }
            }
        }
    }
    Ok(total)
}

/// `∫ f(u, x) dx` of a constant state over `[a, b]`.
fn integrate_constant(u: f64, a: f64, b: f64, f: &mut dyn FnMut(f64, f64) -> Result<f64, ExprError>) -> Result<f64, ExprError> {
    if b <= a {
        return Ok(0.0);
    }
    let mut total = 0.0;
    const SUB: usize = 8;
    let h = (b - a) / SUB as f64;
    for k in 0..SUB {
        for &(node, w) in &GAUSS3 {
            total += w * h * f(u, a + h * (k as f64 + node))?;
        }
    }
    Ok(total)
}

// ---------------------------------------------------------------------------
// Homogeneous engine

#[derive(Debug, Clone)]
struct EnvelopeEngine {
    nodes: Vec<Node>,
    /// Static part of each segment's area target.
    statics: Vec<f64>,
    inflow: Option<InflowSchedule>,
}

struct Snapshot {
    chain: CurveChain,
    envelope: Envelope,
    defect: f64,
}

impl EnvelopeEngine {
    fn new(prob: &Problem, cfg: &SolverConfig) -> Result<Self, SolverError> {
        let seeding = seed(prob, cfg.n_nodes, 1, false)?;
        let nodes = seeding.nodes;
        let mut statics = Vec::with_capacity(nodes.len());
        for w in nodes.windows(2) {
            statics.push(match (w[0].origin, w[1].origin) {
                (Origin::Piece(a), Origin::Piece(b)) if a == b => ic_area(prob, w[0].st.x0, w[1].st.x0)?,
                _ => 0.0,
            });
        }
        let inflow = match prob.inflow {
            Some(_) => {
                let delta = match cfg.inflow_spacing {
                    Some(h) => h,
                    None => default_inflow_spacing(prob, cfg).map_err(|source| SolverError::Eval { t: 0.0, source })?,
                };
                Some(InflowSchedule { label0: seeding.inflow_label, delta, fine: 1, next: 0 })
            }
            None => None,
        };
        let mut engine = EnvelopeEngine { nodes, statics, inflow };
        engine.inject(prob, 0.0)?;
        Ok(engine)
    }

    /// Static area between a newer boundary node `a` and an older one `b`.
    fn inflow_static(prob: &Problem, a: &Node, b: &Node) -> Result<f64, ExprError> {
        let (ta, tb) = (inflow_tau(a), inflow_tau(b));
        let flux_int = adaptive_simpson(
            &mut |tau| {
                let (ub, _) = prob.inflow_value(tau).expect("inflow")?;
                prob.f(ub)
            },
            tb,
            ta,
            IC_QUADRATURE_TOL,
        )?;
        Ok(flux_int - tb * prob.area_flux(b.st.u)? + ta * prob.area_flux(a.st.u)?)
    }

    fn inject(&mut self, prob: &Problem, tau: f64) -> Result<(), SolverError> {
        let Some(sched) = self.inflow.as_mut() else { return Ok(()) };
        let due = sched.due(tau);
        let eval = |source| SolverError::Eval { t: tau, source };
        for k in due.clone() {
            let node = sched.node(prob, k, sched.time(k)).map_err(eval)?;
            if let Some(first) = self.nodes.first() {
                let area = if matches!(first.origin, Origin::Inflow { .. }) {
                    Self::inflow_static(prob, &node, first).map_err(eval)?
                } else {
                    0.0
                };
                self.statics.insert(0, area);
            }
            self.nodes.insert(0, node);
        }
        sched.next = due.end;
        Ok(())
    }

    fn snapshot(&self, prob: &Problem, cfg: &SolverConfig, t: f64) -> Result<Snapshot, SolverError> {
        let mut nodes = advance_all(prob, &self.nodes, t).map_err(|source| SolverError::Char { t, source })?;
        let mut statics = self.statics.clone();
        let eval = |source| SolverError::Eval { t, source };
        if let Some(sched) = &self.inflow {
            let last = sched.time(sched.next - 1);
            if t > last * (1.0 + 1e-12) + 1e-14 {
                let v = boundary_node(prob, sched.label0, t).map_err(eval)?;
                statics.insert(0, Self::inflow_static(prob, &v, &nodes[0]).map_err(eval)?);
                nodes.insert(0, v);
            }
        }
        let knots: Vec<ChainNode> = nodes.iter().map(Node::knot).collect();
        let targets = match cfg.interp {
            Interp::Hermite => None,
            Interp::AreaPreserving => {
                let mut v = Vec::with_capacity(statics.len());
                for (i, w) in nodes.windows(2).enumerate() {
                    v.push(statics[i] + t * (prob.area_flux(w[1].st.u).map_err(eval)? - prob.area_flux(w[0].st.u).map_err(eval)?));
                }
                Some(v)
            }
        };
        let built = chain_from_knots(&knots, targets.as_deref(), Parametrization::Graph, t)
            .map_err(|source| SolverError::Char { t, source })?;
        let defect = built.max_defect();
        let chain = built.chain;
        let envelope = lower_envelope(&Sheets::new(&chain)).map_err(|source| SolverError::Projection { t, source })?;
        Ok(Snapshot { chain, envelope, defect })
    }
}

fn inflow_tau(n: &Node) -> f64 {
    match n.origin {
        Origin::Inflow { tau } => tau,
        _ => 0.0,
    }
}

impl Snapshot {
    fn u_at(&self, x: f64, prefer_right: bool) -> Result<f64, CurveError> {
        let sheets = Sheets::new(&self.chain);
        let pieces = &self.envelope.pieces;
        let (Some(first), Some(last)) = (pieces.first(), pieces.last()) else {
            return Ok(self.chain.point(self.chain.start()).u);
        };
        if x < first.x_lo {
            return Ok(sheets.eval(first.run, first.x_lo)?.u);
        }
        if x > last.x_hi {
            return Ok(sheets.eval(last.run, last.x_hi)?.u);
        }
        let idx = pieces.partition_point(|p| p.x_hi < x);
        let mut p = pieces[idx.min(pieces.len() - 1)];
        if prefer_right && p.x_hi == x && idx + 1 < pieces.len() {
            p = pieces[idx + 1];
        }
        Ok(sheets.eval(p.run, x.clamp(p.x_lo, p.x_hi))?.u)
    }

    fn integral(&self, domain: (f64, f64), f: &mut dyn FnMut(f64, f64) -> Result<f64, ExprError>) -> Result<f64, SolverError> {
        let t = self.chain.time_stamp;
        let sheets = Sheets::new(&self.chain);
        let curve = |source| SolverError::Curve { t, source };
        let eval = |source| SolverError::Eval { t, source };
        let mut total = 0.0;
        for p in &self.envelope.pieces {
            let (a, b) = (p.x_lo.max(domain.0), p.x_hi.min(domain.1));
            if b <= a {
                continue;
            }
            let pa = sheets.eval(p.run, a).map_err(curve)?.param;
            let pb = sheets.eval(p.run, b).map_err(curve)?.param;
            total += integrate_param(&self.chain, pa, pb, f).map_err(eval)?;
        }
        if let (Some(first), Some(last)) = (self.envelope.pieces.first(), self.envelope.pieces.last()) {
            let ul = self.u_at(first.x_lo, false).map_err(curve)?;
            let ur = self.u_at(last.x_hi, true).map_err(curve)?;
            total += integrate_constant(ul, domain.0, first.x_lo.min(domain.1), f).map_err(eval)?;
            total += integrate_constant(ur, last.x_hi.max(domain.0), domain.1, f).map_err(eval)?;
        }
        Ok(total)
    }
}

// ---------------------------------------------------------------------------
// Tracking engine

#[derive(Debug, Clone, Copy, PartialEq)]
struct Branch {
    lo: f64,
    hi: f64,
}

impl Branch {
    fn contains(&self, s: f64) -> bool {
        self.lo <= s && s <= self.hi
    }
}

#[derive(Debug, Clone)]
struct TrackingEngine {
    nodes: Vec<Node>,
    branches: Vec<Branch>,
    shocks: Vec<Shock>,
    inflow: Option<InflowSchedule>,
    next_id: u64,
}

/// Nodes at a stage time, with boundary nodes prepended.
struct StageNodes {
    nodes: Vec<Node>,
    /// Number of nodes in front that are not in the committed list.
    front: usize,
    /// Whether `nodes[0]` is a transient boundary node.
    virtual_front: bool,
}

/// Node index window of one side of a shock.
#[derive(Debug, Clone)]
struct Window {
    range: Range<usize>,
    /// Includes the boundary end of the inflow branch.
    front: bool,
}

struct Proposal {
    tau: f64,
    end: StageNodes,
    shocks: Vec<Shock>,
    branches: Vec<Branch>,
    margin: f64,
    stages: usize,
    defect: f64,
}

enum Rejection {
    Overlap(ShockError),
    Fatal(SolverError),
}

impl From<SolverError> for Rejection {
    fn from(e: SolverError) -> Self {
        Rejection::Fatal(e)
    }
}

impl TrackingEngine {
    fn new(prob: &Problem, cfg: &SolverConfig) -> Result<Self, SolverError> {
        let fine = if cfg.interp == Interp::AreaPreserving { cfg.fine } else { 1 };
        let seeding = seed(prob, cfg.n_nodes, fine, true)?;
        let nodes = seeding.nodes;
        let mut branches = Vec::new();
        let mut shocks = Vec::new();
        let mut next_id = 0;
        let mut lo = f64::NEG_INFINITY;
        let eval = |source| SolverError::Eval { t: 0.0, source };
        let inflow = match prob.inflow {
            Some(_) => {
                let delta = match cfg.inflow_spacing {
                    Some(h) => h,
                    None => default_inflow_spacing(prob, cfg).map_err(eval)?,
                } / fine as f64;
                Some(InflowSchedule { label0: seeding.inflow_label, delta, fine, next: 0 })
            }
            None => None,
        };
        // A compressive boundary jump starts a shock at the boundary.
        if let Some(sched) = &inflow {
            let first = &nodes[0];
            let (ub, _) = prob.inflow_value(0.0).expect("inflow").map_err(eval)?;
            if matches!(first.origin, Origin::Piece(_)) && ub > first.st.u {
                branches.push(Branch { lo, hi: sched.label0 });
                shocks.push(Shock {
                    id: next_id,
                    x_star: prob.domain.0,
                    u_left: ub,
                    u_right: first.st.u,
                    left_anchor: Anchor { label: sched.label0, t: 0.0 },
                    right_anchor: Anchor { label: first.s, t: 0.0 },
                });
                next_id += 1;
                lo = first.s;
            }
        }
        for &(idx, x, um, up) in &seeding.shocks {
            branches.push(Branch { lo, hi: nodes[idx].s });
            shocks.push(Shock {
                id: next_id,
                x_star: x,
                u_left: um,
                u_right: up,
                left_anchor: Anchor { label: nodes[idx].s, t: 0.0 },
                right_anchor: Anchor { label: nodes[idx + 1].s, t: 0.0 },
            });
            next_id += 1;
            lo = nodes[idx + 1].s;
        }
        branches.push(Branch { lo, hi: f64::INFINITY });
        let mut engine = TrackingEngine { nodes, branches, shocks, inflow, next_id };
        if let Some(sched) = engine.inflow.as_mut() {
            let due = sched.due(0.0);
            let mut fresh = Vec::new();
            for k in due.clone().rev() {
                fresh.push(sched.node(prob, k, sched.time(k)).map_err(eval)?);
            }
            sched.next = due.end;
            engine.nodes.splice(0..0, fresh);
        }
        Ok(engine)
    }

    fn index_range(&self, b: &Branch) -> Range<usize> {
        let a = self.nodes.partition_point(|n| n.s < b.lo);
        let z = self.nodes.partition_point(|n| n.s <= b.hi);
        a..z
    }

    fn index_of(&self, label: f64) -> usize {
        self.nodes.partition_point(|n| n.s < label).min(self.nodes.len().saturating_sub(1))
    }

    fn last_injection(&self) -> Option<f64> {
        self.inflow.as_ref().filter(|s| s.next > 0).map(|s| s.time(s.next - 1))
    }

    /// Nodes of `range` advanced to `tau`; with `front`, boundary injections
    /// due by `tau` and a transient boundary node are prepended.
    fn nodes_at(&self, prob: &Problem, t: f64, tau: f64, range: Range<usize>, front: bool) -> Result<StageNodes, SolverError> {
        let char_err = |source| SolverError::Char { t: tau, source };
        let eval = |source| SolverError::Eval { t: tau, source };
        let mut out = Vec::new();
        let mut virtual_front = false;
        if front {
            if let Some(sched) = &self.inflow {
                let due = sched.due(tau);
                let last = if due.end > 0 { Some(sched.time(due.end - 1)) } else { None };
                if last.is_none_or(|l| tau > l * (1.0 + 1e-12) + 1e-14) {
                    out.push(boundary_node(prob, sched.label0, tau).map_err(eval)?);
                    virtual_front = true;
                }
                for k in due.rev() {
                    let born = sched.time(k).min(tau);
                    let node = sched.node(prob, k, born).map_err(eval)?;
                    out.push(advance_node(prob, &node, tau).map_err(char_err)?);
                }
            }
        }
        let front_len = out.len();
        out.extend(advance_all(prob, &self.nodes[range], tau).map_err(char_err)?);
        let _ = t;
        Ok(StageNodes { nodes: out, front: front_len, virtual_front })
    }

    /// Window of the left branch of shock `i`, reaching back `reach` in x.
    fn left_window(&self, i: usize, reach: f64) -> Window {
        let r = self.index_range(&self.branches[i]);
        let s = &self.shocks[i];
        let mut j = self.index_of(s.left_anchor.label).clamp(r.start, r.end.saturating_sub(1));
        let target = s.x_star - reach;
        while j > r.start && self.nodes[j].st.x > target {
            j -= 1;
        }
        let mut extra = 0;
        while j > r.start && (extra < 3 || !self.nodes[j].coarse) {
            j -= 1;
            if self.nodes[j].coarse {
                extra += 1;
            }
        }
        let front = j == r.start && i == 0 && self.inflow.is_some() && self.branches[0].lo == f64::NEG_INFINITY;
        Window { range: j..r.end, front }
    }

    fn right_window(&self, i: usize, reach: f64) -> Window {
        let r = self.index_range(&self.branches[i + 1]);
        let s = &self.shocks[i];
        let mut j = self.index_of(s.right_anchor.label).clamp(r.start, r.end.saturating_sub(1));
        let target = s.x_star + reach;
        while j + 1 < r.end && self.nodes[j].st.x < target {
            j += 1;
        }
        let mut extra = 0;
        while j + 1 < r.end && (extra < 3 || !self.nodes[j].coarse) {
            j += 1;
            if self.nodes[j].coarse {
                extra += 1;
            }
        }
        Window { range: r.start..j + 1, front: false }
    }

    fn window_slice<'a>(end: &'a StageNodes, w: &Window) -> &'a [Node] {
        if w.front {
            &end.nodes[..end.front + w.range.end]
        } else {
            &end.nodes[end.front + w.range.start..end.front + w.range.end]
        }
    }

    /// Moves every node and shock from `t` to `t + h` without committing.
    fn propose(&self, prob: &Problem, cfg: &SolverConfig, t: f64, h: f64) -> Result<Proposal, Rejection> {
        let tau = t + h;
        let full = 0..self.nodes.len();
        let end = self.nodes_at(prob, t, tau, full, self.inflow.is_some())?;
        let shock_err = |source| Rejection::Fatal(SolverError::Shock { t, source });
        let mut shocks = self.shocks.clone();
        let mut branches = self.branches.clone();
        let mut margin = f64::INFINITY;
        let mut stages = 0;
        let mut defect = 0.0_f64;
        for (i, s) in self.shocks.iter().enumerate() {
            let eval = |source| Rejection::Fatal(SolverError::Eval { t, source });
            let speed = (prob.df(s.u_left).map_err(eval)?.abs() + prob.df(s.u_right).map_err(eval)?.abs()).max(1e-12);
            let reach = 2.0 * speed * h;
            let lw = self.left_window(i, reach);
            let rw = self.right_window(i, reach);
            let (end_l, d1) = chain_through(Self::window_slice(&end, &lw), cfg.interp, tau);
            let (end_r, d2) = chain_through(Self::window_slice(&end, &rw), cfg.interp, tau);
            defect = defect.max(d1).max(d2);
            let mids = if cfg.shock_method == RkMethod::Rk4 {
                let half = t + 0.5 * h;
                let ml = self.nodes_at(prob, t, half, lw.range.clone(), lw.front)?;
                let mr = self.nodes_at(prob, t, half, rw.range.clone(), rw.front)?;
                Some((chain_through(&ml.nodes, cfg.interp, half).0, chain_through(&mr.nodes, cfg.interp, half).0))
            } else {
                None
            };
            let mut slope = |c: f64, z: f64| -> Result<f64, ShockError> {
                if c == 0.0 {
                    return Ok(rh_speed(prob, s.u_left, s.u_right)?);
                }
                let (lc, rc) = if c == 1.0 {
                    (&end_l, &end_r)
                } else {
                    let m = mids.as_ref().expect("mid-stage chains");
                    (&m.0, &m.1)
                };
                let l = Side::resolve(lc, s.left_anchor, Hand::Left)?;
                let r = Side::resolve(rc, s.right_anchor, Hand::Right)?;
                let region = crate::shock::overlap(&l, &r);
                margin = margin.min(region.margin(z));
                stages += 1;
                crate::shock::rh_slope(z, &l, &r, prob)
            };
            let x_new = match step_shock(s.x_star, h, cfg.shock_method, &mut slope) {
                Ok(x) => x,
                Err(e @ ShockError::OutOfOverlap { .. }) => return Err(Rejection::Overlap(e)),
                Err(e) => return Err(shock_err(e)),
            };
            let reread = || -> Result<_, ShockError> {
                let l = Side::resolve(&end_l, s.left_anchor, Hand::Left)?;
                let r = Side::resolve(&end_r, s.right_anchor, Hand::Right)?;
                let region = crate::shock::overlap(&l, &r);
                if !region.contains(x_new) {
                    return Err(ShockError::OutOfOverlap { z: x_new, lo: region.lo, hi: region.hi });
                }
                Ok((l.invert(x_new)?, r.invert(x_new)?))
            };
            let (li, ri) = match reread() {
                Ok(v) => v,
                Err(e @ ShockError::OutOfOverlap { .. }) => return Err(Rejection::Overlap(e)),
                Err(e) => return Err(shock_err(e)),
            };
            let next = Shock {
                id: s.id,
                x_star: x_new,
                u_left: li.u,
                u_right: ri.u,
                left_anchor: Anchor::of(&end_l, li.param),
                right_anchor: Anchor::of(&end_r, ri.param),
            };
            next.check_entropy().map_err(shock_err)?;
            let (hi, lo) = trim_labels(&end_l, li.param, &end_r, ri.param, cfg.guard);
            branches[i].hi = branches[i].hi.min(hi);
            branches[i + 1].lo = branches[i + 1].lo.max(lo);
            shocks[i] = next;
        }
        Ok(Proposal { tau, end, shocks, branches, margin, stages, defect })
    }

    fn commit(&mut self, p: Proposal) {
        let mut nodes = p.end.nodes;
        if p.end.virtual_front {
            nodes.remove(0);
        }
        if let Some(sched) = self.inflow.as_mut() {
            sched.next = sched.due(p.tau).end;
        }
        let branches = p.branches;
        nodes.retain(|n| branches.iter().any(|b| b.contains(n.s)));
        self.nodes = nodes;
        self.branches = branches;
        self.shocks = p.shocks;
    }

    fn live_range(&self, b: usize) -> Range<usize> {
        live_range(&self.nodes, &self.branches, &self.shocks, b)
    }

    /// Splits branch `b` at a new shock found by the modified equal-area
    /// cut between `old` (heights) and `new` (abscissae).
    fn insert_shock(&mut self, b: usize, old: &[Node], new: &[Node], tau: f64, guard: usize) -> Result<(), SolverError> {
        let char_err = |source| SolverError::Char { t: tau, source };
        let labels: Vec<f64> = new.iter().filter(|n| n.coarse).map(|n| n.s).collect();
        let old: Vec<Node> = old.iter().copied().filter(|n| n.coarse && labels.binary_search_by(|s| s.total_cmp(&n.s)).is_ok()).collect();
        let new: Vec<Node> = new.iter().copied().filter(|n| n.coarse && old.iter().any(|o| o.s == n.s)).collect();
        let old_chain = label_chain(&old, tau).map_err(char_err)?;
        let new_chain = label_chain(&new, tau).map_err(char_err)?;
        let res = find_modified_equal_area(&old_chain, &new_chain).map_err(|source| SolverError::Projection { t: tau, source })?;
        let shock = Shock {
            id: self.next_id,
            x_star: res.x_star,
            u_left: res.u_left,
            u_right: res.u_right,
            left_anchor: Anchor::of(&new_chain, res.s1),
            right_anchor: Anchor::of(&new_chain, res.s2),
        };
        shock.check_entropy().map_err(|source| SolverError::Shock { t: tau, source })?;
        self.next_id += 1;
        let (hi, lo) = trim_labels(&new_chain, res.s1, &new_chain, res.s2, guard);
        let old_branch = self.branches[b];
        self.branches[b] = Branch { lo: old_branch.lo, hi };
        self.branches.insert(b + 1, Branch { lo, hi: old_branch.hi });
        self.shocks.insert(b, shock);
        Ok(())
    }

    fn gap(&self, i: usize) -> f64 {
        self.shocks[i + 1].x_star - self.shocks[i].x_star
    }

    /// Full chain of branch `b` at the engine time.
    fn branch_chain(&self, prob: &Problem, cfg: &SolverConfig, t: f64, b: usize) -> Result<CurveChain, SolverError> {
        let r = self.index_range(&self.branches[b]);
        let front = b == 0 && self.inflow.is_some() && self.branches[0].lo == f64::NEG_INFINITY;
        let mut nodes = Vec::new();
        if front {
            let sched = self.inflow.as_ref().expect("inflow");
            if self.last_injection().is_none_or(|l| t > l * (1.0 + 1e-12) + 1e-14) {
                nodes.push(boundary_node(prob, sched.label0, t).map_err(|source| SolverError::Eval { t, source })?);
            }
        }
        nodes.extend_from_slice(&self.nodes[r]);
        Ok(chain_through(&nodes, cfg.interp, t).0)
    }

    /// The weak solution as one monotone piece per branch.
    fn live_pieces(&self, prob: &Problem, cfg: &SolverConfig, t: f64) -> Result<Vec<LivePiece>, SolverError> {
        let shock_err = |source| SolverError::Shock { t, source };
        let mut out = Vec::with_capacity(self.branches.len());
        for b in 0..self.branches.len() {
            let chain = self.branch_chain(prob, cfg, t, b)?;
            if chain.is_empty() {
                // A single stored node: the branch is a point.
                let r = self.index_range(&self.branches[b]);
                let u = self.nodes.get(r.start).map_or(0.0, |n| n.st.u);
                out.push(LivePiece::point(u, self.shocks.get(b.wrapping_sub(1)).map(|s| s.x_star), self.shocks.get(b).map(|s| s.x_star)));
                continue;
            }
            let runs = chain.runs();
            let primary = if b > 0 {
                Some(Side::resolve(&chain, self.shocks[b - 1].right_anchor, Hand::Right).map_err(shock_err)?.run)
            } else if b < self.shocks.len() {
                Some(Side::resolve(&chain, self.shocks[b].left_anchor, Hand::Left).map_err(shock_err)?.run)
            } else {
                None
            };
            let x_lo = if b > 0 { Some(self.shocks[b - 1].x_star) } else { None };
            let x_hi = self.shocks.get(b).map(|s| s.x_star);
            out.push(LivePiece { chain: Some(chain), runs, primary, x_lo, x_hi, point_u: 0.0 });
        }
        Ok(out)
    }
}

/// One branch of the tracked weak solution between its shocks.
struct LivePiece {
    chain: Option<CurveChain>,
    runs: Vec<Run>,
    primary: Option<Run>,
    x_lo: Option<f64>,
    x_hi: Option<f64>,
    point_u: f64,
}

impl LivePiece {
    fn point(u: f64, x_lo: Option<f64>, x_hi: Option<f64>) -> Self {
        LivePiece { chain: None, runs: Vec::new(), primary: None, x_lo, x_hi, point_u: u }
    }

    fn invert(&self, x: f64) -> Result<(ChainParam, f64), CurveError> {
        let Some(chain) = &self.chain else {
            return Ok((ChainParam::new(0, 0.0), self.point_u));
        };
        if let Some(run) = &self.primary {
            if let Ok(inv) = chain.invert_run(run, x) {
                return Ok((inv.param, inv.u));
            }
        }
        for run in self.runs.iter().filter(|r| r.sign > 0) {
            if let Ok(inv) = chain.invert_run(run, x) {
                return Ok((inv.param, inv.u));
            }
        }
        let start = chain.point(chain.start());
        let end = chain.point(chain.end());
        if x <= start.x {
            return Ok((chain.start(), start.u));
        }
        if x >= end.x {
            return Ok((chain.end(), end.u));
        }
        chain.invert_x_between(chain.start(), chain.end(), x).map(|inv| (inv.param, inv.u))
    }

    fn x_span(&self) -> (f64, f64) {
        match &self.chain {
            Some(c) => (c.point(c.start()).x, c.point(c.end()).x),
            None => (self.x_lo.unwrap_or(f64::NEG_INFINITY), self.x_hi.unwrap_or(f64::INFINITY)),
        }
    }
}

/// Node range of branch `b` that lies between its shocks, widened to the
/// coarse nodes of the segments holding the shock states.
fn live_range(nodes: &[Node], branches: &[Branch], shocks: &[Shock], b: usize) -> Range<usize> {
    let index_of = |label: f64| nodes.partition_point(|n| n.s < label).min(nodes.len().saturating_sub(1));
    let lo = if b > 0 { shocks[b - 1].right_anchor.label } else { branches[b].lo };
    let hi = if b < shocks.len() {
        let mut k = index_of(shocks[b].left_anchor.label) + 1;
        while k < nodes.len() && !nodes[k].coarse {
            k += 1;
        }
        nodes.get(k).map_or(branches[b].hi, |n| n.s.min(branches[b].hi))
    } else {
        branches[b].hi
    };
    nodes.partition_point(|n| n.s < lo)..nodes.partition_point(|n| n.s <= hi)
}

/// First branch whose part between its shocks overturns.
fn live_overturn(nodes: &[Node], branches: &[Branch], shocks: &[Shock], interp: Interp, tau: f64, only: Option<usize>) -> Option<usize> {
    for b in 0..branches.len() {
        if only.is_some_and(|o| o != b) {
            continue;
        }
        let range = live_range(nodes, branches, shocks, b);
        if range.len() < 2 {
            continue;
        }
        let (chain, _) = chain_through(&nodes[range], interp, tau);
        // The end segments hold a shock state; only their live side counts.
        let first = if b > 0 { shocks[b - 1].right_anchor.t } else { 0.0 };
        let last = if b < shocks.len() { shocks[b].left_anchor.t } else { 1.0 };
        if overturned(&chain, first, last) {
            return Some(b);
        }
    }
    None
}

impl Proposal {
    fn overturn(&self, interp: Interp, only: Option<usize>) -> Option<usize> {
        live_overturn(&self.end.nodes, &self.branches, &self.shocks, interp, self.tau, only)
    }
}

// ---------------------------------------------------------------------------
// Public driver

#[derive(Debug, Clone)]
enum Engine {
    Envelope(EnvelopeEngine),
    Tracking(TrackingEngine),
}

/// A simulation in progress.
#[derive(Debug, Clone)]
pub struct Solver {
    prob: Problem,
    cfg: SolverConfig,
    t: f64,
    engine: Engine,
    diag: Diagnostics,
    ic_area: f64,
    boundary_flux: f64,
    source_integral: f64,
    /// Boundary flux difference and source integral at the current time.
    rates: (f64, f64),
}

impl Solver {
    pub fn initialize(prob: Problem, cfg: SolverConfig) -> Result<Self, SolverError> {
        cfg.validate()?;
        prob.validate()?;
        let engine = if prob.is_homogeneous() && cfg.propagation == Propagation::Auto {
            Engine::Envelope(EnvelopeEngine::new(&prob, &cfg)?)
        } else {
            Engine::Tracking(TrackingEngine::new(&prob, &cfg)?)
        };
        let mut ic = 0.0;
        for p in &prob.pieces {
            let (a, b) = (p.lo.max(prob.domain.0), p.hi.min(prob.domain.1));
            if b > a {
                ic += ic_area(&prob, a, b)?;
            }
        }
        let mut solver =
            Solver { prob, cfg, t: 0.0, engine, diag: Diagnostics::default(), ic_area: ic, boundary_flux: 0.0, source_integral: 0.0, rates: (0.0, 0.0) };
        solver.rates = solver.current_rates()?;
        Ok(solver)
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn problem(&self) -> &Problem {
        &self.prob
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn diagnostics(&self) -> Diagnostics {
        self.diag
    }

    pub fn is_tracking(&self) -> bool {
        matches!(self.engine, Engine::Tracking(_))
    }

    /// Integrates to `t_target` on the grid `k dt`, landing exactly.
    pub fn advance(&mut self, t_target: f64) -> Result<(), SolverError> {
        if !(t_target >= self.t) {
            return Err(SolverError::Config(format!("cannot advance from t = {} back to {t_target}", self.t)));
        }
        let dt = self.cfg.dt;
        while self.t < t_target {
            let k = (self.t / dt + 1e-9).floor() + 1.0;
            let grid = k * dt;
            let stop = if grid > t_target - 1e-12 * t_target.abs().max(1.0) { t_target } else { grid };
            let h = stop - self.t;
            if h <= 1e-14 * self.t.abs().max(1.0) {
                self.t = stop;
                continue;
            }
            let before = self.rates;
            match &mut self.engine {
                Engine::Envelope(_) => self.step_envelope(h)?,
                Engine::Tracking(_) => self.step_tracking(h, true)?,
            }
            self.diag.steps += 1;
            let h_done = self.t - (stop - h);
            self.rates = self.current_rates()?;
            self.boundary_flux += 0.5 * h_done * (before.0 + self.rates.0);
            self.source_integral += 0.5 * h_done * (before.1 + self.rates.1);
        }
        // The envelope engine only builds curves at the times it stops at.
        if let Engine::Envelope(env) = &self.engine {
            let defect = env.snapshot(&self.prob, &self.cfg, self.t)?.defect;
            self.diag.max_area_defect = self.diag.max_area_defect.max(defect);
        }
        Ok(())
    }

    fn step_envelope(&mut self, h: f64) -> Result<(), SolverError> {
        let t_new = self.t + h;
        let Engine::Envelope(env) = &mut self.engine else { unreachable!() };
        env.inject(&self.prob, t_new)?;
        self.t = t_new;
        Ok(())
    }

    /// One tracked step of at most `h`, halving on overlap violations. The
    /// time reached may fall short of `t + h` after a rejection.
    fn step_tracking(&mut self, h: f64, births: bool) -> Result<(), SolverError> {
        let mut h = h;
        let mut last_reason = String::new();
        for halving in 0..=MAX_HALVINGS {
            match self.try_tracking(h, births) {
                Ok(()) => return Ok(()),
                Err(Rejection::Overlap(e)) => {
                    last_reason = e.to_string();
                    self.diag.rejected_steps += 1;
                    if halving < MAX_HALVINGS {
                        h *= 0.5;
                    }
                }
                Err(Rejection::Fatal(e)) => return Err(e),
            }
        }
        Err(SolverError::StepCollapse { t: self.t, dt: h, halvings: MAX_HALVINGS, reason: last_reason, dump: self.dump() })
    }

    fn dump(&self) -> String {
        let mut s = String::new();
        if let Engine::Tracking(e) = &self.engine {
            s.push_str(&format!("nodes: {}\n", e.nodes.len()));
            for (i, b) in e.branches.iter().enumerate() {
                s.push_str(&format!("branch {i}: labels [{}, {}]\n", b.lo, b.hi));
            }
            for sh in &e.shocks {
                s.push_str(&format!("shock {}: x = {}, u_left = {}, u_right = {}\n", sh.id, sh.x_star, sh.u_left, sh.u_right));
            }
        }
        s
    }

    fn try_tracking(&mut self, h: f64, births: bool) -> Result<(), Rejection> {
        let t = self.t;
        let Engine::Tracking(eng) = &self.engine else { unreachable!() };
        let prop = eng.propose(&self.prob, &self.cfg, t, h)?;
        let positions: Vec<f64> = prop.shocks.iter().map(|s| s.x_star).collect();
        if let Some(i) = detect_collision(&positions) {
            let g0 = eng.gap(i);
            let g1 = positions[i + 1] - positions[i];
            let tol = contact_tol(positions[i]);
            let prob = &self.prob;
            let cfg = &self.cfg;
            let mut overlap = None;
            let tau = refine_collision(
                |tau| match eng.propose(prob, cfg, t, tau - t) {
                    Ok(p) => Ok(p.shocks[i + 1].x_star - p.shocks[i].x_star),
                    Err(Rejection::Overlap(e)) => {
                        overlap = Some(e);
                        Err(())
                    }
                    Err(Rejection::Fatal(e)) => {
                        overlap = None;
                        Err(Some(e)).map_err(|_: Option<SolverError>| ())
                    }
                },
                t,
                t + h,
                g0,
                g1,
                tol,
            );
            let tau = match tau {
                Ok(tau) => tau,
                Err(()) => {
                    return Err(match overlap {
                        Some(e) => Rejection::Overlap(e),
                        None => Rejection::Fatal(SolverError::StepCollapse {
                            t,
                            dt: h,
                            halvings: 0,
                            reason: "collision refinement failed".into(),
                            dump: self.dump(),
                        }),
                    })
                }
            };
            let p = eng.propose(prob, cfg, t, tau - t)?;
            self.accept(p);
            self.merge(i)?;
            self.diag.record_collision(self.t);
            return Ok(());
        }
        if births {
            if let Some(b) = prop.overturn(self.cfg.interp, None) {
                return self.birth(b, h);
            }
        }
        self.accept(prop);
        Ok(())
    }

    fn accept(&mut self, p: Proposal) {
        self.diag.min_overlap_margin = self.diag.min_overlap_margin.min(p.margin);
        self.diag.stage_evaluations += p.stages;
        self.diag.max_area_defect = self.diag.max_area_defect.max(p.defect);
        self.t = p.tau;
        let Engine::Tracking(eng) = &mut self.engine else { unreachable!() };
        eng.commit(p);
    }

    fn merge(&mut self, i: usize) -> Result<(), SolverError> {
        let t = self.t;
        let Engine::Tracking(eng) = &mut self.engine else { unreachable!() };
        let merged = merge_shocks(&eng.shocks[i], &eng.shocks[i + 1], eng.next_id).map_err(|source| SolverError::Shock { t, source })?;
        eng.next_id += 1;
        eng.shocks.splice(i..=i + 1, [merged]);
        eng.branches.remove(i + 1);
        let branches = eng.branches.clone();
        eng.nodes.retain(|n| branches.iter().any(|b| b.contains(n.s)));
        self.diag.merges += 1;
        Ok(())
    }

    /// A branch overturned within the next `h`: bracket the breaking time to
    /// `h^2`, step to just before it, and cut the new shock by the modified
    /// equal-area principle over the last sub-step.
    fn birth(&mut self, b: usize, h: f64) -> Result<(), Rejection> {
        let t = self.t;
        let (mut lo, mut hi) = (t, t + h);
        let width = (h * h).max(1e-13 * t.abs().max(1.0));
        while hi - lo > width {
            let mid = 0.5 * (lo + hi);
            let Engine::Tracking(eng) = &self.engine else { unreachable!() };
            if eng.propose(&self.prob, &self.cfg, t, mid - t)?.overturn(self.cfg.interp, Some(b)).is_some() {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        if lo > t {
            self.step_tracking(lo - t, false)?;
        }
        // A rejected sub-step may stop short; the bracket still holds.
        let t_old = self.t;
        let Engine::Tracking(eng) = &self.engine else { unreachable!() };
        let old: Vec<Node> = eng.nodes[eng.live_range(b)].to_vec();
        let labels: Vec<f64> = old.iter().map(|n| n.s).collect();
        self.step_tracking(hi - t_old, false)?;
        let t_new = self.t;
        let Engine::Tracking(eng) = &mut self.engine else { unreachable!() };
        let new: Vec<Node> = eng.nodes.iter().copied().filter(|n| labels.binary_search_by(|s| s.total_cmp(&n.s)).is_ok()).collect();
        let g = self.cfg.guard;
        eng.insert_shock(b, &old, &new, t_new, g)?;
        self.diag.births += 1;
        Ok(())
    }

    /// Boundary flux difference `F(u(x_max)) - F(u(x_min))` and `∫ Q dx`.
    fn current_rates(&self) -> Result<(f64, f64), SolverError> {
        let t = self.t;
        let eval = |source| SolverError::Eval { t, source };
        let (lo, hi) = self.prob.domain;
        let ul = self.boundary_value(lo, false)?;
        let ur = self.boundary_value(hi, true)?;
        let flux = self.prob.f(ur).map_err(eval)? - self.prob.f(ul).map_err(eval)?;
        let q = if self.prob.is_homogeneous() {
            0.0
        } else {
            let prob = &self.prob;
            self.integral(&mut |u, x| prob.q(u, x, t))?
        };
        Ok((flux, q))
    }

    fn boundary_value(&self, x: f64, right: bool) -> Result<f64, SolverError> {
        if !right {
            if let Some(b) = self.prob.inflow_value(self.t) {
                return b.map(|v| v.0).map_err(|source| SolverError::Eval { t: self.t, source });
            }
        }
        let s = self.sample(&[x])?;
        Ok(if right { s.points.last() } else { s.points.first() }.map_or(0.0, |p| p.1))
    }

    /// `∫ f(u, x) dx` of the weak solution over the domain.
    pub fn integral(&self, f: &mut dyn FnMut(f64, f64) -> Result<f64, ExprError>) -> Result<f64, SolverError> {
        let t = self.t;
        let dom = self.prob.domain;
        match &self.engine {
            Engine::Envelope(env) => env.snapshot(&self.prob, &self.cfg, t)?.integral(dom, f),
            Engine::Tracking(eng) => {
                let pieces = eng.live_pieces(&self.prob, &self.cfg, t)?;
                let curve = |source| SolverError::Curve { t, source };
                let eval = |source| SolverError::Eval { t, source };
                let mut total = 0.0;
                let n = pieces.len();
                for (b, p) in pieces.iter().enumerate() {
                    let (xs, xe) = p.x_span();
                    let a = p.x_lo.unwrap_or(dom.0).max(dom.0);
                    let z = p.x_hi.unwrap_or(dom.1).min(dom.1);
                    if z <= a {
                        continue;
                    }
                    let Some(chain) = &p.chain else {
                        total += integrate_constant(p.point_u, a, z, f).map_err(eval)?;
                        continue;
                    };
                    let ca = a.max(xs);
                    let cz = z.min(xe);
                    if cz > ca {
                        let pa = p.invert(ca).map_err(curve)?.0;
                        let pz = p.invert(cz).map_err(curve)?.0;
                        total += integrate_param(chain, pa, pz, f).map_err(eval)?;
                    }
                    if b == 0 && a < xs {
                        let u = chain.point(chain.start()).u;
                        total += integrate_constant(u, a, xs.min(z), f).map_err(eval)?;
                    }
                    if b + 1 == n && z > xe {
                        let u = chain.point(chain.end()).u;
                        total += integrate_constant(u, xe.max(a), z, f).map_err(eval)?;
                    }
                }
                Ok(total)
            }
        }
    }

    /// Area of the weak solution minus the initial area, the boundary inflow
    /// and the integrated source.
    pub fn conservation_report(&self) -> Result<f64, SolverError> {
        let area = self.integral(&mut |u, _| Ok(u))?;
        Ok(area - self.ic_area + self.boundary_flux - self.source_integral)
    }

    pub fn shocks(&self) -> Result<Vec<ShockReport>, SolverError> {
        match &self.engine {
            Engine::Envelope(env) => {
                let snap = env.snapshot(&self.prob, &self.cfg, self.t)?;
                Ok(snap
                    .envelope
                    .shocks
                    .iter()
                    .enumerate()
                    .map(|(i, s)| ShockReport { id: i as u64, x: s.x_star, u_left: s.u_left, u_right: s.u_right })
                    .collect())
            }
            Engine::Tracking(eng) => {
                Ok(eng.shocks.iter().map(|s| ShockReport { id: s.id, x: s.x_star, u_left: s.u_left, u_right: s.u_right }).collect())
            }
        }
    }

    /// Largest area defect of degenerate area solves in the current chain.
    pub fn area_defect(&self) -> Result<f64, SolverError> {
        match &self.engine {
            Engine::Envelope(env) => Ok(env.snapshot(&self.prob, &self.cfg, self.t)?.defect),
            Engine::Tracking(_) => Ok(self.diag.max_area_defect),
        }
    }

    /// The weak solution at the points `xs` (within the domain).
    pub fn sample(&self, xs: &[f64]) -> Result<WeakSolutionSample, SolverError> {
        let t = self.t;
        let (lo, hi) = self.prob.domain;
        let tol = 1e-12 * (hi - lo).abs().max(1.0);
        for &x in xs {
            if x < lo - tol || x > hi + tol {
                return Err(SolverError::OutOfDomain { x, lo, hi });
            }
        }
        let curve = |source| SolverError::Curve { t, source };
        let shocks = self.shocks()?;
        let shock_positions: Vec<f64> = shocks.iter().map(|s| s.x).collect();
        let mut points = Vec::with_capacity(xs.len() + 2 * shocks.len());
        let on_shock = |x: f64| shocks.iter().find(|s| (s.x - x).abs() <= contact_tol(s.x));
        match &self.engine {
            Engine::Envelope(env) => {
                let snap = env.snapshot(&self.prob, &self.cfg, t)?;
                for &x in xs {
                    if let Some(s) = on_shock(x) {
                        points.push((x, s.u_left));
                        points.push((x, s.u_right));
                    } else {
                        points.push((x, snap.u_at(x, false).map_err(curve)?));
                    }
                }
            }
            Engine::Tracking(eng) => {
                let pieces = eng.live_pieces(&self.prob, &self.cfg, t)?;
                for &x in xs {
                    if let Some(s) = on_shock(x) {
                        points.push((x, s.u_left));
                        points.push((x, s.u_right));
                        continue;
                    }
                    let b = shock_positions.partition_point(|&p| p < x);
                    points.push((x, pieces[b].invert(x).map_err(curve)?.1));
                }
            }
        }
        Ok(WeakSolutionSample { t, points, shock_positions })
    }

    /// Uniform samples across the domain, with both states at each shock.
    pub fn sample_uniform(&self, count: usize) -> Result<WeakSolutionSample, SolverError> {
        let (lo, hi) = self.prob.domain;
        let mut xs: Vec<f64> = (0..count.max(2)).map(|k| lo + (hi - lo) * k as f64 / (count.max(2) - 1) as f64).collect();
        for s in self.shocks()? {
            if s.x > lo && s.x < hi {
                xs.push(s.x);
            }
        }
        xs.sort_by(f64::total_cmp);
        xs.dedup();
        self.sample(&xs)
    }

    /// Largest deviation of the solution curve from `exact(x, t)` over the
    /// whole tracked curve, `per_segment` points per segment.
    pub fn curve_error(&self, exact: impl Fn(f64, f64) -> f64, per_segment: usize) -> Result<f64, SolverError> {
        let t = self.t;
        let chains: Vec<CurveChain> = match &self.engine {
            Engine::Envelope(env) => vec![env.snapshot(&self.prob, &self.cfg, t)?.chain],
            Engine::Tracking(eng) => (0..eng.branches.len()).map(|b| eng.branch_chain(&self.prob, &self.cfg, t, b)).collect::<Result<_, _>>()?,
        };
        let mut worst = 0.0_f64;
        for chain in &chains {
            for seg in &chain.segments {
                for k in 0..=per_segment {
                    let p = seg.point(k as f64 / per_segment as f64);
                    worst = worst.max((p.u - exact(p.x, t)).abs());
                }
            }
        }
        Ok(worst)
    }

    /// The characteristic nodes currently carried, at the current time.
    pub fn nodes(&self) -> Result<Vec<Node>, SolverError> {
        match &self.engine {
            Engine::Envelope(env) => advance_all(&self.prob, &env.nodes, self.t).map_err(|source| SolverError::Char { t: self.t, source }),
            Engine::Tracking(eng) => Ok(eng.nodes.clone()),
        }
    }
}

/// Nodes of a problem at `t = 0` with every jump seeded as a connector.
pub fn seed_all_connectors(prob: &Problem, n_nodes: usize) -> Result<Vec<Node>, SolverError> {
    if n_nodes < 2 {
        return Err(SolverError::Config(format!("n_nodes must be at least 2, got {n_nodes}")));
    }
    Ok(seed(prob, n_nodes, 1, false)?.nodes)
}

/// Moves nodes to `t_target` with fixed steps of at most `dt` (exactly when
/// the problem is homogeneous).
pub fn flow_nodes(prob: &Problem, nodes: &[Node], t_target: f64, dt: f64) -> Result<Vec<Node>, SolverError> {
    let mut cur = nodes.to_vec();
    let t0 = cur.first().map_or(0.0, |n| n.st.t);
    let steps = (((t_target - t0) / dt).ceil() as usize).max(1);
    for k in 1..=steps {
        let tau = t0 + (t_target - t0) * k as f64 / steps as f64;
        cur = advance_all(prob, &cur, tau).map_err(|source| SolverError::Char { t: tau, source })?;
    }
    Ok(cur)
}

/// Label-parametrized chain through nodes (all treated as knots).
pub fn node_chain(nodes: &[Node], param: Parametrization) -> Result<CurveChain, SolverError> {
    let t = nodes.first().map_or(0.0, |n| n.st.t);
    let knots: Vec<ChainNode> = nodes.iter().map(Node::knot).collect();
    Ok(chain_from_knots(&knots, None, param, t).map_err(|source| SolverError::Char { t, source })?.chain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog;

    fn cfg(n: usize, dt: f64) -> SolverConfig {
        SolverConfig { n_nodes: n, dt, ..SolverConfig::default() }
    }

    #[test]
    fn one_node_per_piece_is_rejected() {
        assert!(matches!(Solver::initialize(catalog::sine_burgers(), cfg(1, 0.1)), Err(SolverError::Config(_))));
    }

    #[test]
    fn sine_initial_state_has_no_shock() {
        let s = Solver::initialize(catalog::sine_burgers(), cfg(20, 0.1)).unwrap();
        assert!(s.shocks().unwrap().is_empty());
        let x = 1.0;
        let v = s.sample(&[x]).unwrap();
        assert!((v.points[0].1 - x.sin()).abs() < 1e-5);
    }

    #[test]
    fn three_states_start_with_two_shocks() {
        let s = Solver::initialize(catalog::three_state_collision(), cfg(10, 0.1)).unwrap();
        let shocks = s.shocks().unwrap();
        assert_eq!(shocks.len(), 2);
        assert_eq!((shocks[0].x, shocks[1].x), (2.0, 2.5));
        assert_eq!(s.sample(&[2.25]).unwrap().points[0].1, 0.5);
    }

    #[test]
    fn advancing_to_now_is_a_no_op() {
        let mut s = Solver::initialize(catalog::three_state_collision(), cfg(10, 0.1)).unwrap();
        s.advance(0.0).unwrap();
        assert_eq!(s.time(), 0.0);
        assert_eq!(s.diagnostics().steps, 0);
    }

    #[test]
    fn zero_data_conserves_trivially() {
        let mut p = catalog::sine_burgers();
        for piece in &mut p.pieces {
            piece.g = "0".parse().unwrap();
            piece.dg = "0".parse().unwrap();
        }
        let mut s = Solver::initialize(p, cfg(10, 0.25)).unwrap();
        s.advance(1.0).unwrap();
        assert_eq!(s.conservation_report().unwrap(), 0.0);
    }
}
