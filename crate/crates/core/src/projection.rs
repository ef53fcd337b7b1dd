//! Shock location by equal-area projection.
//!
//! A monotone increasing run of the solution curve is a sheet `x -> (u, P)`
//! where `P` is the signed area from the chain start, so `dP/dx = u`. Two
//! sheets carry an equal-area cut at the level `X` where their `P` agree.

use thiserror::Error;

use crate::characteristics::Problem;
use crate::curve::{BezierSegment, ChainParam, CurveChain, CurveError, Run, Vec2, GAUSS3};
use crate::expr::ExprError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EqualAreaResult {
    pub s1: ChainParam,
    pub s2: ChainParam,
    pub x_star: f64,
    pub u_left: f64,
    pub u_right: f64,
    /// Signed lobe area left at the solution.
    pub lobe_residual: f64,
}

#[derive(Debug, Error)]
pub enum ProjectionError {
    #[error("the curve is not overturned")]
    NoOverturn,
    #[error("lobe area does not change sign on [{lo}, {hi}]; the grid is probably too coarse")]
    NoBracket { lo: f64, hi: f64 },
    #[error("equal-area iteration stalled with lobe residual {residual:e}")]
    NoConvergence { residual: f64 },
    #[error("chains do not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Curve(#[from] CurveError),
}

/// Relative lobe-area tolerance of the equal-area solve.
pub const AREA_TOL: f64 = 1e-14;
const MAX_ITER: usize = 200;

/// Point on a sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SheetPoint {
    pub param: ChainParam,
    pub u: f64,
    pub area: f64,
}

/// The monotone runs of a chain together with its cumulative areas.
#[derive(Debug, Clone)]
pub struct Sheets<'a> {
    pub chain: &'a CurveChain,
    pub runs: Vec<Run>,
    prefix: Vec<f64>,
    area_scale: f64,
}

impl<'a> Sheets<'a> {
    pub fn new(chain: &'a CurveChain) -> Self {
        let runs = chain.runs();
        let prefix = chain.prefix_areas();
        let area_scale = area_scale(chain);
        Sheets { chain, runs, prefix, area_scale }
    }

    pub fn eval(&self, run: usize, x: f64) -> Result<SheetPoint, CurveError> {
        let inv = self.chain.invert_run(&self.runs[run], x)?;
        Ok(SheetPoint { param: inv.param, u: inv.u, area: self.chain.cumulative_area(&self.prefix, inv.param) })
    }

    /// Sorted abscissa span of a run.
    pub fn span(&self, run: usize) -> (f64, f64) {
        let (a, b) = self.chain.run_x_span(&self.runs[run]);
        (a.min(b), a.max(b))
    }

    pub fn area_scale(&self) -> f64 {
        self.area_scale
    }

    fn increasing_before(&self, run: usize) -> Option<usize> {
        (0..run).rev().find(|&i| self.runs[i].sign > 0)
    }

    fn increasing_after(&self, run: usize) -> Option<usize> {
        (run + 1..self.runs.len()).find(|&i| self.runs[i].sign > 0)
    }

    /// Solves `P_right(X) = P_left(X)` for the level `X` inside the common span.
    pub fn equal_area(&self, left: usize, right: usize) -> Result<EqualAreaResult, ProjectionError> {
        let (la, lb) = self.span(left);
        let (ra, rb) = self.span(right);
        self.equal_area_on(left, right, la.max(ra), lb.min(rb))
    }

    /// Equal-area level of two sheets, bracketed in `[lo, hi]`.
    pub fn equal_area_on(&self, left: usize, right: usize, lo: f64, hi: f64) -> Result<EqualAreaResult, ProjectionError> {
        if !(lo <= hi) {
            return Err(ProjectionError::NoBracket { lo, hi });
        }
        let gap = |x: f64| -> Result<(f64, SheetPoint, SheetPoint), CurveError> {
            let a = self.eval(left, x)?;
            let b = self.eval(right, x)?;
            Ok((b.area - a.area, a, b))
        };
        let result = |x: f64, d: f64, a: SheetPoint, b: SheetPoint| EqualAreaResult {
            s1: a.param,
            s2: b.param,
            x_star: x,
            u_left: a.u,
            u_right: b.u,
            lobe_residual: d,
        };
        let tol = AREA_TOL * self.area_scale;
        let (mut lo, mut hi) = (lo, hi);
        let (d_lo, a, b) = gap(lo)?;
        if d_lo.abs() <= tol {
            return Ok(result(lo, d_lo, a, b));
        }
        let (d_hi, a, b) = gap(hi)?;
        if d_hi.abs() <= tol {
            return Ok(result(hi, d_hi, a, b));
        }
        if d_lo.signum() == d_hi.signum() {
            return Err(ProjectionError::NoBracket { lo, hi });
        }
        let lo_sign = d_lo.signum();
        let mut x = lo + d_lo / (d_lo - d_hi) * (hi - lo);
        let mut best: Option<(f64, f64, SheetPoint, SheetPoint)> = None;
        for _ in 0..MAX_ITER {
            let (d, a, b) = gap(x)?;
            if best.is_none_or(|bst| d.abs() < bst.1.abs()) {
                best = Some((x, d, a, b));
            }
            if d.abs() <= tol {
                return Ok(result(x, d, a, b));
            }
            if d.signum() == lo_sign {
                lo = x;
            } else {
                hi = x;
            }
            if hi - lo <= 4.0 * f64::EPSILON * x.abs().max(1.0) {
                break;
            }
            // dP/dX = u on each sheet.
            let slope = b.u - a.u;
            let newton = x - d / slope;
            x = if slope != 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        }
        match best {
            Some((x, d, a, b)) if d.abs() <= 1e3 * tol => Ok(result(x, d, a, b)),
            Some((_, d, _, _)) => Err(ProjectionError::NoConvergence { residual: d }),
            None => Err(ProjectionError::NoConvergence { residual: f64::NAN }),
        }
    }
}

fn area_scale(chain: &CurveChain) -> f64 {
    let (x_lo, x_hi) = chain.x_range().unwrap_or((0.0, 1.0));
    let u_max = chain
        .segments
        .iter()
        .flat_map(|s| [s.a.u, s.c1.u, s.c2.u, s.d.u])
        .fold(0.0_f64, |m, u| m.max(u.abs()));
    ((x_hi - x_lo) * u_max).max(f64::MIN_POSITIVE)
}

/// Equal-area cut of the overturn nearest to `hint`, between the increasing
/// runs on either side of it.
pub fn find_equal_area(chain: &CurveChain, hint: ChainParam) -> Result<EqualAreaResult, ProjectionError> {
    let sheets = Sheets::new(chain);
    let s = hint.global();
    let fold = sheets
        .runs
        .iter()
        .enumerate()
        .filter(|(_, r)| r.sign < 0)
        .min_by(|(_, a), (_, b)| {
            let da = (a.start.global() - s).max(s - a.end.global()).max(0.0);
            let db = (b.start.global() - s).max(s - b.end.global()).max(0.0);
            da.total_cmp(&db)
        })
        .map(|(i, _)| i)
        .ok_or(ProjectionError::NoOverturn)?;
    let left = sheets.increasing_before(fold).ok_or(ProjectionError::NoOverturn)?;
    let right = sheets.increasing_after(fold).ok_or(ProjectionError::NoOverturn)?;
    sheets.equal_area(left, right)
}

/// Shock speed by forward difference of two projections.
pub fn measure_shock_speed(first: &EqualAreaResult, second: &EqualAreaResult, dt: f64) -> f64 {
    (second.x_star - first.x_star) / dt
}

/// Curve with abscissae from `new_x` and heights from `old_u`, segment by
/// segment. Both chains must share labels and per-segment parametrization.
pub fn mixed_chain(old_u: &CurveChain, new_x: &CurveChain) -> Result<CurveChain, ProjectionError> {
    if old_u.len() != new_x.len() {
        return Err(ProjectionError::Mismatch(format!("{} vs {} segments", old_u.len(), new_x.len())));
    }
    if old_u.node_params != new_x.node_params {
        return Err(ProjectionError::Mismatch("node labels differ".into()));
    }
    let mix = |x: Vec2, u: Vec2| Vec2::new(x.x, u.u);
    let segments = old_u
        .segments
        .iter()
        .zip(&new_x.segments)
        .map(|(o, n)| BezierSegment::from_control_points(mix(n.a, o.a), mix(n.c1, o.c1), mix(n.c2, o.c2), mix(n.d, o.d)))
        .collect();
    Ok(CurveChain::new(segments, new_x.node_params.clone(), new_x.time_stamp)?)
}

/// Modified equal-area cut: heights frozen at the old time, abscissae moved
/// to the new one. Shock states are read from the new chain.
pub fn find_modified_equal_area(old_u: &CurveChain, new_x: &CurveChain) -> Result<EqualAreaResult, ProjectionError> {
    let mixed = mixed_chain(old_u, new_x)?;
    let (hint, _) = mixed.steepest_overturn().ok_or(ProjectionError::NoOverturn)?;
    let mut res = find_equal_area(&mixed, hint)?;
    res.u_left = new_x.point(res.s1).u;
    res.u_right = new_x.point(res.s2).u;
    Ok(res)
}

/// `∫ Q x_s ds / (u(s1) - u(s2))` over `[s1, s2]`: the speed bias a naive
/// equal-area projection picks up from the source.
pub fn equal_area_residual_with_source(
    chain: &CurveChain,
    prob: &Problem,
    s1: ChainParam,
    s2: ChainParam,
) -> Result<f64, ExprError> {
    if prob.is_homogeneous() {
        return Ok(0.0);
    }
    let t = chain.time_stamp;
    let mut integral = 0.0;
    for seg_idx in s1.seg..=s2.seg {
        let seg = &chain.segments[seg_idx];
        let lo = if seg_idx == s1.seg { s1.t } else { 0.0 };
        let hi = if seg_idx == s2.seg { s2.t } else { 1.0 };
        const SUB: usize = 4;
        let h = (hi - lo) / SUB as f64;
        for k in 0..SUB {
            let a = lo + h * k as f64;
            for &(node, w) in &GAUSS3 {
                let s = a + h * node;
                let p = seg.point(s);
                integral += w * h * prob.q(p.u, p.x, t)? * seg.derivative(s).x;
            }
        }
    }
    let du = chain.point(s1).u - chain.point(s2).u;
    Ok(integral / du)
}

/// One piece of the lower envelope: the sheet of `run` over `[x_lo, x_hi]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePiece {
    pub run: usize,
    pub x_lo: f64,
    pub x_hi: f64,
}

/// Weak solution of a homogeneous problem read off one chain: for each `x`
/// the sheet with the least cumulative area, with shocks where the
/// selection switches.
#[derive(Debug, Clone)]
pub struct Envelope {
    pub runs: Vec<Run>,
    pub pieces: Vec<EnvelopePiece>,
    pub shocks: Vec<EqualAreaResult>,
}

impl Envelope {
    /// Piece governing `x` (the left piece at a switch).
    pub fn piece_at(&self, x: f64) -> Option<&EnvelopePiece> {
        let idx = self.pieces.partition_point(|p| p.x_hi < x);
        self.pieces.get(idx).filter(|p| p.x_lo <= x)
    }

    /// Signed area `∫ u dx` under the envelope.
    pub fn area(&self, sheets: &Sheets) -> Result<f64, CurveError> {
        let mut total = 0.0;
        for p in &self.pieces {
            total += sheets.eval(p.run, p.x_hi)?.area - sheets.eval(p.run, p.x_lo)?.area;
        }
        Ok(total)
    }
}

pub fn lower_envelope(sheets: &Sheets) -> Result<Envelope, ProjectionError> {
    let inc: Vec<usize> = (0..sheets.runs.len())
        .filter(|&i| {
            let (a, b) = sheets.span(i);
            sheets.runs[i].sign > 0 && b > a
        })
        .collect();
    let mut cuts: Vec<f64> = inc.iter().flat_map(|&i| [sheets.span(i).0, sheets.span(i).1]).collect();
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();
    let mut raw: Vec<EnvelopePiece> = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        let active: Vec<usize> = inc
            .iter()
            .copied()
            .filter(|&i| {
                let (a, b) = sheets.span(i);
                a <= lo && b >= hi
            })
            .collect();
        if active.is_empty() {
            continue;
        }
        let q = lowest(sheets, &active, lo)?;
        let r = lowest(sheets, &active, hi)?;
        resolve(sheets, &active, lo, hi, q, r, 0, &mut raw)?;
    }
    let mut pieces: Vec<EnvelopePiece> = Vec::new();
    for p in raw {
        match pieces.last_mut() {
            Some(last) if last.run == p.run => last.x_hi = p.x_hi,
            _ => pieces.push(p),
        }
    }
    let u_scale = sheets.area_scale.max(1.0);
    let mut shocks = Vec::new();
    for w in pieces.windows(2) {
        let x = w[0].x_hi;
        let a = sheets.eval(w[0].run, x)?;
        let b = sheets.eval(w[1].run, w[1].x_lo)?;
        if a.u - b.u > 1e-12 * u_scale {
            shocks.push(EqualAreaResult {
                s1: a.param,
                s2: b.param,
                x_star: x,
                u_left: a.u,
                u_right: b.u,
                lobe_residual: b.area - a.area,
            });
        }
    }
    Ok(Envelope { runs: sheets.runs.clone(), pieces, shocks })
}

/// Active sheet with the least area at `x`; ties go to the smaller height.
fn lowest(sheets: &Sheets, active: &[usize], x: f64) -> Result<usize, CurveError> {
    let tol = AREA_TOL * sheets.area_scale;
    let mut best: Option<(usize, SheetPoint)> = None;
    for &i in active {
        let p = sheets.eval(i, x)?;
        best = match best {
            None => Some((i, p)),
            Some((j, q)) => {
                if p.area < q.area - tol || (p.area <= q.area + tol && p.u < q.u) {
                    Some((i, p))
                } else {
                    Some((j, q))
                }
            }
        };
    }
    Ok(best.map(|b| b.0).expect("active set is non-empty"))
}

#[allow(clippy::too_many_arguments)]
fn resolve(
    sheets: &Sheets,
    active: &[usize],
    lo: f64,
    hi: f64,
    q: usize,
    r: usize,
    depth: usize,
    out: &mut Vec<EnvelopePiece>,
) -> Result<(), ProjectionError> {
    if q == r {
        out.push(EnvelopePiece { run: q, x_lo: lo, x_hi: hi });
        return Ok(());
    }
    let cut = match sheets.equal_area_on(q, r, lo, hi) {
        Ok(res) => res.x_star,
        // Both ends tie within tolerance: switch at the left end.
        Err(ProjectionError::NoBracket { .. }) => lo,
        Err(e) => return Err(e),
    };
    let m = lowest(sheets, active, cut)?;
    if m == q || m == r || depth >= 32 {
        out.push(EnvelopePiece { run: q, x_lo: lo, x_hi: cut });
        out.push(EnvelopePiece { run: r, x_lo: cut, x_hi: hi });
        return Ok(());
    }
    resolve(sheets, active, lo, cut, q, m, depth + 1, out)?;
    resolve(sheets, active, cut, hi, m, r, depth + 1, out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::characteristics::{chain_from_knots, ChainNode, Parametrization};

    /// Knots of the sheared line `(s + c s^3 ... )`: an odd S about the origin.
    fn s_curve(n: usize) -> CurveChain {
        let knots: Vec<ChainNode> = (0..=n)
            .map(|i| {
                let s = -1.0 + 2.0 * i as f64 / n as f64;
                // x = s^3 - 0.5 s, u = -s: odd, overturned near 0.
                ChainNode { s, pos: Vec2::new(s * s * s - 0.5 * s, -s), tan: Vec2::new(3.0 * s * s - 0.5, -1.0) }
            })
            .collect();
        chain_from_knots(&knots, None, Parametrization::Label, 0.0).unwrap().chain
    }

    #[test]
    fn symmetric_s_curve_cuts_at_centre() {
        let chain = s_curve(16);
        let (hint, _) = chain.steepest_overturn().unwrap();
        let res = find_equal_area(&chain, hint).unwrap();
        assert!(res.x_star.abs() < 1e-12, "{res:?}");
        assert!(res.u_left > res.u_right);
        assert!((res.u_left + res.u_right).abs() < 1e-12);
    }

    #[test]
    fn monotone_chain_has_no_overturn() {
        let knots: Vec<ChainNode> = (0..5)
            .map(|i| ChainNode { s: i as f64, pos: Vec2::new(i as f64, 1.0), tan: Vec2::new(1.0, 0.0) })
            .collect();
        let chain = chain_from_knots(&knots, None, Parametrization::Label, 0.0).unwrap().chain;
        assert!(matches!(find_equal_area(&chain, ChainParam::new(1, 0.5)), Err(ProjectionError::NoOverturn)));
        let env = lower_envelope(&Sheets::new(&chain)).unwrap();
        assert_eq!(env.pieces.len(), 1);
        assert!(env.shocks.is_empty());
    }

    #[test]
    fn envelope_agrees_with_direct_projection() {
        let chain = s_curve(24);
        let sheets = Sheets::new(&chain);
        let env = lower_envelope(&sheets).unwrap();
        assert_eq!(env.shocks.len(), 1);
        let (hint, _) = chain.steepest_overturn().unwrap();
        let direct = find_equal_area(&chain, hint).unwrap();
        assert!((env.shocks[0].x_star - direct.x_star).abs() < 1e-13);
    }

    #[test]
    fn unchanged_heights_reduce_to_plain_projection() {
        let chain = s_curve(20);
        let plain = find_equal_area(&chain, chain.steepest_overturn().unwrap().0).unwrap();
        let modified = find_modified_equal_area(&chain, &chain).unwrap();
        assert_eq!(plain.x_star, modified.x_star);
        assert!(matches!(find_modified_equal_area(&s_curve(10), &chain), Err(ProjectionError::Mismatch(_))));
    }

    #[test]
    fn stationary_shock_speed_is_zero() {
        let chain = s_curve(20);
        let a = find_equal_area(&chain, chain.steepest_overturn().unwrap().0).unwrap();
        assert_eq!(measure_shock_speed(&a, &a, 0.1), 0.0);
    }
}
