//! Cubic parametric Bézier segments in the (x, u) plane.
//!
//! A segment is stored both as control points and as the Hermite data that
//! produced it: endpoint tangents `alpha`, `beta` and magnitudes `r1`, `r2`
//! with `C1 = A + r1/3 * alpha` and `C2 = D - r2/3 * beta`. The signed area
//! `∫ B2 B1' dt` is the conserved quantity; it is evaluated with three-point
//! Gauss–Legendre quadrature, which is exact for the degree-5 integrand.

use std::ops::{Add, Mul, Neg, Sub};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("parameter {0} outside [0, 1]")]
    ParameterOutOfRange(f64),
    #[error("horizontal tangent component vanishes; refine the grid")]
    VanishingHorizontalTangent,
    #[error("area-preserving coefficient {coefficient:e} is degenerate (scale {scale:e})")]
    DegenerateArea { coefficient: f64, scale: f64 },
    #[error("query x = {x} outside chain range [{lo}, {hi}]")]
    OutOfRange { x: f64, lo: f64, hi: f64 },
    #[error("segment {0} is not x-monotone")]
    NonMonotone(usize),
    #[error("chain is empty")]
    EmptyChain,
    #[error("segment {0} does not start where the previous one ends")]
    Disconnected(usize),
}

/// A point or vector in the (x, u) plane.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Vec2 {
    pub x: f64,
    pub u: f64,
}

impl Vec2 {
    pub const fn new(x: f64, u: f64) -> Self {
        Vec2 { x, u }
    }

    /// Scalar cross product `self.x * other.u - self.u * other.x`.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.u - self.u * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.u)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.u + o.u)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.u - o.u)
    }
}

impl Mul<Vec2> for f64 {
    type Output = Vec2;
    fn mul(self, v: Vec2) -> Vec2 {
        Vec2::new(self * v.x, self * v.u)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.u)
    }
}

/// Three-point Gauss–Legendre nodes and weights on [0, 1].
pub(crate) const GAUSS3: [(f64, f64); 3] = [
    (0.112_701_665_379_258_31, 5.0 / 18.0),
    (0.5, 8.0 / 18.0),
    (0.887_298_334_620_741_7, 5.0 / 18.0),
];

/// Relative threshold below which the area-preserving solve is degenerate.
pub const DEGENERATE_AREA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BezierSegment {
    pub a: Vec2,
    pub c1: Vec2,
    pub c2: Vec2,
    pub d: Vec2,
    pub alpha: Vec2,
    pub beta: Vec2,
    pub r1: f64,
    pub r2: f64,
}

impl BezierSegment {
    pub fn new(a: Vec2, d: Vec2, alpha: Vec2, beta: Vec2, r1: f64, r2: f64) -> Self {
        BezierSegment {
            a,
            c1: a + (r1 / 3.0) * alpha,
            c2: d - (r2 / 3.0) * beta,
            d,
            alpha,
            beta,
            r1,
            r2,
        }
    }

    /// Segment from raw control points; the tangents are the endpoint
    /// derivatives and both magnitudes are one.
    pub fn from_control_points(a: Vec2, c1: Vec2, c2: Vec2, d: Vec2) -> Self {
        BezierSegment { a, c1, c2, d, alpha: 3.0 * (c1 - a), beta: 3.0 * (d - c2), r1: 1.0, r2: 1.0 }
    }

    /// Straight segment traversed at constant speed.
    pub fn line(a: Vec2, d: Vec2) -> Self {
        let dir = d - a;
        BezierSegment::new(a, d, dir, dir, 1.0, 1.0)
    }

    /// Same geometry data with a different end magnitude.
    pub fn with_r2(&self, r2: f64) -> Self {
        BezierSegment::new(self.a, self.d, self.alpha, self.beta, self.r1, r2)
    }

    /// Bernstein evaluation without range checking.
    pub fn point(&self, t: f64) -> Vec2 {
        let s = 1.0 - t;
        let b0 = s * s * s;
        let b1 = 3.0 * s * s * t;
        let b2 = 3.0 * s * t * t;
        let b3 = t * t * t;
        Vec2::new(
            b0 * self.a.x + b1 * self.c1.x + b2 * self.c2.x + b3 * self.d.x,
            b0 * self.a.u + b1 * self.c1.u + b2 * self.c2.u + b3 * self.d.u,
        )
    }

    pub fn derivative(&self, t: f64) -> Vec2 {
        let s = 1.0 - t;
        let p = self.c1 - self.a;
        let q = self.c2 - self.c1;
        let r = self.d - self.c2;
        3.0 * ((s * s) * p + (2.0 * s * t) * q + (t * t) * r)
    }

    pub fn eval(&self, t: f64) -> Result<Vec2, CurveError> {
        check_unit(t)?;
        Ok(match t {
            0.0 => self.a,
            1.0 => self.d,
            _ => self.point(t),
        })
    }

    pub fn eval_derivative(&self, t: f64) -> Result<Vec2, CurveError> {
        check_unit(t)?;
        Ok(self.derivative(t))
    }

    /// Coefficients `(a, b, c)` of `B1'(t) = a t^2 + b t + c`.
    fn x_slope_poly(&self) -> (f64, f64, f64) {
        let p = self.c1.x - self.a.x;
        let q = self.c2.x - self.c1.x;
        let r = self.d.x - self.c2.x;
        (3.0 * (p - 2.0 * q + r), 6.0 * (q - p), 3.0 * p)
    }

    /// Minimum of `B1'(t)` on `[lo, hi]` and where it is attained.
    pub fn min_x_slope_on(&self, lo: f64, hi: f64) -> (f64, f64) {
        let (a, b, c) = self.x_slope_poly();
        let f = |t: f64| (a * t + b) * t + c;
        let mut best = (lo, f(lo));
        let end = (hi, f(hi));
        if end.1 < best.1 {
            best = end;
        }
        if a > 0.0 {
            let v = -b / (2.0 * a);
            if v > lo && v < hi && f(v) < best.1 {
                best = (v, f(v));
            }
        }
        best
    }

    /// Minimiser and minimum of the horizontal speed `B1'` over the segment.
    /// A negative minimum means the segment overturns.
    pub fn min_x_slope(&self) -> (f64, f64) {
        self.min_x_slope_on(0.0, 1.0)
    }

    /// Roots of `B1'` strictly inside (0, 1), ascending.
    pub fn x_slope_roots(&self) -> Vec<f64> {
        let (a, b, c) = self.x_slope_poly();
        let scale = a.abs() + b.abs() + c.abs();
        let mut roots = Vec::with_capacity(2);
        if scale == 0.0 {
            return roots;
        }
        if a.abs() <= 1e-14 * scale {
            if b != 0.0 {
                roots.push(-c / b);
            }
        } else {
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                let q = -0.5 * (b + b.signum() * sq);
                if q != 0.0 {
                    roots.push(q / a);
                    roots.push(c / q);
                } else {
                    roots.push(0.0);
                }
            }
        }
        roots.retain(|r| *r > 0.0 && *r < 1.0);
        roots.sort_by(f64::total_cmp);
        roots.dedup();
        roots
    }

    /// Signed area `∫_lo^hi B2 B1' dt`, exact by three-point Gauss.
    pub fn partial_area(&self, lo: f64, hi: f64) -> f64 {
        let h = hi - lo;
        GAUSS3
            .iter()
            .map(|&(node, w)| {
                let t = lo + h * node;
                w * self.point(t).u * self.derivative(t).x
            })
            .sum::<f64>()
            * h
    }

    pub fn parametric_area(&self) -> f64 {
        self.partial_area(0.0, 1.0)
    }

    /// Closed-form area from the Hermite data (cross-check for the quadrature).
    pub fn closed_form_area(&self) -> f64 {
        let d = self.d - self.a;
        hermite_area_terms(d, self.alpha, self.beta, self.r1, self.r2) + self.a.u * d.x
    }

    pub fn x_range(&self) -> (f64, f64) {
        let (lo, hi) = if self.a.x <= self.d.x { (self.a.x, self.d.x) } else { (self.d.x, self.a.x) };
        let mut range = (lo, hi);
        for t in self.x_slope_roots() {
            let x = self.point(t).x;
            range.0 = range.0.min(x);
            range.1 = range.1.max(x);
        }
        range
    }

    fn scale(&self) -> f64 {
        (self.d - self.a).norm() + (self.c1 - self.a).norm() + (self.d - self.c2).norm()
    }
}

fn check_unit(t: f64) -> Result<(), CurveError> {
    if (0.0..=1.0).contains(&t) {
        Ok(())
    } else {
        Err(CurveError::ParameterOutOfRange(t))
    }
}

/// Area of a segment translated so that `A` is the origin.
fn hermite_area_terms(d: Vec2, alpha: Vec2, beta: Vec2, r1: f64, r2: f64) -> f64 {
    r1 * r2 / 60.0 * alpha.cross(beta) + r1 / 10.0 * d.cross(alpha) + r2 / 10.0 * beta.cross(d)
        + d.x * d.u / 2.0
}

/// Parametric Hermite segment whose horizontal component reproduces the
/// standard cubic Hermite in x: `r1 = Δx / tan0.x`, `r2 = Δx / tan1.x`.
pub fn hermite_segment(p0: Vec2, p1: Vec2, tan0: Vec2, tan1: Vec2) -> Result<BezierSegment, CurveError> {
    if tan0.x == 0.0 || tan1.x == 0.0 {
        return Err(CurveError::VanishingHorizontalTangent);
    }
    let dx = p1.x - p0.x;
    Ok(BezierSegment::new(p0, p1, tan0, tan1, dx / tan0.x, dx / tan1.x))
}

/// Hermite segment in the curve's own parametrisation: both magnitudes
/// equal the parameter spacing `h`.
pub fn parametric_segment(p0: Vec2, p1: Vec2, tan0: Vec2, tan1: Vec2, h: f64) -> BezierSegment {
    BezierSegment::new(p0, p1, tan0, tan1, h, h)
}

/// Solves the area condition for `r2` with `r1` fixed.
pub fn solve_area_preserving_r2(
    a: Vec2,
    d: Vec2,
    alpha: Vec2,
    beta: Vec2,
    r1: f64,
    target_area: f64,
) -> Result<f64, CurveError> {
    let dd = d - a;
    let coefficient = r1 / 60.0 * alpha.cross(beta) + beta.cross(dd) / 10.0;
    let scale = r1.abs() * alpha.norm() * beta.norm() / 60.0 + beta.norm() * dd.norm() / 10.0;
    if !(coefficient.abs() > DEGENERATE_AREA_TOL * scale) {
        return Err(CurveError::DegenerateArea { coefficient, scale });
    }
    let rest = r1 / 10.0 * dd.cross(alpha) + dd.x * dd.u / 2.0;
    Ok((target_area - a.u * dd.x - rest) / coefficient)
}

/// Area-preserving segment built on `base`'s `r1`.
///
/// The solved `r2` is rejected when it is not positive or when it overturns a
/// segment whose base is monotone in x. The base segment is then returned
/// unchanged together with its area defect `|area - target|`.
pub fn area_preserving_segment(base: &BezierSegment, target_area: f64) -> (BezierSegment, Option<f64>) {
    if let Ok(r2) = solve_area_preserving_r2(base.a, base.d, base.alpha, base.beta, base.r1, target_area) {
        let seg = base.with_r2(r2);
        if r2 > 0.0 && (base.min_x_slope().1 < 0.0 || seg.min_x_slope().1 >= 0.0) {
            return (seg, None);
        }
    }
    (*base, Some((base.parametric_area() - target_area).abs()))
}

/// Position on a chain: segment index and local parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainParam {
    pub seg: usize,
    pub t: f64,
}

impl ChainParam {
    pub fn new(seg: usize, t: f64) -> Self {
        ChainParam { seg, t }
    }

    /// Global parameter `seg + t`, for ordering.
    pub fn global(self) -> f64 {
        self.seg as f64 + self.t
    }

    pub fn from_global(s: f64, segments: usize) -> Self {
        let seg = (s.floor().max(0.0) as usize).min(segments.saturating_sub(1));
        ChainParam { seg, t: (s - seg as f64).clamp(0.0, 1.0) }
    }

    pub fn le(self, other: ChainParam) -> bool {
        self.global() <= other.global()
    }
}

/// Maximal parameter interval on which the horizontal speed keeps one sign.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Run {
    pub start: ChainParam,
    pub end: ChainParam,
    /// +1 increasing in x, -1 overturned, 0 vertical.
    pub sign: i8,
}

impl Run {
    pub fn contains(&self, p: ChainParam) -> bool {
        self.start.global() <= p.global() && p.global() <= self.end.global()
    }
}

/// An inverted query on a chain.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Inversion {
    pub param: ChainParam,
    pub u: f64,
}

/// Ordered piecewise Bézier curve: one smooth branch of the solution.
///
/// `node_params` holds the Lagrangian labels of the knots. Labels increase
/// along each smooth arc; where arcs meet (kinks, jump connectors) the label
/// may repeat.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CurveChain {
    pub segments: Vec<BezierSegment>,
    pub node_params: Vec<f64>,
    pub time_stamp: f64,
}

impl CurveChain {
    pub fn new(segments: Vec<BezierSegment>, node_params: Vec<f64>, time_stamp: f64) -> Result<Self, CurveError> {
        for i in 1..segments.len() {
            if segments[i].a != segments[i - 1].d {
                return Err(CurveError::Disconnected(i));
            }
        }
        Ok(CurveChain { segments, node_params, time_stamp })
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn start(&self) -> ChainParam {
        ChainParam::new(0, 0.0)
    }

    pub fn end(&self) -> ChainParam {
        ChainParam::new(self.segments.len().saturating_sub(1), 1.0)
    }

    pub fn point(&self, p: ChainParam) -> Vec2 {
        self.segments[p.seg].point(p.t)
    }

    pub fn derivative(&self, p: ChainParam) -> Vec2 {
        self.segments[p.seg].derivative(p.t)
    }

    pub fn x_range(&self) -> Option<(f64, f64)> {
        self.segments.iter().map(BezierSegment::x_range).reduce(|a, b| (a.0.min(b.0), a.1.max(b.1)))
    }

    pub fn total_area(&self) -> f64 {
        self.segments.iter().map(BezierSegment::parametric_area).sum()
    }

    /// Signed area `∫ u x_s ds` between two chain positions (`from <= to`).
    pub fn area_between(&self, from: ChainParam, to: ChainParam) -> f64 {
        if from.seg == to.seg {
            return self.segments[from.seg].partial_area(from.t, to.t);
        }
        let mut area = self.segments[from.seg].partial_area(from.t, 1.0);
        for seg in &self.segments[from.seg + 1..to.seg] {
            area += seg.parametric_area();
        }
        area + self.segments[to.seg].partial_area(0.0, to.t)
    }

    /// Monotone runs of the horizontal component, in order.
    pub fn runs(&self) -> Vec<Run> {
        let mut runs: Vec<Run> = Vec::new();
        for (i, seg) in self.segments.iter().enumerate() {
            // Zero-length segments (repeated knots at kinks) join the current run.
            if seg.scale() == 0.0 {
                if let Some(last) = runs.last_mut() {
                    last.end = ChainParam::new(i, 1.0);
                }
                continue;
            }
            let scale = seg.scale();
            let mut cuts = vec![0.0];
            cuts.extend(seg.x_slope_roots());
            cuts.push(1.0);
            for w in cuts.windows(2) {
                let (lo, hi) = (w[0], w[1]);
                if hi <= lo {
                    continue;
                }
                let mid = seg.derivative(0.5 * (lo + hi)).x;
                let sign = if mid > 1e-13 * scale {
                    1
                } else if mid < -1e-13 * scale {
                    -1
                } else {
                    0
                };
                let start = ChainParam::new(i, lo);
                let end = ChainParam::new(i, hi);
                match runs.last_mut() {
                    Some(last) if last.sign == sign => last.end = end,
                    _ => runs.push(Run { start, end, sign }),
                }
            }
        }
        runs
    }

    /// Index of the run containing `p` (the later run at a shared boundary
    /// when `prefer_later`).
    pub fn run_index(&self, runs: &[Run], p: ChainParam, prefer_later: bool) -> Option<usize> {
        let s = p.global();
        let hits: Vec<usize> = runs
            .iter()
            .enumerate()
            .filter(|(_, r)| r.start.global() <= s && s <= r.end.global())
            .map(|(i, _)| i)
            .collect();
        if prefer_later {
            hits.last().copied()
        } else {
            hits.first().copied()
        }
    }

    /// Solves `x(s) = xq` for `s` in `[from, to]`, assuming `x` is
    /// non-decreasing there.
    pub fn invert_x_between(&self, from: ChainParam, to: ChainParam, xq: f64) -> Result<Inversion, CurveError> {
        if self.segments.is_empty() {
            return Err(CurveError::EmptyChain);
        }
        let x_lo = self.point(from).x;
        let x_hi = self.point(to).x;
        let tol = INVERT_TOL * (1.0 + xq.abs());
        if xq < x_lo - tol || xq > x_hi + tol {
            return Err(CurveError::OutOfRange { x: xq, lo: x_lo, hi: x_hi });
        }
        // Bracketing segment: first whose end reaches xq.
        let seg = from.seg + self.segments[from.seg..to.seg].partition_point(|s| s.d.x < xq);
        let lo = if seg == from.seg { from.t } else { 0.0 };
        let hi = if seg == to.seg { to.t } else { 1.0 };
        let t = invert_segment(&self.segments[seg], lo, hi, xq, 1.0)?;
        Ok(Inversion { param: ChainParam::new(seg, t), u: self.segments[seg].point(t).u })
    }

    /// Inverts `x(s) = xq` on a chain that is x-monotone over the whole query.
    pub fn invert_x(&self, xq: f64) -> Result<Inversion, CurveError> {
        if self.segments.is_empty() {
            return Err(CurveError::EmptyChain);
        }
        let x_lo = self.segments[0].a.x;
        let x_hi = self.segments[self.len() - 1].d.x;
        let tol = INVERT_TOL * (1.0 + xq.abs());
        if xq < x_lo - tol || xq > x_hi + tol {
            return Err(CurveError::OutOfRange { x: xq, lo: x_lo, hi: x_hi });
        }
        let idx = self.segments.partition_point(|s| s.d.x < xq).min(self.len() - 1);
        let seg = &self.segments[idx];
        if seg.min_x_slope().1 < 0.0 {
            return Err(CurveError::NonMonotone(idx));
        }
        let t = invert_segment(seg, 0.0, 1.0, xq, 1.0).map_err(|_| CurveError::NonMonotone(idx))?;
        Ok(Inversion { param: ChainParam::new(idx, t), u: seg.point(t).u })
    }
}

impl CurveChain {
    /// Running sums of segment areas; entry `k` is the area of segments `0..k`.
    pub fn prefix_areas(&self) -> Vec<f64> {
        let mut acc = Vec::with_capacity(self.segments.len() + 1);
        let mut total = 0.0;
        acc.push(0.0);
        for seg in &self.segments {
            total += seg.parametric_area();
            acc.push(total);
        }
        acc
    }

    /// Area from the chain start to `p`, given `prefix_areas`.
    pub fn cumulative_area(&self, prefix: &[f64], p: ChainParam) -> f64 {
        prefix[p.seg] + self.segments[p.seg].partial_area(0.0, p.t)
    }

    /// Abscissae at the start and end of a run.
    pub fn run_x_span(&self, run: &Run) -> (f64, f64) {
        (self.point(run.start).x, self.point(run.end).x)
    }

    /// Solves `x(s) = xq` inside a monotone run of either orientation.
    pub fn invert_run(&self, run: &Run, xq: f64) -> Result<Inversion, CurveError> {
        if run.sign == 0 {
            return Err(CurveError::NonMonotone(run.start.seg));
        }
        let orient = f64::from(run.sign);
        let (xa, xb) = self.run_x_span(run);
        let tol = INVERT_TOL * (1.0 + xq.abs());
        if orient * (xq - xa) < -tol || orient * (xq - xb) > tol {
            return Err(CurveError::OutOfRange { x: xq, lo: xa.min(xb), hi: xa.max(xb) });
        }
        // First segment of the run whose end reaches xq.
        let first = run.start.seg;
        let last = run.end.seg;
        let offset = self.segments[first..last]
            .partition_point(|s| orient * (s.d.x - xq) < 0.0);
        let seg = first + offset;
        let lo = if seg == first { run.start.t } else { 0.0 };
        let hi = if seg == last { run.end.t } else { 1.0 };
        let t = invert_segment(&self.segments[seg], lo, hi, xq.clamp(xa.min(xb), xa.max(xb)), orient)?;
        Ok(Inversion { param: ChainParam::new(seg, t), u: self.segments[seg].point(t).u })
    }

    /// Most negative horizontal speed on the chain, if any segment overturns.
    pub fn steepest_overturn(&self) -> Option<(ChainParam, f64)> {
        self.segments
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let (t, v) = s.min_x_slope();
                (ChainParam::new(i, t), v)
            })
            .filter(|(_, v)| *v < 0.0)
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Relative tolerance of horizontal inversion.
pub const INVERT_TOL: f64 = 1e-13;
const INVERT_MAX_ITER: usize = 100;

/// Safeguarded Newton for `B1(t) = xq` on `[lo, hi]`, where `orient * B1`
/// is non-decreasing.
fn invert_segment(seg: &BezierSegment, lo: f64, hi: f64, xq: f64, orient: f64) -> Result<f64, CurveError> {
    let tol = INVERT_TOL * (1.0 + xq.abs());
    let f = |t: f64| orient * (seg.point(t).x - xq);
    let (mut a, mut b) = (lo, hi);
    let fa = f(a);
    let fb = f(b);
    if fa.abs() <= tol {
        return Ok(a);
    }
    if fb.abs() <= tol {
        return Ok(b);
    }
    if fa > 0.0 || fb < 0.0 {
        let (x0, x1) = (seg.point(lo).x, seg.point(hi).x);
        return Err(CurveError::OutOfRange { x: xq, lo: x0.min(x1), hi: x0.max(x1) });
    }
    let mut t = a + (b - a) * (-fa / (fb - fa)).clamp(0.0, 1.0);
    for _ in 0..INVERT_MAX_ITER {
        let ft = f(t);
        if ft.abs() <= tol {
            return Ok(t);
        }
        if ft < 0.0 {
            a = t;
        } else {
            b = t;
        }
        let df = orient * seg.derivative(t).x;
        let newton = if df > 0.0 { t - ft / df } else { f64::NAN };
        t = if newton > a && newton < b { newton } else { 0.5 * (a + b) };
        if b - a <= 4.0 * f64::EPSILON {
            return Ok(t);
        }
    }
    Ok(t)
}
