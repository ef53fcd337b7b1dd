use charflow::curve::{
    area_preserving_segment, hermite_segment, solve_area_preserving_r2, BezierSegment, CurveChain, Vec2,
};
use proptest::prelude::*;

// Power-basis coefficients of a cubic Bézier coordinate.
fn power(p0: f64, p1: f64, p2: f64, p3: f64) -> [f64; 4] {
    [p0, 3.0 * (p1 - p0), 3.0 * (p2 - 2.0 * p1 + p0), p3 - 3.0 * p2 + 3.0 * p1 - p0]
}

// ∫_0^1 u(t) x'(t) dt by exact polynomial integration.
fn oracle_area(s: &BezierSegment) -> f64 {
    let x = power(s.a.x, s.c1.x, s.c2.x, s.d.x);
    let u = power(s.a.u, s.c1.u, s.c2.u, s.d.u);
    let dx = [x[1], 2.0 * x[2], 3.0 * x[3]];
    let mut total = 0.0;
    for (i, ui) in u.iter().enumerate() {
        for (j, dj) in dx.iter().enumerate() {
            total += ui * dj / (i + j + 1) as f64;
        }
    }
    total
}

fn magnitude(s: &BezierSegment) -> f64 {
    let m = [s.a, s.c1, s.c2, s.d].iter().map(|p| p.x.abs().max(p.u.abs())).fold(0.0, f64::max);
    m * m
}

fn vec2() -> impl Strategy<Value = Vec2> {
    (-5.0..5.0f64, -5.0..5.0f64).prop_map(|(x, u)| Vec2::new(x, u))
}

fn segment() -> impl Strategy<Value = BezierSegment> {
    (vec2(), vec2(), vec2(), vec2(), 0.05..3.0f64, 0.05..3.0f64)
        .prop_map(|(a, d, alpha, beta, r1, r2)| BezierSegment::new(a, d, alpha, beta, r1, r2))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn closed_form_and_quadrature_areas_agree(s in segment()) {
        let exact = oracle_area(&s);
        let scale = magnitude(&s).max(1e-300);
        prop_assert!((s.closed_form_area() - exact).abs() <= 1e-13 * scale);
        prop_assert!((s.parametric_area() - exact).abs() <= 1e-13 * scale);
    }

    #[test]
    fn endpoint_data_is_reproduced(s in segment()) {
        prop_assert_eq!(s.eval(0.0).unwrap(), s.a);
        prop_assert_eq!(s.eval(1.0).unwrap(), s.d);
        let d0 = s.derivative(0.0);
        let d1 = s.derivative(1.0);
        let tol = 1e-12 * (1.0 + magnitude(&s).sqrt() * 4.0);
        prop_assert!((d0 - s.r1 * s.alpha).norm() <= tol);
        prop_assert!((d1 - s.r2 * s.beta).norm() <= tol);
        prop_assert!(s.eval(1.5).is_err());
    }

    #[test]
    fn partial_areas_add_up(s in segment(), m in 0.0..1.0f64) {
        let total = s.partial_area(0.0, m) + s.partial_area(m, 1.0);
        prop_assert!((total - s.parametric_area()).abs() <= 1e-12 * magnitude(&s).max(1.0));
    }

    #[test]
    fn area_preserving_solve_hits_target(s in segment(), shift in -1.0..1.0f64) {
        let target = s.parametric_area() + shift;
        if let Ok(r2) = solve_area_preserving_r2(s.a, s.d, s.alpha, s.beta, s.r1, target) {
            let hit = s.with_r2(r2);
            let scale = magnitude(&hit).max(1.0);
            prop_assert!((hit.parametric_area() - target).abs() <= 1e-10 * scale);
            prop_assert_eq!(hit.r1, s.r1);
        }
    }

    #[test]
    fn area_preserving_segment_keeps_monotone_segments_monotone(s in segment(), shift in -1.0..1.0f64) {
        let target = s.parametric_area() + shift;
        let (out, defect) = area_preserving_segment(&s, target);
        match defect {
            None => {
                prop_assert!(out.r2 > 0.0);
                prop_assert!(s.min_x_slope().1 < 0.0 || out.min_x_slope().1 >= 0.0);
                prop_assert!((out.parametric_area() - target).abs() <= 1e-10 * magnitude(&out).max(1.0));
            }
            Some(d) => {
                prop_assert_eq!(out, s);
                prop_assert!((d - shift.abs()).abs() <= 1e-12 * magnitude(&s).max(1.0));
            }
        }
    }

    #[test]
    fn min_x_slope_bounds_samples(s in segment()) {
        let (t_min, v) = s.min_x_slope();
        prop_assert!((0.0..=1.0).contains(&t_min));
        for k in 0..=64 {
            let t = k as f64 / 64.0;
            prop_assert!(s.derivative(t).x >= v - 1e-12 * magnitude(&s).sqrt().max(1.0));
        }
        for r in s.x_slope_roots() {
            prop_assert!(s.derivative(r).x.abs() <= 1e-9 * magnitude(&s).sqrt().max(1.0));
        }
    }

    #[test]
    fn hermite_segment_is_the_cubic_in_x(
        x0 in -3.0..3.0f64, dx in 0.1..2.0f64, u0 in -2.0..2.0f64, u1 in -2.0..2.0f64,
        m0 in -3.0..3.0f64, m1 in -3.0..3.0f64, w0 in 0.2..2.0f64, w1 in 0.2..2.0f64, t in 0.0..1.0f64,
    ) {
        let p0 = Vec2::new(x0, u0);
        let p1 = Vec2::new(x0 + dx, u1);
        let seg = hermite_segment(p0, p1, Vec2::new(w0, w0 * m0), Vec2::new(w1, w1 * m1)).unwrap();
        let p = seg.point(t);
        prop_assert!((p.x - (x0 + dx * t)).abs() <= 1e-12 * (1.0 + x0.abs() + dx));
        let (h00, h10, h01, h11) = (
            2.0 * t * t * t - 3.0 * t * t + 1.0,
            t * t * t - 2.0 * t * t + t,
            -2.0 * t * t * t + 3.0 * t * t,
            t * t * t - t * t,
        );
        let want = h00 * u0 + h10 * dx * m0 + h01 * u1 + h11 * dx * m1;
        prop_assert!((p.u - want).abs() <= 1e-12 * (1.0 + u0.abs() + u1.abs() + dx * (m0.abs() + m1.abs())));
    }

    #[test]
    fn monotone_chain_inverts(xs in prop::collection::vec(0.05..1.0f64, 2..8), q in 0.0..1.0f64) {
        let mut knots = vec![Vec2::new(0.0, 0.0)];
        for (i, dx) in xs.iter().enumerate() {
            let last = knots[knots.len() - 1];
            knots.push(Vec2::new(last.x + dx, (i as f64).sin()));
        }
        let segs: Vec<BezierSegment> = knots.windows(2).map(|w| BezierSegment::line(w[0], w[1])).collect();
        let chain = CurveChain::new(segs, (0..knots.len()).map(|i| i as f64).collect(), 0.0).unwrap();
        let xq = q * knots[knots.len() - 1].x;
        let inv = chain.invert_x(xq).unwrap();
        prop_assert!((chain.point(inv.param).x - xq).abs() <= 1e-12 * (1.0 + xq));
        prop_assert_eq!(chain.runs().len(), 1);
        prop_assert!(chain.steepest_overturn().is_none());
    }
}

#[test]
fn disconnected_chain_is_rejected() {
    let a = BezierSegment::line(Vec2::new(0.0, 0.0), Vec2::new(1.0, 0.0));
    let b = BezierSegment::line(Vec2::new(1.5, 0.0), Vec2::new(2.0, 0.0));
    assert!(CurveChain::new(vec![a, b], vec![0.0, 1.0, 2.0], 0.0).is_err());
}

#[test]
fn overturned_segment_has_three_runs() {
    let s = BezierSegment::from_control_points(Vec2::new(0.0, 0.0), Vec2::new(2.0, 1.0), Vec2::new(-1.0, 2.0), Vec2::new(1.0, 3.0));
    let chain = CurveChain::new(vec![s], vec![0.0, 1.0], 0.0).unwrap();
    let signs: Vec<i8> = chain.runs().iter().map(|r| r.sign).collect();
    assert_eq!(signs, vec![1, -1, 1]);
    assert!(chain.steepest_overturn().is_some());
    assert!(chain.invert_x(0.5).is_err());
}
