//! Quadrangles and the planar polygon routines behind IoU, NMS and
//! annotation fitting.

use std::cmp::Ordering;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

const AREA_EPS: f64 = 1e-12;

/// Four-vertex text region in input-image pixel coordinates.
///
/// Vertices run clockwise on screen (positive shoelace area with the y axis
/// pointing down), starting at the top-left corner of the text in reading
/// direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quad {
    pub pts: [Point; 4],
    pub score: f64,
}

impl Quad {
    pub fn new(pts: [Point; 4]) -> Self {
        Quad { pts, score: 1.0 }
    }

    pub fn with_score(pts: [Point; 4], score: f64) -> Self {
        Quad { pts, score }
    }

    /// Axis-aligned rectangle from its top-left and bottom-right corners.
    pub fn rect(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Quad::new([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    pub fn signed_area(&self) -> f64 {
        polygon_signed_area(&self.pts)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    /// Vertex mean.
    pub fn centroid(&self) -> Point {
        let mut c = [0.0, 0.0];
        for p in &self.pts {
            c[0] += p[0] / 4.0;
            c[1] += p[1] / 4.0;
        }
        c
    }

    /// No two non-adjacent edges intersect.
    pub fn is_simple(&self) -> bool {
        let p = &self.pts;
        !segments_intersect(p[0], p[1], p[2], p[3]) && !segments_intersect(p[1], p[2], p[3], p[0])
    }

    pub fn is_convex(&self) -> bool {
        is_convex_polygon(&self.pts)
    }

    /// Simple, clockwise (positive area) and not degenerate.
    pub fn is_valid(&self) -> bool {
        self.pts.iter().flatten().all(|v| v.is_finite())
            && self.signed_area() > AREA_EPS
            && self.is_simple()
    }

    pub fn contains(&self, p: Point) -> bool {
        point_in_polygon(&self.pts, p)
    }

    pub fn map(&self, f: impl Fn(Point) -> Point) -> Quad {
        Quad {
            pts: self.pts.map(f),
            score: self.score,
        }
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Quad {
        self.map(|p| [p[0] + dx, p[1] + dy])
    }

    pub fn edge_len(&self, i: usize) -> f64 {
        dist(self.pts[i], self.pts[(i + 1) % 4])
    }

    /// Vertices reordered to run clockwise on screen.
    pub fn oriented(&self) -> Quad {
        if self.signed_area() < 0.0 {
            let p = self.pts;
            Quad::with_score([p[0], p[3], p[2], p[1]], self.score)
        } else {
            *self
        }
    }

    /// Clockwise reordering whose cyclic start best matches the given text
    /// corners (top-left, top-right, bottom-right, bottom-left).
    pub fn aligned_to(&self, text_corners: &[Point; 4]) -> Quad {
        let q = self.oriented();
        let cost = |shift: usize| -> f64 {
            (0..4)
                .map(|k| dist2(q.pts[(k + shift) % 4], text_corners[k]))
                .sum()
        };
        let best = (0..4)
            .min_by(|&a, &b| cost(a).total_cmp(&cost(b)))
            .unwrap();
        Quad::with_score(std::array::from_fn(|k| q.pts[(k + best) % 4]), q.score)
    }

    /// Axis-aligned bounds `(min_x, min_y, max_x, max_y)`.
    pub fn bounds(&self) -> (f64, f64, f64, f64) {
        let xs = self.pts.map(|p| p[0]);
        let ys = self.pts.map(|p| p[1]);
        (
            xs.iter().copied().fold(f64::INFINITY, f64::min),
            ys.iter().copied().fold(f64::INFINITY, f64::min),
            xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            ys.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }
}

pub fn dist(a: Point, b: Point) -> f64 {
    dist2(a, b).sqrt()
}

fn dist2(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Shoelace area; positive for clockwise-on-screen vertex order.
pub fn polygon_signed_area(poly: &[Point]) -> f64 {
    let n = poly.len();
    if n < 3 {
        return 0.0;
    }
    let twice: f64 = (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a[0] * b[1] - b[0] * a[1]
        })
        .sum();
    twice / 2.0
}

fn segments_intersect(p1: Point, p2: Point, p3: Point, p4: Point) -> bool {
    let d1 = cross(p3, p4, p1);
    let d2 = cross(p3, p4, p2);
    let d3 = cross(p1, p2, p3);
    let d4 = cross(p1, p2, p4);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |a: Point, b: Point, p: Point, d: f64| {
        d == 0.0
            && p[0] >= a[0].min(b[0])
            && p[0] <= a[0].max(b[0])
            && p[1] >= a[1].min(b[1])
            && p[1] <= a[1].max(b[1])
    };
    on(p3, p4, p1, d1) || on(p3, p4, p2, d2) || on(p1, p2, p3, d3) || on(p1, p2, p4, d4)
}

/// Strictly convex or with collinear vertices; turn direction never flips.
pub fn is_convex_polygon(poly: &[Point]) -> bool {
    let n = poly.len();
    if n < 3 {
        return false;
    }
    let mut sign = 0.0;
    for i in 0..n {
        let c = cross(poly[i], poly[(i + 1) % n], poly[(i + 2) % n]);
        if c.abs() <= AREA_EPS {
            continue;
        }
        if sign == 0.0 {
            sign = c.signum();
        } else if c.signum() != sign {
            return false;
        }
    }
    sign != 0.0
}

/// Even-odd ray casting.
pub fn point_in_polygon(poly: &[Point], p: Point) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = (b[0] - a[0]) * (p[1] - a[1]) / (b[1] - a[1]) + a[0];
            if p[0] < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Sutherland–Hodgman clipping of `subject` by the convex polygon `clip`.
/// Both must be positively oriented.
pub fn clip_polygon(subject: &[Point], clip: &[Point]) -> Vec<Point> {
    let mut output = subject.to_vec();
    let n = clip.len();
    for i in 0..n {
        if output.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % n]);
        let input = std::mem::take(&mut output);
        let inside = |p: Point| cross(a, b, p) >= 0.0;
        let m = input.len();
        for j in 0..m {
            let cur = input[j];
            let prev = input[(j + m - 1) % m];
            let (ci, pi) = (inside(cur), inside(prev));
            if ci {
                if !pi {
                    output.push(line_intersection(prev, cur, a, b));
                }
                output.push(cur);
            } else if pi {
                output.push(line_intersection(prev, cur, a, b));
            }
        }
    }
    output
}

fn line_intersection(p1: Point, p2: Point, a: Point, b: Point) -> Point {
    let d1 = cross(a, b, p1);
    let d2 = cross(a, b, p2);
    let t = d1 / (d1 - d2);
    [p1[0] + t * (p2[0] - p1[0]), p1[1] + t * (p2[1] - p1[1])]
}

fn positive(poly: &[Point]) -> Vec<Point> {
    let mut v = poly.to_vec();
    if polygon_signed_area(&v) < 0.0 {
        v.reverse();
    }
    v
}

/// Intersection over union of two convex quads. Degenerate quads give 0;
/// concave quads are rejected.
pub fn polygon_iou(a: &Quad, b: &Quad) -> Result<f64> {
    let (area_a, area_b) = (a.area(), b.area());
    if area_a <= AREA_EPS || area_b <= AREA_EPS || !a.is_simple() || !b.is_simple() {
        return Ok(0.0);
    }
    if !a.is_convex() || !b.is_convex() {
        return Err(Error::NotConvex);
    }
    let pa = positive(&a.pts);
    let pb = positive(&b.pts);
    let inter = polygon_signed_area(&clip_polygon(&pa, &pb)).abs();
    let union = area_a + area_b - inter;
    if union <= AREA_EPS {
        return Ok(0.0);
    }
    Ok((inter / union).clamp(0.0, 1.0))
}

fn nms_order(a: &Quad, b: &Quad) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.pts[0][0].total_cmp(&b.pts[0][0]))
        .then(a.pts[0][1].total_cmp(&b.pts[0][1]))
}

/// Greedy non-maximum suppression: visit quads by descending score (ties by
/// smaller first-corner x, then y) and keep a quad iff its IoU with every
/// kept quad is at most `iou_thresh`. Concave quads are discarded.
pub fn nms_quads(quads: &[Quad], iou_thresh: f64) -> Vec<Quad> {
    let mut order: Vec<&Quad> = quads.iter().filter(|q| q.is_convex()).collect();
    order.sort_by(|a, b| nms_order(a, b));
    let mut kept: Vec<Quad> = Vec::new();
    for q in order {
        let suppressed = kept
            .iter()
            .any(|k| polygon_iou(q, k).unwrap_or(0.0) > iou_thresh);
        if !suppressed {
            kept.push(*q);
        }
    }
    kept
}

/// Convex hull (Andrew's monotone chain), positively oriented, without
/// collinear points.
pub fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn intersect_lines(p1: Point, d1: Point, p2: Point, d2: Point) -> Option<Point> {
    let den = d1[0] * d2[1] - d1[1] * d2[0];
    if den.abs() < 1e-12 {
        return None;
    }
    let t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / den;
    Some([p1[0] + t * d1[0], p1[1] + t * d1[1]])
}

/// Smallest-area quadrilateral enclosing `points` among those whose four
/// sides lie on edges of the convex hull. Returns `None` for fewer than three
/// non-collinear points.
pub fn min_area_enclosing_quad(points: &[Point]) -> Option<Quad> {
    let hull = convex_hull(points);
    let n = hull.len();
    if n < 3 || polygon_signed_area(&hull) <= AREA_EPS {
        return None;
    }
    if n == 3 {
        // split the longest edge at its midpoint
        let (i, _) = (0..3)
            .map(|i| (i, dist(hull[i], hull[(i + 1) % 3])))
            .max_by(|a, b| a.1.total_cmp(&b.1))?;
        let a = hull[i];
        let b = hull[(i + 1) % 3];
        let mid = [(a[0] + b[0]) / 2.0, (a[1] + b[1]) / 2.0];
        let mut pts = hull.clone();
        pts.insert(i + 1, mid);
        return Some(Quad::new([pts[0], pts[1], pts[2], pts[3]]));
    }
    if n == 4 {
        return Some(Quad::new([hull[0], hull[1], hull[2], hull[3]]));
    }
    let dirs: Vec<Point> = (0..n)
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % n]);
            [b[0] - a[0], b[1] - a[1]]
        })
        .collect();
    let angle = |d: Point| d[1].atan2(d[0]);
    let turn = |i: usize, j: usize| {
        // counter-clockwise turn from edge i to edge j in [0, 2π)
        let t = angle(dirs[j]) - angle(dirs[i]);
        t.rem_euclid(std::f64::consts::TAU)
    };
    let mut best: Option<(f64, [Point; 4])> = None;
    for a in 0..n {
        for b in a + 1..n {
            for c in b + 1..n {
                for d in c + 1..n {
                    let edges = [a, b, c, d];
                    let bounded = (0..4).all(|k| {
                        let t = turn(edges[k], edges[(k + 1) % 4]);
                        t > 1e-9 && t < std::f64::consts::PI - 1e-9
                    });
                    if !bounded {
                        continue;
                    }
                    let mut quad = [[0.0; 2]; 4];
                    let mut ok = true;
                    for k in 0..4 {
                        let (e1, e2) = (edges[k], edges[(k + 1) % 4]);
                        match intersect_lines(hull[e1], dirs[e1], hull[e2], dirs[e2]) {
                            Some(p) => quad[k] = p,
                            None => {
                                ok = false;
                                break;
                            }
                        }
                    }
                    if !ok {
                        continue;
                    }
                    let area = polygon_signed_area(&quad).abs();
                    if best.is_none_or(|(b, _)| area < b) {
                        best = Some((area, quad));
                    }
                }
            }
        }
    }
    best.map(|(_, q)| Quad::new(q).oriented())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit(x: f64, y: f64) -> Quad {
        Quad::rect(x, y, x + 1.0, y + 1.0)
    }

    #[test]
    fn iou_identical_and_disjoint() {
        let a = unit(0.0, 0.0);
        assert_eq!(polygon_iou(&a, &a).unwrap(), 1.0);
        assert_eq!(polygon_iou(&a, &unit(3.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn iou_half_offset_unit_squares() {
        let iou = polygon_iou(&unit(0.0, 0.0), &unit(0.5, 0.0)).unwrap();
        assert!((iou - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn iou_rejects_concave() {
        let concave = Quad::new([[0.0, 0.0], [4.0, 0.0], [1.0, 1.0], [0.0, 4.0]]);
        assert!(matches!(
            polygon_iou(&concave, &unit(0.0, 0.0)),
            Err(Error::NotConvex)
        ));
    }

    #[test]
    fn degenerate_iou_is_zero() {
        let flat = Quad::new([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [3.0, 0.0]]);
        assert_eq!(polygon_iou(&flat, &unit(0.0, 0.0)).unwrap(), 0.0);
    }

    #[test]
    fn validity_checks() {
        assert!(unit(0.0, 0.0).is_valid());
        let bowtie = Quad::new([[0.0, 0.0], [1.0, 1.0], [1.0, 0.0], [0.0, 1.0]]);
        assert!(!bowtie.is_simple());
        assert!(!bowtie.is_valid());
        let ccw = Quad::new([[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]]);
        assert!(!ccw.is_valid());
        assert!(ccw.oriented().is_valid());
    }

    #[test]
    fn nms_keeps_best_of_duplicates() {
        let a = Quad::with_score(unit(0.0, 0.0).pts, 0.9);
        let b = Quad::with_score(unit(0.0, 0.0).pts, 0.8);
        assert_eq!(nms_quads(&[b, a], 0.2), vec![a]);
        assert_eq!(nms_quads(&[a], 0.2), vec![a]);
    }

    #[test]
    fn hull_and_min_quad_of_rectangle_points() {
        let mut pts = vec![];
        for i in 0..=10 {
            pts.push([i as f64, 0.0]);
            pts.push([i as f64, 3.0]);
        }
        let hull = convex_hull(&pts);
        assert_eq!(hull.len(), 4);
        let q = min_area_enclosing_quad(&pts).unwrap();
        assert!((q.area() - 30.0).abs() < 1e-9);
    }

    #[test]
    fn min_quad_encloses_arc() {
        let mut pts = vec![];
        for i in 0..=20 {
            let t = -1.0 + i as f64 * 0.1;
            for r in [10.0, 14.0] {
                pts.push([r * t.sin(), -r * t.cos()]);
            }
        }
        let q = min_area_enclosing_quad(&pts).unwrap();
        assert!(q.is_valid());
        let hull = convex_hull(&pts);
        for p in &pts {
            // allow boundary points
            let inside = q.contains(*p)
                || (0..4).any(|k| cross(q.pts[k], q.pts[(k + 1) % 4], *p).abs() < 1e-6);
            assert!(inside, "{p:?} outside {q:?}");
        }
        assert!(q.area() >= polygon_signed_area(&hull) - 1e-9);
    }

    #[test]
    fn aligned_to_picks_reading_start() {
        let q = Quad::new([[10.0, 0.0], [10.0, 5.0], [0.0, 5.0], [0.0, 0.0]]);
        let aligned = q.aligned_to(&[[0.0, 0.0], [10.0, 0.0], [10.0, 5.0], [0.0, 5.0]]);
        assert_eq!(aligned.pts[0], [0.0, 0.0]);
        assert!(aligned.signed_area() > 0.0);
    }

    fn random_convex(rng: &mut ChaCha8Rng) -> Quad {
        let cx = rng.gen_range(0.0..20.0);
        let cy = rng.gen_range(0.0..20.0);
        let mut angles: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..std::f64::consts::TAU)).collect();
        angles.sort_by(f64::total_cmp);
        let pts = std::array::from_fn(|k| {
            let r = rng.gen_range(2.0..8.0);
            [cx + r * angles[k].cos(), cy + r * angles[k].sin()]
        });
        Quad::new(pts).oriented()
    }

    #[test]
    fn iou_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut tested = 0;
        while tested < 5 {
            let a = random_convex(&mut rng);
            let b = random_convex(&mut rng);
            if !a.is_convex() || !b.is_convex() {
                continue;
            }
            let iou = polygon_iou(&a, &b).unwrap();
            let (x0, y0, x1, y1) = a.bounds();
            let (u0, v0, u1, v1) = b.bounds();
            let (x0, y0, x1, y1) = (x0.min(u0), y0.min(v0), x1.max(u1), y1.max(v1));
            let (mut inter, mut union) = (0u32, 0u32);
            for _ in 0..200_000 {
                let p = [rng.gen_range(x0..x1), rng.gen_range(y0..y1)];
                let (ia, ib) = (a.contains(p), b.contains(p));
                inter += (ia && ib) as u32;
                union += (ia || ib) as u32;
            }
            let mc = if union == 0 { 0.0 } else { inter as f64 / union as f64 };
            assert!((iou - mc).abs() < 5e-3, "{iou} vs {mc}");
            tested += 1;
        }
    }

    proptest! {
        #[test]
        fn iou_symmetric_and_translation_invariant(
            seed in 0u64..10_000,
            dx in -50.0f64..50.0,
            dy in -50.0f64..50.0,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_convex(&mut rng);
            let b = random_convex(&mut rng);
            prop_assume!(a.is_convex() && b.is_convex());
            let ab = polygon_iou(&a, &b).unwrap();
            let ba = polygon_iou(&b, &a).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9);
            prop_assert!((0.0..=1.0).contains(&ab));
            let moved = polygon_iou(&a.translate(dx, dy), &b.translate(dx, dy)).unwrap();
            prop_assert!((ab - moved).abs() < 1e-9);
            prop_assert!((polygon_iou(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn nms_output_contract(seed in 0u64..10_000, n in 1usize..30) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let quads: Vec<Quad> = (0..n)
                .map(|_| {
                    let mut q = random_convex(&mut rng);
                    q.score = rng.gen_range(0.0..1.0);
                    q
                })
                .collect();
            let kept = nms_quads(&quads, 0.3);
            for w in kept.windows(2) {
                prop_assert!(w[0].score >= w[1].score);
            }
            for (i, a) in kept.iter().enumerate() {
                prop_assert!(quads.contains(a));
                for b in &kept[i + 1..] {
                    prop_assert!(polygon_iou(a, b).unwrap() <= 0.3);
                }
            }
        }
    }
}
