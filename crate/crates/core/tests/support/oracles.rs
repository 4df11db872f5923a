//! Independent reference implementations for geometry and matching.

#![allow(dead_code)]

use rand::Rng;
use textnet_core::geometry::{Point, Quad};

/// Convex, positively oriented quad around a random centre.
pub fn random_convex_quad(rng: &mut impl Rng, extent: f64, size: (f64, f64)) -> Quad {
    loop {
        let c = [rng.gen_range(0.0..extent), rng.gen_range(0.0..extent)];
        let base: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let pts: [Point; 4] = std::array::from_fn(|k| {
            let a = base + k as f64 * std::f64::consts::FRAC_PI_2 + rng.gen_range(-0.6..0.6);
            let r = rng.gen_range(size.0..size.1);
            [c[0] + r * a.cos(), c[1] + r * a.sin()]
        });
        let q = Quad::new(pts);
        if q.is_valid() && q.is_convex() && q.area() > 1e-3 {
            return q;
        }
    }
}

fn cross(o: Point, a: Point, b: Point) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn area(poly: &[Point]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        .abs()
        / 2.0
}

fn orient(q: &Quad) -> [Point; 4] {
    let mut p = q.pts;
    if q.signed_area() < 0.0 {
        p.reverse();
    }
    p
}

/// Point inside (or on) a positively oriented convex polygon.
pub fn inside(poly: &[Point], p: Point) -> bool {
    (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], p) >= -1e-12)
}

fn segment_hit(a: Point, b: Point, c: Point, d: Point) -> Option<Point> {
    let r = [b[0] - a[0], b[1] - a[1]];
    let s = [d[0] - c[0], d[1] - c[1]];
    let den = r[0] * s[1] - r[1] * s[0];
    if den.abs() < 1e-15 {
        return None;
    }
    let t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / den;
    let u = ((c[0] - a[0]) * r[1] - (c[1] - a[1]) * r[0]) / den;
    ((0.0..=1.0).contains(&t) && (0.0..=1.0).contains(&u)).then(|| [a[0] + t * r[0], a[1] + t * r[1]])
}

/// Gift wrapping over the distinct points.
fn hull(raw: &[Point]) -> Vec<Point> {
    let mut points: Vec<Point> = Vec::new();
    for p in raw {
        if !points.iter().any(|q| (q[0] - p[0]).abs() < 1e-12 && (q[1] - p[1]).abs() < 1e-12) {
            points.push(*p);
        }
    }
    if points.len() < 3 {
        return points.to_vec();
    }
    let start = (0..points.len())
        .min_by(|&i, &j| points[i][0].total_cmp(&points[j][0]).then(points[i][1].total_cmp(&points[j][1])))
        .unwrap();
    let mut out = Vec::new();
    let mut cur = start;
    loop {
        out.push(points[cur]);
        let mut next = (cur + 1) % points.len();
        for k in 0..points.len() {
            let c = cross(points[cur], points[next], points[k]);
            let farther = {
                let d = |p: Point| (p[0] - points[cur][0]).powi(2) + (p[1] - points[cur][1]).powi(2);
                d(points[k]) > d(points[next])
            };
            if c < 0.0 || (c == 0.0 && farther) {
                next = k;
            }
        }
        cur = next;
        if cur == start || out.len() > points.len() {
            break;
        }
    }
    out
}

/// Exact IoU of convex quads from vertex containment and edge crossings.
pub fn iou_reference(a: &Quad, b: &Quad) -> f64 {
    let (pa, pb) = (orient(a), orient(b));
    let mut pts: Vec<Point> = Vec::new();
    pts.extend(pa.iter().copied().filter(|&p| inside(&pb, p)));
    pts.extend(pb.iter().copied().filter(|&p| inside(&pa, p)));
    for i in 0..4 {
        for j in 0..4 {
            if let Some(p) = segment_hit(pa[i], pa[(i + 1) % 4], pb[j], pb[(j + 1) % 4]) {
                pts.push(p);
            }
        }
    }
    let inter = if pts.len() < 3 { 0.0 } else { area(&hull(&pts)) };
    let union = area(&pa) + area(&pb) - inter;
    if union <= 0.0 {
        0.0
    } else {
        inter / union
    }
}

/// Monte-Carlo IoU over the joint bounding box.
pub fn iou_monte_carlo(a: &Quad, b: &Quad, samples: usize, rng: &mut impl Rng) -> f64 {
    let (pa, pb) = (orient(a), orient(b));
    let all: Vec<Point> = pa.iter().chain(pb.iter()).copied().collect();
    let (x0, x1) = all.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p[0]), h.max(p[0])));
    let (y0, y1) = all.iter().fold((f64::MAX, f64::MIN), |(l, h), p| (l.min(p[1]), h.max(p[1])));
    let (mut both, mut any) = (0usize, 0usize);
    for _ in 0..samples {
        let p = [rng.gen_range(x0..x1), rng.gen_range(y0..y1)];
        let (ia, ib) = (inside(&pa, p), inside(&pb, p));
        both += usize::from(ia && ib);
        any += usize::from(ia || ib);
    }
    if any == 0 {
        0.0
    } else {
        both as f64 / any as f64
    }
}

/// NMS by definition: in priority order, a quad survives iff it overlaps no
/// earlier survivor above the threshold.
pub fn nms_reference(quads: &[Quad], thresh: f64) -> Vec<Quad> {
    let mut order: Vec<Quad> = quads.to_vec();
    order.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.pts[0][0].total_cmp(&b.pts[0][0]))
            .then(a.pts[0][1].total_cmp(&b.pts[0][1]))
    });
    let n = order.len();
    let iou: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| iou_reference(&order[i], &order[j])).collect())
        .collect();
    let mut keep = vec![false; n];
    for i in 0..n {
        keep[i] = (0..i).all(|j| !keep[j] || iou[i][j] <= thresh);
    }
    order.into_iter().zip(keep).filter(|(_, k)| *k).map(|(q, _)| q).collect()
}

/// Largest number of disjoint pairs with `edge[i][j]`, by exhaustive search.
pub fn max_matching(edge: &[Vec<bool>]) -> usize {
    fn go(i: usize, edge: &[Vec<bool>], used: &mut Vec<bool>) -> usize {
        if i == edge.len() {
            return 0;
        }
        let mut best = go(i + 1, edge, used);
        for j in 0..used.len() {
            if edge[i][j] && !used[j] {
                used[j] = true;
                best = best.max(1 + go(i + 1, edge, used));
                used[j] = false;
            }
        }
        best
    }
    let cols = edge.first().map_or(0, Vec::len);
    go(0, edge, &mut vec![false; cols])
}

/// Levenshtein distance by full-table dynamic programming.
pub fn edit_distance_reference(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for j in 0..=b.len() {
        d[0][j] = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()]
}
