//! Randomized geometry checks shared by the integration tests and the
//! acceptance harness. Each returns the worst observed error or a mismatch
//! count so callers pick the tolerance.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textnet_core::detection::{decode_quads, make_targets};
use textnet_core::geometry::{Point, Quad};
use textnet_core::{nms_quads, polygon_iou, roi_width, solve_homography};

use super::oracles::{inside, iou_reference, nms_reference, random_convex_quad};

fn err(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).abs().max((a[1] - b[1]).abs())
}

/// Worst corner error of the forward map and of the inverse map.
pub fn homography(n: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut fwd, mut inv) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < n {
        let q = random_convex_quad(&mut rng, 512.0, (4.0, 120.0));
        let w_t = roi_width(&q, 8, 64);
        let h = solve_homography(&q, w_t, 8).expect("convex quad is solvable");
        let hi = h.inverse().expect("invertible");
        for (d, s) in textnet_core::roi::target_corners(w_t, 8).iter().zip(&q.pts) {
            fwd = fwd.max(err(h.apply(*d).unwrap(), *s));
            inv = inv.max(err(hi.apply(*s).unwrap(), *d));
        }
        done += 1;
    }
    (fwd, inv)
}

/// Sets on which `nms_quads` and the brute-force reference disagree.
pub fn nms(sets: usize, max_quads: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..sets {
        let n = rng.gen_range(1..=max_quads);
        let thresh = if rng.gen_bool(0.5) { 0.2 } else { rng.gen_range(0.05..0.8) };
        let quads: Vec<Quad> = (0..n)
            .map(|_| {
                let mut q = random_convex_quad(&mut rng, 60.0, (8.0, 30.0));
                // coarse scores force ties
                q.score = (rng.gen_range(0..10) as f64) / 10.0;
                q
            })
            .collect();
        if nms_quads(&quads, thresh) != nms_reference(&quads, thresh) {
            bad += 1;
        }
    }
    bad
}

/// Worst gap between `polygon_iou` and both the exact reference and a
/// stratified Monte-Carlo estimate with `samples` points per pair.
pub fn iou_monte_carlo(pairs: usize, samples: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (samples as f64).sqrt().ceil() as usize;
    let (mut exact, mut mc) = (0.0f64, 0.0f64);
    let mut done = 0;
    while done < pairs {
        let a = random_convex_quad(&mut rng, 40.0, (10.0, 30.0));
        let b = random_convex_quad(&mut rng, 40.0, (10.0, 30.0));
        let iou = polygon_iou(&a, &b).unwrap();
        if iou == 0.0 {
            continue;
        }
        exact = exact.max((iou - iou_reference(&a, &b)).abs());
        let pa = oriented(&a);
        let pb = oriented(&b);
        let all: Vec<Point> = pa.iter().chain(&pb).copied().collect();
        let x0 = all.iter().map(|p| p[0]).fold(f64::MAX, f64::min);
        let x1 = all.iter().map(|p| p[0]).fold(f64::MIN, f64::max);
        let y0 = all.iter().map(|p| p[1]).fold(f64::MAX, f64::min);
        let y1 = all.iter().map(|p| p[1]).fold(f64::MIN, f64::max);
        let (dx, dy) = ((x1 - x0) / side as f64, (y1 - y0) / side as f64);
        let (mut both, mut any) = (0u64, 0u64);
        for i in 0..side {
            for j in 0..side {
                let p = [
                    x0 + (j as f64 + rng.gen::<f64>()) * dx,
                    y0 + (i as f64 + rng.gen::<f64>()) * dy,
                ];
                let (ia, ib) = (inside(&pa, p), inside(&pb, p));
                both += u64::from(ia && ib);
                any += u64::from(ia || ib);
            }
        }
        mc = mc.max((iou - both as f64 / any as f64).abs());
        done += 1;
    }
    (exact, mc)
}

fn oriented(q: &Quad) -> [Point; 4] {
    let mut p = q.pts;
    if q.signed_area() < 0.0 {
        p.reverse();
    }
    p
}

/// Worst gap to the closed form for axis-aligned rectangles, also after a
/// common rotation and translation of both.
pub fn iou_rectangles(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..cases {
        let mut r = || -> (f64, f64, f64, f64) {
            let x: f64 = rng.gen_range(0.0..50.0);
            let y: f64 = rng.gen_range(0.0..50.0);
            (x, y, x + rng.gen_range(1.0..40.0), y + rng.gen_range(1.0..40.0))
        };
        let (a, b) = (r(), r());
        let iw = (a.2.min(b.2) - a.0.max(b.0)).max(0.0);
        let ih = (a.3.min(b.3) - a.1.max(b.1)).max(0.0);
        let inter = iw * ih;
        let want = inter / ((a.2 - a.0) * (a.3 - a.1) + (b.2 - b.0) * (b.3 - b.1) - inter);
        let qa = Quad::rect(a.0, a.1, a.2, a.3);
        let qb = Quad::rect(b.0, b.1, b.2, b.3);
        worst = worst.max((polygon_iou(&qa, &qb).unwrap() - want).abs());
        let t: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = t.sin_cos();
        let (tx, ty) = (rng.gen_range(-100.0..100.0), rng.gen_range(-100.0..100.0));
        let rot = |p: Point| [c * p[0] - s * p[1] + tx, s * p[0] + c * p[1] + ty];
        worst = worst.max((polygon_iou(&qa.map(rot), &qb.map(rot)).unwrap() - want).abs());
    }
    worst
}

/// Worst corner error over every decoded quad, and the number of source
/// quads that decoded to nothing.
pub fn detection_round_trip(n: usize, seed: u64) -> (f64, usize) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nd = 128.0;
    let (mut worst, mut empty) = (0.0f64, 0);
    for _ in 0..n {
        let q = random_convex_quad(&mut rng, 60.0, (12.0, 50.0)).translate(50.0, 50.0);
        let t = make_targets(&[(q, false)], 160, 160, nd);
        let out = decode_quads(&t.as_map_values(), 0.5, nd);
        if out.is_empty() {
            empty += 1;
        }
        for d in out {
            for k in 0..4 {
                worst = worst.max(err(d.pts[k], q.pts[k]));
            }
        }
    }
    (worst, empty)
}
