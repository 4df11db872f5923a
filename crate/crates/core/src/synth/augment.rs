//! Training-time crop, long-side resize and mean padding.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Image, Instance, TextSample};
use crate::geometry::{clip_polygon, polygon_signed_area, Quad};

/// Source-pixel crop window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropSpec {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

/// Random crop covering 0.5 to 1.0 of each side, then [`augment_with`].
pub fn augment(sample: &TextSample, seed: u64, target: usize) -> TextSample {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (w, h) = (sample.image.w, sample.image.h);
    let scale = rng.gen_range(0.5..=1.0);
    let cw = ((w as f64 * scale).round() as usize).clamp(1, w);
    let ch = ((h as f64 * scale).round() as usize).clamp(1, h);
    let crop = CropSpec {
        x: rng.gen_range(0..=w - cw),
        y: rng.gen_range(0..=h - ch),
        w: cw,
        h: ch,
    };
    augment_with(sample, crop, target)
}

/// Crops, resizes so the long side equals `target`, and pads the short side
/// to `target` with the crop's mean colour. Instances with less than half
/// their area inside the crop are flagged ignore; coordinates are clamped to
/// the resized crop.
pub fn augment_with(sample: &TextSample, crop: CropSpec, target: usize) -> TextSample {
    let src = &sample.image;
    let crop = CropSpec {
        x: crop.x.min(src.w - 1),
        y: crop.y.min(src.h - 1),
        w: crop.w.clamp(1, src.w - crop.x.min(src.w - 1)),
        h: crop.h.clamp(1, src.h - crop.y.min(src.h - 1)),
    };
    let k = target as f64 / crop.w.max(crop.h) as f64;
    let nw = ((crop.w as f64 * k).round() as usize).clamp(1, target);
    let nh = ((crop.h as f64 * k).round() as usize).clamp(1, target);
    let mut mean = [0.0f64; 3];
    for y in crop.y..crop.y + crop.h {
        for x in crop.x..crop.x + crop.w {
            let p = src.pixel(x, y);
            for c in 0..3 {
                mean[c] += p[c] as f64;
            }
        }
    }
    let n = (crop.w * crop.h) as f64;
    let mean = mean.map(|v| (v / n) as f32);
    let mut image = Image::filled(target, target, mean);
    let taps = |len_out: usize, len_in: usize, origin: usize| -> Vec<(usize, usize, f32)> {
        (0..len_out)
            .map(|d| {
                let s = ((d as f64 + 0.5) / k - 0.5).clamp(0.0, (len_in - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(len_in - 1);
                (origin + i0, origin + i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = taps(nw, crop.w, crop.x);
    let ys = taps(nh, crop.h, crop.y);
    for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
        for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
            let (a, b, c, d) = (src.pixel(x0, y0), src.pixel(x1, y0), src.pixel(x0, y1), src.pixel(x1, y1));
            let rgb = std::array::from_fn(|ch| {
                let top = if fx == 0.0 { a[ch] } else { a[ch] * (1.0 - fx) + b[ch] * fx };
                let bot = if fx == 0.0 { c[ch] } else { c[ch] * (1.0 - fx) + d[ch] * fx };
                if fy == 0.0 {
                    top
                } else {
                    top * (1.0 - fy) + bot * fy
                }
            });
            image.set_pixel(ox, oy, rgb);
        }
    }
    let window = [
        [crop.x as f64, crop.y as f64],
        [(crop.x + crop.w) as f64, crop.y as f64],
        [(crop.x + crop.w) as f64, (crop.y + crop.h) as f64],
        [crop.x as f64, (crop.y + crop.h) as f64],
    ];
    let (bw, bh) = (nw as f64, nh as f64);
    let instances = sample
        .instances
        .iter()
        .map(|inst| {
            let q = inst.quad;
            let area = q.area();
            let inside = if area > 0.0 {
                let mut poly = q.oriented().pts.to_vec();
                if !q.is_convex() {
                    // clip the hull instead; only the fraction matters here
                    poly = crate::geometry::convex_hull(&poly);
                }
                polygon_signed_area(&clip_polygon(&poly, &window)).abs() / area
            } else {
                0.0
            };
            let moved = q.map(|p| {
                [
                    ((p[0] - crop.x as f64) * k).clamp(0.0, bw),
                    ((p[1] - crop.y as f64) * k).clamp(0.0, bh),
                ]
            });
            let ignore = inst.ignore || inside < 0.5 || moved.area() < 1.0;
            Instance {
                quad: Quad::with_score(moved.pts, q.score),
                text: inst.text.clone(),
                ignore,
                style: inst.style,
            }
        })
        .collect();
    TextSample {
        image,
        instances,
        seed: sample.seed,
    }
}
