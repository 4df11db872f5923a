//! Dense quadrangle detection: score and corner-offset maps at stride 4,
//! their training targets and loss, and decoding into proposals.

use std::rc::Rc;

use log::warn;
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::Quad;
use crate::params::{Conv, Ctx, ParamStore};
use crate::tensor::{add, bce_with_logits, scale, sigmoid, smooth_l1, sub, weighted_sum, Scalar, Tensor, Var};

/// Feature stride of the detection maps.
pub const STRIDE: usize = 4;
/// Fraction of each vertex-to-centroid distance kept for the positive region.
pub const SHRINK_KEEP: f64 = 0.7;

/// Input-image coordinates of the centre of map pixel `(row, col)`.
pub fn pixel_center(row: usize, col: usize) -> [f64; 2] {
    [(STRIDE * col + STRIDE / 2) as f64, (STRIDE * row + STRIDE / 2) as f64]
}

#[derive(Debug, Clone, Copy)]
pub struct DetectionHead {
    score: Conv,
    geometry: Conv,
}

/// Raw head outputs for a batch: `logits [N,h,w,1]`, `score = σ(logits)`
/// and `geometry [N,h,w,8]` (offsets divided by `N_d`).
#[derive(Debug, Clone, Copy)]
pub struct DetectionMaps<'t, T> {
    pub logits: Var<'t, T>,
    pub score: Var<'t, T>,
    pub geometry: Var<'t, T>,
}

impl DetectionHead {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, channels: usize, rng: &mut impl Rng) -> Self {
        DetectionHead {
            score: Conv::new(store, "det.score", 3, channels, 1, 1, true, rng),
            geometry: Conv::new(store, "det.geometry", 3, channels, 8, 1, true, rng),
        }
    }

    pub fn predict_maps<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, fused: Var<'t, T>) -> Result<DetectionMaps<'t, T>> {
        let logits = self.score.forward(ctx, fused)?;
        Ok(DetectionMaps {
            logits,
            score: sigmoid(logits),
            geometry: self.geometry.forward(ctx, fused)?,
        })
    }
}

/// Per-image detection maps as plain arrays, row-major over `h × w`.
#[derive(Debug, Clone, PartialEq)]
pub struct MapValues {
    pub h: usize,
    pub w: usize,
    pub score: Vec<f64>,
    /// Eight channels per pixel.
    pub geometry: Vec<f64>,
}

impl MapValues {
    /// Extracts image `batch` from head outputs.
    pub fn from_maps<T: Scalar>(score: &Tensor<T>, geometry: &Tensor<T>, batch: usize) -> Result<Self> {
        let s = score.shape();
        if s.len() != 4 || s[3] != 1 || geometry.shape() != [s[0], s[1], s[2], 8] || batch >= s[0] {
            return Err(Error::shape(
                "detection maps",
                format!("score {s:?}, geometry {:?}", geometry.shape()),
            ));
        }
        let (h, w) = (s[1], s[2]);
        let px = h * w;
        Ok(MapValues {
            h,
            w,
            score: score.data()[batch * px..(batch + 1) * px].iter().map(|v| v.as_f64()).collect(),
            geometry: geometry.data()[batch * px * 8..(batch + 1) * px * 8]
                .iter()
                .map(|v| v.as_f64())
                .collect(),
        })
    }
}

/// Training targets for one image at map resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionTargets {
    pub h: usize,
    pub w: usize,
    /// 1 inside a shrunk non-ignored quad.
    pub score: Vec<f64>,
    /// Corner minus pixel centre over `N_d`, eight channels, zero off
    /// positives.
    pub geometry: Vec<f64>,
    /// 0 inside ignored quads.
    pub mask: Vec<f64>,
    /// Degenerate annotations left out.
    pub skipped: usize,
}

impl DetectionTargets {
    pub fn num_positive(&self) -> usize {
        self.score
            .iter()
            .zip(&self.mask)
            .filter(|(s, m)| **s > 0.5 && **m > 0.5)
            .count()
    }

    /// Target maps viewed as predictions.
    pub fn as_map_values(&self) -> MapValues {
        MapValues {
            h: self.h,
            w: self.w,
            score: self.score.clone(),
            geometry: self.geometry.clone(),
        }
    }
}

/// Quad with every vertex pulled toward the vertex mean.
pub fn shrink(q: &Quad, keep: f64) -> Quad {
    let c = q.centroid();
    q.map(|v| [c[0] + keep * (v[0] - c[0]), c[1] + keep * (v[1] - c[1])])
}

/// Rasterizes annotations `(quad, ignore)` of an `img_h × img_w` image.
pub fn make_targets(quads: &[(Quad, bool)], img_h: usize, img_w: usize, nd: f64) -> DetectionTargets {
    let (h, w) = (img_h.div_ceil(STRIDE), img_w.div_ceil(STRIDE));
    let mut t = DetectionTargets {
        h,
        w,
        score: vec![0.0; h * w],
        geometry: vec![0.0; h * w * 8],
        mask: vec![1.0; h * w],
        skipped: 0,
    };
    for (q, ignore) in quads {
        if !(q.area() >= 1.0) || !q.is_simple() {
            t.skipped += 1;
            continue;
        }
        let region = if *ignore { *q } else { shrink(q, SHRINK_KEEP) };
        let (x0, y0, x1, y1) = region.bounds();
        let col_range = pixel_range(x0, x1, w);
        let row_range = pixel_range(y0, y1, h);
        for i in row_range {
            for j in col_range.clone() {
                let p = pixel_center(i, j);
                if !region.contains(p) {
                    continue;
                }
                let k = i * w + j;
                if *ignore {
                    t.mask[k] = 0.0;
                    continue;
                }
                t.score[k] = 1.0;
                for (c, v) in q.pts.iter().enumerate() {
                    t.geometry[k * 8 + 2 * c] = (v[0] - p[0]) / nd;
                    t.geometry[k * 8 + 2 * c + 1] = (v[1] - p[1]) / nd;
                }
            }
        }
    }
    if t.skipped > 0 {
        warn!("skipped {} degenerate annotation(s)", t.skipped);
    }
    t
}

/// Map indices whose pixel centres may fall within `[lo, hi]`.
fn pixel_range(lo: f64, hi: f64, len: usize) -> std::ops::Range<usize> {
    let s = STRIDE as f64;
    let half = s / 2.0;
    let a = ((lo - half) / s).floor().max(0.0) as usize;
    let b = (((hi - half) / s).ceil() + 1.0).max(0.0) as usize;
    a.min(len)..b.min(len)
}

/// Components of the detection loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetLossParts {
    pub cls: f64,
    pub quad: f64,
    pub positives: usize,
}

/// `L_quad + λ·L_cls` for a batch whose targets are listed per image.
///
/// `L_cls` is binary cross-entropy over unmasked pixels with the positive and
/// negative classes each weighted to half of the total (or all of it when
/// only one class is present). `L_quad` is the mean over positive pixels of
/// the summed smooth-L1 geometry error, zero when there are none.
pub fn detection_loss<'t, T: Scalar>(
    maps: &DetectionMaps<'t, T>,
    targets: &[DetectionTargets],
    lambda: f64,
) -> Result<(Var<'t, T>, DetLossParts)> {
    let s = maps.logits.shape();
    if s.len() != 4 || s[0] != targets.len() || targets.iter().any(|t| t.h != s[1] || t.w != s[2]) {
        return Err(Error::shape(
            "detection_loss",
            format!("maps {s:?} vs {} target image(s)", targets.len()),
        ));
    }
    let mut y = Vec::new();
    let mut cls_w = Vec::new();
    let mut geo_gt = Vec::new();
    let mut geo_w = Vec::new();
    let (mut npos, mut nneg) = (0usize, 0usize);
    for t in targets {
        for k in 0..t.h * t.w {
            if t.mask[k] > 0.5 {
                if t.score[k] > 0.5 {
                    npos += 1;
                } else {
                    nneg += 1;
                }
            }
        }
    }
    let (wp, wn) = match (npos, nneg) {
        (0, 0) => (0.0, 0.0),
        (0, n) => (0.0, 1.0 / n as f64),
        (p, 0) => (1.0 / p as f64, 0.0),
        (p, n) => (0.5 / p as f64, 0.5 / n as f64),
    };
    for t in targets {
        for k in 0..t.h * t.w {
            let on = t.mask[k] > 0.5;
            let pos = on && t.score[k] > 0.5;
            y.push(T::from_f64(t.score[k]));
            cls_w.push(T::from_f64(match (on, pos) {
                (false, _) => 0.0,
                (true, true) => wp,
                (true, false) => wn,
            }));
            let gw = if pos { 1.0 / npos as f64 } else { 0.0 };
            for c in 0..8 {
                geo_gt.push(T::from_f64(t.geometry[k * 8 + c]));
                geo_w.push(T::from_f64(gw));
            }
        }
    }
    let tape = maps.logits.tape();
    let cls = bce_with_logits(maps.logits, Rc::new(y), Rc::new(cls_w))?;
    let gt = tape.constant(Tensor::new(maps.geometry.shape(), geo_gt)?);
    let quad = weighted_sum(smooth_l1(sub(maps.geometry, gt)?), Rc::new(geo_w))?;
    let parts = DetLossParts {
        cls: cls.item().as_f64(),
        quad: quad.item().as_f64(),
        positives: npos,
    };
    Ok((add(quad, scale(cls, T::from_f64(lambda)))?, parts))
}

/// Proposals from every pixel scoring above `thresh`: corners are the pixel
/// centre plus `N_d` times the predicted offsets. Quads that are
/// self-intersecting, of non-positive area or concave are dropped.
pub fn decode_quads(maps: &MapValues, thresh: f64, nd: f64) -> Vec<Quad> {
    let mut out = Vec::new();
    for i in 0..maps.h {
        for j in 0..maps.w {
            let k = i * maps.w + j;
            let p = maps.score[k];
            if !(p > thresh) {
                continue;
            }
            let c = pixel_center(i, j);
            let g = &maps.geometry[k * 8..k * 8 + 8];
            let pts = std::array::from_fn(|v| [c[0] + nd * g[2 * v], c[1] + nd * g[2 * v + 1]]);
            let q = Quad::with_score(pts, p);
            if q.is_valid() && q.is_convex() {
                out.push(q);
            }
        }
    }
    out
}
