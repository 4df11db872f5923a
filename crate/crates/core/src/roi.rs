//! Perspective RoI transform: warps a quadrangle of a feature map into a
//! fixed-height, variable-width rectangle by homography and bilinear
//! sampling.

use std::rc::Rc;

use nalgebra::{Matrix3, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{Point, Quad};
use crate::tensor::{Scalar, Tensor, Var};

/// Projective map from RoI coordinates to source coordinates, `m[2][2] = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Homography {
    pub m: [[f64; 3]; 3],
}

impl Homography {
    pub fn identity() -> Self {
        Homography {
            m: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
        }
    }

    fn matrix(&self) -> Matrix3<f64> {
        Matrix3::from_fn(|r, c| self.m[r][c])
    }

    pub fn det(&self) -> f64 {
        self.matrix().determinant()
    }

    /// Projects `p`; `None` when it maps to the line at infinity.
    pub fn apply(&self, p: Point) -> Option<Point> {
        let m = &self.m;
        let u = m[0][0] * p[0] + m[0][1] * p[1] + m[0][2];
        let v = m[1][0] * p[0] + m[1][1] * p[1] + m[1][2];
        let w = m[2][0] * p[0] + m[2][1] * p[1] + m[2][2];
        if w.abs() < 1e-12 {
            return None;
        }
        Some([u / w, v / w])
    }

    /// Inverse map, renormalized so the bottom-right entry is 1.
    pub fn inverse(&self) -> Result<Homography> {
        let inv = self
            .matrix()
            .try_inverse()
            .ok_or_else(|| Error::DegenerateQuad("homography is singular".into()))?;
        let s = inv[(2, 2)];
        if s.abs() < 1e-12 {
            return Err(Error::DegenerateQuad("inverse not normalizable".into()));
        }
        Ok(Homography {
            m: std::array::from_fn(|r| std::array::from_fn(|c| inv[(r, c)] / s)),
        })
    }
}

/// Corners of the `w_t × h_t` target grid in the same order as quad vertices.
pub fn target_corners(w_t: usize, h_t: usize) -> [Point; 4] {
    let x1 = (w_t.max(2) - 1) as f64;
    let y1 = (h_t.max(2) - 1) as f64;
    [[0.0, 0.0], [x1, 0.0], [x1, y1], [0.0, y1]]
}

/// Homography taking the target grid corners onto the quad's corners.
///
/// A target extent of 1 is treated as 2 when placing the corners so the
/// system stays solvable; the single row or column then samples the quad's
/// first edge.
pub fn solve_homography(src: &Quad, w_t: usize, h_t: usize) -> Result<Homography> {
    if w_t == 0 || h_t == 0 {
        return Err(Error::Invalid(format!("target size {w_t}x{h_t}")));
    }
    homography_from_corners(&target_corners(w_t, h_t), &src.pts)
}

/// Homography mapping each `from[k]` onto `to[k]`, found by direct linear
/// transform with the bottom-right entry fixed to 1.
pub fn homography_from_corners(from: &[Point; 4], to: &[Point; 4]) -> Result<Homography> {
    if !from.iter().chain(to).flatten().all(|v| v.is_finite()) {
        return Err(Error::DegenerateQuad("non-finite corner".into()));
    }
    let mut a = SMatrix::<f64, 8, 8>::zeros();
    let mut b = SVector::<f64, 8>::zeros();
    for k in 0..4 {
        let ([x, y], [u, v]) = (from[k], to[k]);
        let r = 2 * k;
        a.row_mut(r)
            .copy_from_slice(&[x, y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y]);
        a.row_mut(r + 1)
            .copy_from_slice(&[0.0, 0.0, 0.0, x, y, 1.0, -v * x, -v * y]);
        b[r] = u;
        b[r + 1] = v;
    }
    let lu = a.lu();
    let scale = a.abs().max();
    let min_pivot = (0..8).map(|i| lu.u()[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > 1e-10 * scale.max(1.0)) {
        return Err(Error::DegenerateQuad(format!("singular corner system for {to:?}")));
    }
    let t = lu
        .solve(&b)
        .ok_or_else(|| Error::DegenerateQuad("singular corner system".into()))?;
    let h = Homography {
        m: [[t[0], t[1], t[2]], [t[3], t[4], t[5]], [t[6], t[7], 1.0]],
    };
    if h.det().abs() <= 1e-12 || !h.m.iter().flatten().all(|v| v.is_finite()) {
        return Err(Error::DegenerateQuad("homography is singular".into()));
    }
    Ok(h)
}

/// Target width for a quad: `h_t` times the ratio of mean horizontal to
/// mean vertical edge length, rounded and clamped to `[1, w_max]`.
pub fn roi_width(src: &Quad, h_t: usize, w_max: usize) -> usize {
    let horiz = (src.edge_len(0) + src.edge_len(2)) / 2.0;
    let vert = (src.edge_len(1) + src.edge_len(3)) / 2.0;
    if !(vert > 0.0) || !horiz.is_finite() {
        return w_max.max(1);
    }
    let w = (h_t as f64 * horiz / vert).round();
    (w.max(1.0) as usize).min(w_max.max(1))
}

/// Quad in feature-map coordinates, given its input-image coordinates.
pub fn to_feature_coords(q: &Quad, stride: f64) -> Quad {
    q.map(|p| [p[0] / stride, p[1] / stride])
}

/// Per-target-pixel bilinear taps: `(flat source pixel, weight)` with
/// out-of-bounds neighbours dropped.
fn sampling_taps(h: &Homography, hs: usize, ws: usize, w_t: usize, h_t: usize) -> Vec<Vec<(usize, f64)>> {
    let mut taps = Vec::with_capacity(w_t * h_t);
    for ty in 0..h_t {
        for tx in 0..w_t {
            let mut cell = Vec::with_capacity(4);
            if let Some([xs, ys]) = h.apply([tx as f64, ty as f64]) {
                let (x0, y0) = (xs.floor(), ys.floor());
                let (fx, fy) = (xs - x0, ys - y0);
                for (dy, wy) in [(0.0, 1.0 - fy), (1.0, fy)] {
                    for (dx, wx) in [(0.0, 1.0 - fx), (1.0, fx)] {
                        let (sx, sy) = (x0 + dx, y0 + dy);
                        let wgt = wx * wy;
                        if wgt != 0.0
                            && sx >= 0.0
                            && sy >= 0.0
                            && sx < ws as f64
                            && sy < hs as f64
                        {
                            cell.push((sy as usize * ws + sx as usize, wgt));
                        }
                    }
                }
            }
            taps.push(cell);
        }
    }
    taps
}

/// Samples the `h_t × w_t` RoI of image `batch` from `feats [N,Hs,Ws,C]`
/// through `h` (target → source), giving `[1, h_t, w_t, C]`. Out-of-bounds
/// neighbours contribute zero. Gradients flow into `feats` only.
pub fn perspective_sample<'t, T: Scalar>(
    feats: Var<'t, T>,
    batch: usize,
    h: &Homography,
    w_t: usize,
    h_t: usize,
) -> Result<Var<'t, T>> {
    let s = feats.shape();
    if s.len() != 4 || batch >= s[0] || w_t == 0 || h_t == 0 {
        return Err(Error::shape(
            "perspective_sample",
            format!("feats {s:?}, batch {batch}, target {w_t}x{h_t}"),
        ));
    }
    let (hs, ws, c) = (s[1], s[2], s[3]);
    let base = batch * hs * ws;
    let taps = Rc::new(sampling_taps(h, hs, ws, w_t, h_t));
    let fv = feats.value();
    let src = fv.data();
    let mut out = vec![T::zero(); w_t * h_t * c];
    for (k, cell) in taps.iter().enumerate() {
        let o = &mut out[k * c..(k + 1) * c];
        for &(p, wgt) in cell {
            let wgt = T::from_f64(wgt);
            let row = &src[(base + p) * c..(base + p + 1) * c];
            for (d, &v) in o.iter_mut().zip(row) {
                *d += wgt * v;
            }
        }
    }
    let id = feats.id();
    Ok(feats.tape().push(Tensor::new(vec![1, h_t, w_t, c], out)?, &[feats], || {
        Box::new(move |g, sink| {
            let Some(s) = sink.slot(id) else { return };
            for (k, cell) in taps.iter().enumerate() {
                let gk = &g[k * c..(k + 1) * c];
                for &(p, wgt) in cell {
                    let wgt = T::from_f64(wgt);
                    let dst = &mut s[(base + p) * c..(base + p + 1) * c];
                    for (d, &v) in dst.iter_mut().zip(gk) {
                        *d += wgt * v;
                    }
                }
            }
        })
    }))
}

/// Crops the RoI of an input-image quad from a stride-`stride` feature map.
/// Returns the sampled `[1, h_t, w_t, C]` map and `w_t`.
pub fn roi_align<'t, T: Scalar>(
    feats: Var<'t, T>,
    batch: usize,
    quad: &Quad,
    stride: f64,
    h_t: usize,
    w_max: usize,
) -> Result<(Var<'t, T>, usize)> {
    let q = to_feature_coords(quad, stride);
    let w_t = roi_width(&q, h_t, w_max);
    let h = solve_homography(&q, w_t, h_t)?;
    Ok((perspective_sample(feats, batch, &h, w_t, h_t)?, w_t))
}
