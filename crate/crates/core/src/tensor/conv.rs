//! Convolution and resampling on `[N, H, W, C]` feature maps.

use std::rc::Rc;

use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Output extent `ceil(in / stride)`, padding split with the extra
    /// element at the bottom/right.
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    n: usize,
    h: usize,
    w: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    cout: usize,
    stride: usize,
    ho: usize,
    wo: usize,
    pad_top: usize,
    pad_left: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.kh * self.kw * self.cin
    }

    fn rows(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1
    }

    /// Visits every (column-matrix offset, input offset) pair of in-bounds taps.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize)) {
        let patch = self.patch();
        for b in 0..self.n {
            for oy in 0..self.ho {
                for ox in 0..self.wo {
                    let row = ((b * self.ho + oy) * self.wo + ox) * patch;
                    for ky in 0..self.kh {
                        let iy = (oy * self.stride + ky) as isize - self.pad_top as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        for kx in 0..self.kw {
                            let ix = (ox * self.stride + kx) as isize - self.pad_left as isize;
                            if ix < 0 || ix >= self.w as isize {
                                continue;
                            }
                            let col = row + (ky * self.kw + kx) * self.cin;
                            let src = ((b * self.h + iy as usize) * self.w + ix as usize) * self.cin;
                            f(col, src);
                        }
                    }
                }
            }
        }
    }
}

fn out_extent(len: usize, k: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    match padding {
        Padding::Same => {
            let out = len.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(len);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if len < k {
                return Err(Error::shape("conv2d", format!("kernel {k} exceeds input {len}")));
            }
            Ok(((len - k) / stride + 1, 0))
        }
    }
}

/// 2-D cross-correlation of `input [N,H,W,Cin]` with `kernel [kh,kw,Cin,Cout]`.
pub fn conv2d<'t, T: Scalar>(
    input: Var<'t, T>,
    kernel: Var<'t, T>,
    stride: usize,
    padding: Padding,
) -> Result<Var<'t, T>> {
    let (si, sk) = (input.shape(), kernel.shape());
    if si.len() != 4 || sk.len() != 4 {
        return Err(Error::shape("conv2d", format!("input {si:?}, kernel {sk:?}")));
    }
    if si[3] != sk[2] {
        return Err(Error::shape(
            "conv2d",
            format!("input has {} channels, kernel expects {}", si[3], sk[2]),
        ));
    }
    if stride == 0 {
        return Err(Error::Invalid("conv2d stride must be >= 1".into()));
    }
    if padding == Padding::Same && (sk[0] % 2 == 0 || sk[1] % 2 == 0) {
        return Err(Error::shape("conv2d", "same padding needs odd kernel extents"));
    }
    let (ho, pad_top) = out_extent(si[1], sk[0], stride, padding)?;
    let (wo, pad_left) = out_extent(si[2], sk[1], stride, padding)?;
    let g = ConvGeom {
        n: si[0],
        h: si[1],
        w: si[2],
        cin: si[3],
        kh: sk[0],
        kw: sk[1],
        cout: sk[3],
        stride,
        ho,
        wo,
        pad_top,
        pad_left,
    };
    let (xv, kv) = (input.value(), kernel.value());
    let cols: Rc<Vec<T>> = if g.pointwise() {
        Rc::new(xv.data().to_vec())
    } else {
        let mut cols = vec![T::zero(); g.rows() * g.patch()];
        let x = xv.data();
        let cin = g.cin;
        g.for_each_tap(|col, src| cols[col..col + cin].copy_from_slice(&x[src..src + cin]));
        Rc::new(cols)
    };
    let (m, kk, co) = (g.rows(), g.patch(), g.cout);
    let mut out = vec![T::zero(); m * co];
    T::gemm(m, kk, co, &cols, false, kv.data(), false, &mut out, false);
    let out = Tensor::new(vec![g.n, ho, wo, co], out)?;
    let (ii, ik) = (input.id(), kernel.id());
    Ok(input.tape().push(out, &[input, kernel], || {
        Box::new(move |grad, sink| {
            if let Some(s) = sink.slot(ik) {
                T::gemm(kk, m, co, &cols, true, grad, false, s, true);
            }
            if sink.wants(ii) {
                let s = sink.slot(ii).unwrap();
                if g.pointwise() {
                    T::gemm(m, co, kk, grad, false, kv.data(), true, s, true);
                } else {
                    let mut dcols = vec![T::zero(); m * kk];
                    T::gemm(m, co, kk, grad, false, kv.data(), true, &mut dcols, false);
                    let cin = g.cin;
                    g.for_each_tap(|col, src| {
                        for c in 0..cin {
                            s[src + c] += dcols[col + c];
                        }
                    });
                }
            }
        })
    }))
}

/// Source taps for one output coordinate under the align-corners-false
/// convention: `src = max(0, (dst + 0.5) / factor - 0.5)`.
fn bilinear_taps(out_len: usize, in_len: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..out_len)
        .map(|d| {
            let src = ((d as f64 + 0.5) / factor as f64 - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_len - 1);
            let i1 = (i0 + 1).min(in_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling of `[N,H,W,C]` by an integer factor.
pub fn upsample_bilinear<'t, T: Scalar>(x: Var<'t, T>, factor: usize) -> Result<Var<'t, T>> {
    let s = x.shape();
    if s.len() != 4 || factor == 0 {
        return Err(Error::shape("upsample_bilinear", format!("{s:?} by {factor}")));
    }
    if factor == 1 {
        return super::reshape(x, &s);
    }
    let (n, h, w, c) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = (h * factor, w * factor);
    let ys = Rc::new(bilinear_taps(ho, h, factor));
    let xs = Rc::new(bilinear_taps(wo, w, factor));
    let xv = x.value();
    let src = xv.data();
    let mut out = vec![T::zero(); n * ho * wo * c];
    for b in 0..n {
        for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
            let fy = T::from_f64(fy);
            for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                let fx = T::from_f64(fx);
                let w00 = (T::one() - fy) * (T::one() - fx);
                let w01 = (T::one() - fy) * fx;
                let w10 = fy * (T::one() - fx);
                let w11 = fy * fx;
                let o = ((b * ho + oy) * wo + ox) * c;
                let p00 = ((b * h + y0) * w + x0) * c;
                let p01 = ((b * h + y0) * w + x1) * c;
                let p10 = ((b * h + y1) * w + x0) * c;
                let p11 = ((b * h + y1) * w + x1) * c;
                for ch in 0..c {
                    out[o + ch] = w00 * src[p00 + ch]
                        + w01 * src[p01 + ch]
                        + w10 * src[p10 + ch]
                        + w11 * src[p11 + ch];
                }
            }
        }
    }
    let ix = x.id();
    Ok(x.tape().push(Tensor::new(vec![n, ho, wo, c], out)?, &[x], || {
        Box::new(move |g, sink| {
            let Some(s) = sink.slot(ix) else { return };
            for b in 0..n {
                for (oy, &(y0, y1, fy)) in ys.iter().enumerate() {
                    let fy = T::from_f64(fy);
                    for (ox, &(x0, x1, fx)) in xs.iter().enumerate() {
                        let fx = T::from_f64(fx);
                        let o = ((b * ho + oy) * wo + ox) * c;
                        let taps = [
                            (((b * h + y0) * w + x0) * c, (T::one() - fy) * (T::one() - fx)),
                            (((b * h + y0) * w + x1) * c, (T::one() - fy) * fx),
                            (((b * h + y1) * w + x0) * c, fy * (T::one() - fx)),
                            (((b * h + y1) * w + x1) * c, fy * fx),
                        ];
                        for (p, wt) in taps {
                            for ch in 0..c {
                                s[p + ch] += wt * g[o + ch];
                            }
                        }
                    }
                }
            }
        })
    }))
}
