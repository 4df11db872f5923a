//! Element-wise, reduction, linear-algebra and layout primitives.

use std::rc::Rc;

use super::{numel, split_at_axis, Scalar, Tensor, Var};
use crate::error::{Error, Result};

fn same_shape<T: Scalar>(op: &'static str, a: Var<'_, T>, b: Var<'_, T>) -> Result<()> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa != sb {
        return Err(Error::shape(op, format!("{sa:?} vs {sb:?}")));
    }
    Ok(())
}

fn check_axis(op: &'static str, shape: &[usize], axis: usize) -> Result<()> {
    if axis >= shape.len() {
        return Err(Error::shape(op, format!("axis {axis} out of range for {shape:?}")));
    }
    Ok(())
}

pub fn add<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("add", a, b)?;
    let (av, bv) = (a.value(), b.value());
    let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x + y).collect();
    let out = Tensor::new(av.shape().to_vec(), data)?;
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape().push(out, &[a, b], || {
        Box::new(move |g, sink| {
            sink.add(ia, g);
            sink.add(ib, g);
        })
    }))
}

pub fn sub<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("sub", a, b)?;
    let (av, bv) = (a.value(), b.value());
    let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x - y).collect();
    let out = Tensor::new(av.shape().to_vec(), data)?;
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape().push(out, &[a, b], || {
        Box::new(move |g, sink| {
            sink.add(ia, g);
            if let Some(s) = sink.slot(ib) {
                for (d, &v) in s.iter_mut().zip(g) {
                    *d -= v;
                }
            }
        })
    }))
}

pub fn mul<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    same_shape("mul", a, b)?;
    let (av, bv) = (a.value(), b.value());
    let data = av.data().iter().zip(bv.data()).map(|(&x, &y)| x * y).collect();
    let out = Tensor::new(av.shape().to_vec(), data)?;
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape().push(out, &[a, b], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ia) {
                for ((d, &gv), &y) in s.iter_mut().zip(g).zip(bv.data()) {
                    *d += gv * y;
                }
            }
            if let Some(s) = sink.slot(ib) {
                for ((d, &gv), &x) in s.iter_mut().zip(g).zip(av.data()) {
                    *d += gv * x;
                }
            }
        })
    }))
}

pub fn scale<'t, T: Scalar>(x: Var<'t, T>, factor: T) -> Var<'t, T> {
    let xv = x.value();
    let out = Tensor::from_fn(xv.shape().to_vec(), |i| xv.data()[i] * factor);
    let ix = x.id();
    x.tape().push(out, &[x], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                for (d, &gv) in s.iter_mut().zip(g) {
                    *d += gv * factor;
                }
            }
        })
    })
}

/// Adds a bias vector along the last axis.
pub fn add_bias<'t, T: Scalar>(x: Var<'t, T>, bias: Var<'t, T>) -> Result<Var<'t, T>> {
    let xs = x.shape();
    let c = *xs.last().unwrap();
    if bias.shape() != [c] {
        return Err(Error::shape("add_bias", format!("{xs:?} + {:?}", bias.shape())));
    }
    let (xv, bv) = (x.value(), bias.value());
    let mut data = xv.data().to_vec();
    for row in data.chunks_exact_mut(c) {
        for (v, &b) in row.iter_mut().zip(bv.data()) {
            *v += b;
        }
    }
    let out = Tensor::new(xs, data)?;
    let (ix, ib) = (x.id(), bias.id());
    Ok(x.tape().push(out, &[x, bias], || {
        Box::new(move |g, sink| {
            sink.add(ix, g);
            if let Some(s) = sink.slot(ib) {
                for row in g.chunks_exact(c) {
                    for (d, &v) in s.iter_mut().zip(row) {
                        *d += v;
                    }
                }
            }
        })
    }))
}

fn unary<'t, T: Scalar>(
    x: Var<'t, T>,
    f: impl Fn(T) -> T,
    // derivative expressed through input and output
    df: impl Fn(T, T) -> T + 'static,
) -> Var<'t, T> {
    let xv = x.value();
    let out = Tensor::from_fn(xv.shape().to_vec(), |i| f(xv.data()[i]));
    let ix = x.id();
    let out_rc = Rc::new(out.clone());
    x.tape().push(out, &[x], move || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                for (((d, &gv), &xi), &yi) in
                    s.iter_mut().zip(g).zip(xv.data()).zip(out_rc.data())
                {
                    *d += gv * df(xi, yi);
                }
            }
        })
    })
}

pub fn sigmoid<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    unary(x, sigmoid_scalar, |_, y| y * (T::one() - y))
}

pub(crate) fn sigmoid_scalar<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn tanh<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
}

pub fn relu<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    unary(
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |v, _| if v > T::zero() { T::one() } else { T::zero() },
    )
}

/// Smooth-L1 with unit transition: `0.5 x²` for `|x| < 1`, else `|x| - 0.5`.
pub fn smooth_l1<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    unary(x, smooth_l1_scalar, |v, _| {
        if v.abs() < T::one() {
            v
        } else {
            v.signum()
        }
    })
}

pub(crate) fn smooth_l1_scalar<T: Scalar>(v: T) -> T {
    let a = v.abs();
    let half = T::from_f64(0.5);
    if a < T::one() {
        half * v * v
    } else {
        a - half
    }
}

pub fn sum<'t, T: Scalar>(x: Var<'t, T>) -> Var<'t, T> {
    let xv = x.value();
    let total: T = xv.data().iter().copied().sum();
    let n = xv.numel();
    let ix = x.id();
    x.tape().push(Tensor::scalar(total), &[x], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                debug_assert_eq!(s.len(), n);
                for d in s.iter_mut() {
                    *d += g[0];
                }
            }
        })
    })
}

/// `Σ w ⊙ x` against constant weights of the same size.
pub fn weighted_sum<'t, T: Scalar>(x: Var<'t, T>, weights: Rc<Vec<T>>) -> Result<Var<'t, T>> {
    let xv = x.value();
    if weights.len() != xv.numel() {
        return Err(Error::shape(
            "weighted_sum",
            format!("{} weights for {} elements", weights.len(), xv.numel()),
        ));
    }
    let total: T = xv.data().iter().zip(weights.iter()).map(|(&a, &w)| a * w).sum();
    let ix = x.id();
    Ok(x.tape().push(Tensor::scalar(total), &[x], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                for (d, &w) in s.iter_mut().zip(weights.iter()) {
                    *d += g[0] * w;
                }
            }
        })
    }))
}

/// Matrix product of `[m, k]` and `[k, n]`.
pub fn matmul<'t, T: Scalar>(a: Var<'t, T>, b: Var<'t, T>) -> Result<Var<'t, T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let (av, bv) = (a.value(), b.value());
    let mut out = vec![T::zero(); m * n];
    T::gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
    let (ia, ib) = (a.id(), b.id());
    Ok(a.tape().push(Tensor::new(vec![m, n], out)?, &[a, b], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ia) {
                // dA = G · Bᵀ
                T::gemm(m, n, k, g, false, bv.data(), true, s, true);
            }
            if let Some(s) = sink.slot(ib) {
                // dB = Aᵀ · G
                T::gemm(k, m, n, av.data(), true, g, false, s, true);
            }
        })
    }))
}

pub fn reshape<'t, T: Scalar>(x: Var<'t, T>, shape: &[usize]) -> Result<Var<'t, T>> {
    let xv = x.value();
    if numel(shape) != xv.numel() {
        return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", xv.shape())));
    }
    let out = Tensor::new(shape.to_vec(), xv.data().to_vec())?;
    let ix = x.id();
    Ok(x.tape().push(out, &[x], || Box::new(move |g, sink| sink.add(ix, g))))
}

/// `x[.., start..start+len, ..]` along `axis`.
pub fn slice_axis<'t, T: Scalar>(
    x: Var<'t, T>,
    axis: usize,
    start: usize,
    len: usize,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    check_axis("slice_axis", &shape, axis)?;
    if len == 0 || start + len > shape[axis] {
        return Err(Error::shape(
            "slice_axis",
            format!("range {start}..{} of axis {axis} in {shape:?}", start + len),
        ));
    }
    let (outer, n, inner) = split_at_axis(&shape, axis);
    let xv = x.value();
    let mut data = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let base = (o * n + start) * inner;
        data.extend_from_slice(&xv.data()[base..base + len * inner]);
    }
    let mut out_shape = shape;
    out_shape[axis] = len;
    let ix = x.id();
    Ok(x.tape().push(Tensor::new(out_shape, data)?, &[x], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                for o in 0..outer {
                    let base = (o * n + start) * inner;
                    let src = &g[o * len * inner..(o + 1) * len * inner];
                    for (d, &v) in s[base..base + len * inner].iter_mut().zip(src) {
                        *d += v;
                    }
                }
            }
        })
    }))
}

/// Concatenation along `axis`; all other extents must agree.
pub fn concat<'t, T: Scalar>(xs: &[Var<'t, T>], axis: usize) -> Result<Var<'t, T>> {
    let first = xs
        .first()
        .ok_or_else(|| Error::shape("concat", "no inputs"))?
        .shape();
    check_axis("concat", &first, axis)?;
    let mut lens = Vec::with_capacity(xs.len());
    for x in xs {
        let s = x.shape();
        let compatible = s.len() == first.len()
            && s.iter()
                .zip(&first)
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::shape("concat", format!("{first:?} vs {s:?}")));
        }
        lens.push(s[axis]);
    }
    let total: usize = lens.iter().sum();
    let (outer, _, inner) = split_at_axis(&first, axis);
    let values: Vec<_> = xs.iter().map(|x| x.value()).collect();
    let mut data = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &l) in values.iter().zip(&lens) {
            data.extend_from_slice(&v.data()[o * l * inner..(o + 1) * l * inner]);
        }
    }
    let mut out_shape = first;
    out_shape[axis] = total;
    let ids: Vec<usize> = xs.iter().map(|x| x.id()).collect();
    Ok(xs[0].tape().push(Tensor::new(out_shape, data)?, xs, || {
        Box::new(move |g, sink| {
            let mut offset = 0;
            for (&id, &l) in ids.iter().zip(&lens) {
                if let Some(s) = sink.slot(id) {
                    for o in 0..outer {
                        let src = (o * total + offset) * inner;
                        let dst = o * l * inner;
                        for (d, &v) in s[dst..dst + l * inner]
                            .iter_mut()
                            .zip(&g[src..src + l * inner])
                        {
                            *d += v;
                        }
                    }
                }
                offset += l;
            }
        })
    }))
}

/// Zero-pads `axis` to `new_len`, placing the input at `offset`.
pub fn pad_axis<'t, T: Scalar>(
    x: Var<'t, T>,
    axis: usize,
    new_len: usize,
    offset: usize,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    check_axis("pad_axis", &shape, axis)?;
    let n = shape[axis];
    if offset + n > new_len {
        return Err(Error::shape("pad_axis", format!("{n}+{offset} > {new_len}")));
    }
    let (outer, _, inner) = split_at_axis(&shape, axis);
    let xv = x.value();
    let mut data = vec![T::zero(); outer * new_len * inner];
    for o in 0..outer {
        let dst = (o * new_len + offset) * inner;
        data[dst..dst + n * inner].copy_from_slice(&xv.data()[o * n * inner..(o + 1) * n * inner]);
    }
    let mut out_shape = shape;
    out_shape[axis] = new_len;
    let ix = x.id();
    Ok(x.tape().push(Tensor::new(out_shape, data)?, &[x], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                for o in 0..outer {
                    let src = (o * new_len + offset) * inner;
                    for (d, &v) in s[o * n * inner..(o + 1) * n * inner]
                        .iter_mut()
                        .zip(&g[src..src + n * inner])
                    {
                        *d += v;
                    }
                }
            }
        })
    }))
}

/// Reverses the order of entries along `axis`.
pub fn flip_axis<'t, T: Scalar>(x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
    let shape = x.shape();
    check_axis("flip_axis", &shape, axis)?;
    let (outer, n, inner) = split_at_axis(&shape, axis);
    let flip = move |src: &[T], dst: &mut [T], accumulate: bool| {
        for o in 0..outer {
            for a in 0..n {
                let s = (o * n + a) * inner;
                let d = (o * n + (n - 1 - a)) * inner;
                for i in 0..inner {
                    if accumulate {
                        dst[d + i] += src[s + i];
                    } else {
                        dst[d + i] = src[s + i];
                    }
                }
            }
        }
    };
    let xv = x.value();
    let mut data = vec![T::zero(); xv.numel()];
    flip(xv.data(), &mut data, false);
    let ix = x.id();
    Ok(x.tape().push(Tensor::new(shape, data)?, &[x], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ix) {
                flip(g, s, true);
            }
        })
    }))
}

fn softmax_impl<'t, T: Scalar>(
    x: Var<'t, T>,
    axis: usize,
    mask: Option<Rc<Vec<bool>>>,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    check_axis("softmax", &shape, axis)?;
    let (outer, n, inner) = split_at_axis(&shape, axis);
    let xv = x.value();
    if let Some(m) = &mask {
        if m.len() != xv.numel() {
            return Err(Error::shape("softmax", "mask size differs from input"));
        }
    }
    let on = |idx: usize| mask.as_ref().is_none_or(|m| m[idx]);
    let mut out = vec![T::zero(); xv.numel()];
    let d = xv.data();
    for o in 0..outer {
        for i in 0..inner {
            let idx = |a: usize| (o * n + a) * inner + i;
            let mut mx = T::neg_infinity();
            for a in 0..n {
                if on(idx(a)) && d[idx(a)] > mx {
                    mx = d[idx(a)];
                }
            }
            if mx == T::neg_infinity() {
                // fully masked lane: all zeros
                continue;
            }
            let mut exps = vec![0.0f64; n];
            let mut total = 0.0f64;
            for a in 0..n {
                if on(idx(a)) {
                    exps[a] = (d[idx(a)].as_f64() - mx.as_f64()).exp();
                    total += exps[a];
                }
            }
            for a in 0..n {
                out[idx(a)] = T::from_f64(exps[a] / total);
            }
        }
    }
    let out = Tensor::new(shape, out)?;
    let y = Rc::new(out.clone());
    let ix = x.id();
    Ok(x.tape().push(out, &[x], || {
        Box::new(move |g, sink| {
            let Some(s) = sink.slot(ix) else { return };
            let y = y.data();
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |a: usize| (o * n + a) * inner + i;
                    let dot: T = (0..n).map(|a| y[idx(a)] * g[idx(a)]).sum();
                    for a in 0..n {
                        s[idx(a)] += y[idx(a)] * (g[idx(a)] - dot);
                    }
                }
            }
        })
    }))
}

/// Softmax along `axis`.
pub fn softmax<'t, T: Scalar>(x: Var<'t, T>, axis: usize) -> Result<Var<'t, T>> {
    softmax_impl(x, axis, None)
}

/// Softmax along `axis` restricted to entries where `mask` is true; masked
/// entries get probability zero.
pub fn softmax_masked<'t, T: Scalar>(
    x: Var<'t, T>,
    axis: usize,
    mask: Rc<Vec<bool>>,
) -> Result<Var<'t, T>> {
    softmax_impl(x, axis, Some(mask))
}
