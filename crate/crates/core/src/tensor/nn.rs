//! Fused neural-network primitives with hand-written vector-Jacobian products.

use std::rc::Rc;

use super::ops::sigmoid_scalar;
use super::{Scalar, Tensor, Var};
use crate::error::{Error, Result};

/// Per-channel batch statistics from a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Unbiased variance, used for the running estimate.
    pub var: Vec<T>,
}

fn check_channel_param<T: Scalar>(op: &'static str, p: Var<'_, T>, c: usize) -> Result<()> {
    if p.shape() != [c] {
        return Err(Error::shape(op, format!("expected [{c}], got {:?}", p.shape())));
    }
    Ok(())
}

/// Batch normalization over every axis but the last, using the statistics of
/// the current batch.
pub fn batch_norm_train<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    eps: T,
) -> Result<(Var<'t, T>, BatchStats<T>)> {
    let shape = x.shape();
    let c = *shape.last().unwrap();
    check_channel_param("batch_norm", gamma, c)?;
    check_channel_param("batch_norm", beta, c)?;
    let xv = x.value();
    let m = xv.numel() / c;
    let mf = T::from_f64(m as f64);
    let mut mean = vec![T::zero(); c];
    for row in xv.data().chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|v| *v = *v / mf);
    let mut var = vec![T::zero(); c];
    for row in xv.data().chunks_exact(c) {
        for ((a, &v), &mu) in var.iter_mut().zip(row).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let biased: Vec<T> = var.iter().map(|&v| v / mf).collect();
    let unbiased: Vec<T> = var
        .iter()
        .map(|&v| if m > 1 { v / T::from_f64((m - 1) as f64) } else { T::zero() })
        .collect();
    let inv_std: Rc<Vec<T>> = Rc::new(biased.iter().map(|&v| T::one() / (v + eps).sqrt()).collect());
    let (gv, bv) = (gamma.value(), beta.value());
    let mut xhat = vec![T::zero(); xv.numel()];
    let mut out = vec![T::zero(); xv.numel()];
    for ((xr, hr), or) in xv
        .data()
        .chunks_exact(c)
        .zip(xhat.chunks_exact_mut(c))
        .zip(out.chunks_exact_mut(c))
    {
        for ch in 0..c {
            hr[ch] = (xr[ch] - mean[ch]) * inv_std[ch];
            or[ch] = gv.data()[ch] * hr[ch] + bv.data()[ch];
        }
    }
    let xhat = Rc::new(xhat);
    let (ix, ig, ib) = (x.id(), gamma.id(), beta.id());
    let y = x.tape().push(Tensor::new(shape, out)?, &[x, gamma, beta], || {
        Box::new(move |g, sink| {
            let mut sum_g = vec![T::zero(); c];
            let mut sum_gx = vec![T::zero(); c];
            for (gr, hr) in g.chunks_exact(c).zip(xhat.chunks_exact(c)) {
                for ch in 0..c {
                    sum_g[ch] += gr[ch];
                    sum_gx[ch] += gr[ch] * hr[ch];
                }
            }
            if let Some(s) = sink.slot(ig) {
                for (d, &v) in s.iter_mut().zip(&sum_gx) {
                    *d += v;
                }
            }
            if let Some(s) = sink.slot(ib) {
                for (d, &v) in s.iter_mut().zip(&sum_g) {
                    *d += v;
                }
            }
            if let Some(s) = sink.slot(ix) {
                let gam = gv.data();
                for ((sr, gr), hr) in s
                    .chunks_exact_mut(c)
                    .zip(g.chunks_exact(c))
                    .zip(xhat.chunks_exact(c))
                {
                    for ch in 0..c {
                        let k = gam[ch] * inv_std[ch] / mf;
                        sr[ch] += k * (mf * gr[ch] - sum_g[ch] - hr[ch] * sum_gx[ch]);
                    }
                }
            }
        })
    });
    Ok((y, BatchStats { mean, var: unbiased }))
}

/// Batch normalization with fixed (running) statistics.
pub fn batch_norm_eval<'t, T: Scalar>(
    x: Var<'t, T>,
    gamma: Var<'t, T>,
    beta: Var<'t, T>,
    mean: &[T],
    var: &[T],
    eps: T,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let c = *shape.last().unwrap();
    check_channel_param("batch_norm", gamma, c)?;
    check_channel_param("batch_norm", beta, c)?;
    if mean.len() != c || var.len() != c {
        return Err(Error::shape("batch_norm", "running statistics size"));
    }
    let inv_std: Rc<Vec<T>> = Rc::new(var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect());
    let mean: Rc<Vec<T>> = Rc::new(mean.to_vec());
    let (xv, gv, bv) = (x.value(), gamma.value(), beta.value());
    let mut out = vec![T::zero(); xv.numel()];
    for (xr, or) in xv.data().chunks_exact(c).zip(out.chunks_exact_mut(c)) {
        for ch in 0..c {
            or[ch] = gv.data()[ch] * (xr[ch] - mean[ch]) * inv_std[ch] + bv.data()[ch];
        }
    }
    let (ix, ig, ib) = (x.id(), gamma.id(), beta.id());
    Ok(x.tape().push(Tensor::new(shape, out)?, &[x, gamma, beta], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(ig) {
                for (gr, xr) in g.chunks_exact(c).zip(xv.data().chunks_exact(c)) {
                    for ch in 0..c {
                        s[ch] += gr[ch] * (xr[ch] - mean[ch]) * inv_std[ch];
                    }
                }
            }
            if let Some(s) = sink.slot(ib) {
                for gr in g.chunks_exact(c) {
                    for ch in 0..c {
                        s[ch] += gr[ch];
                    }
                }
            }
            if let Some(s) = sink.slot(ix) {
                for (sr, gr) in s.chunks_exact_mut(c).zip(g.chunks_exact(c)) {
                    for ch in 0..c {
                        sr[ch] += gr[ch] * gv.data()[ch] * inv_std[ch];
                    }
                }
            }
        })
    }))
}

/// Weights of one GRU layer. Gate blocks along the `3H` axis are ordered
/// reset, update, candidate.
#[derive(Clone, Copy)]
pub struct GruWeights<'t, T> {
    /// `[Din, 3H]`
    pub wx: Var<'t, T>,
    /// `[H, 3H]`
    pub wh: Var<'t, T>,
    /// `[3H]`
    pub bx: Var<'t, T>,
    /// `[3H]`
    pub bh: Var<'t, T>,
}

/// One GRU step:
///
/// ```text
/// r  = σ(x·Wxr + bxr + h·Whr + bhr)
/// z  = σ(x·Wxz + bxz + h·Whz + bhz)
/// n  = tanh(x·Wxn + bxn + r ⊙ (h·Whn + bhn))
/// h' = (1 − z) ⊙ n + z ⊙ h
/// ```
pub fn gru_cell<'t, T: Scalar>(
    x: Var<'t, T>,
    h: Var<'t, T>,
    w: GruWeights<'t, T>,
) -> Result<Var<'t, T>> {
    let (sx, sh) = (x.shape(), h.shape());
    if sx.len() != 2 || sh.len() != 2 || sx[0] != sh[0] {
        return Err(Error::shape("gru_cell", format!("x {sx:?}, h {sh:?}")));
    }
    let (b, din, hd) = (sx[0], sx[1], sh[1]);
    let g3 = 3 * hd;
    if w.wx.shape() != [din, g3]
        || w.wh.shape() != [hd, g3]
        || w.bx.shape() != [g3]
        || w.bh.shape() != [g3]
    {
        return Err(Error::shape(
            "gru_cell",
            format!(
                "weights {:?} {:?} {:?} {:?} for din {din}, hidden {hd}",
                w.wx.shape(),
                w.wh.shape(),
                w.bx.shape(),
                w.bh.shape()
            ),
        ));
    }
    let (xv, hv) = (x.value(), h.value());
    if !xv.all_finite() {
        return Err(Error::NonFinite(format!("gru_cell input x {sx:?}")));
    }
    if !hv.all_finite() {
        return Err(Error::NonFinite(format!("gru_cell state h {sh:?}")));
    }
    let (wxv, whv, bxv, bhv) = (w.wx.value(), w.wh.value(), w.bx.value(), w.bh.value());
    let mut gx = vec![T::zero(); b * g3];
    let mut gh = vec![T::zero(); b * g3];
    T::gemm(b, din, g3, xv.data(), false, wxv.data(), false, &mut gx, false);
    T::gemm(b, hd, g3, hv.data(), false, whv.data(), false, &mut gh, false);
    let mut r = vec![T::zero(); b * hd];
    let mut z = vec![T::zero(); b * hd];
    let mut n = vec![T::zero(); b * hd];
    let mut ghn = vec![T::zero(); b * hd];
    let mut out = vec![T::zero(); b * hd];
    for i in 0..b {
        let gxr = &gx[i * g3..(i + 1) * g3];
        let ghr = &gh[i * g3..(i + 1) * g3];
        for j in 0..hd {
            let k = i * hd + j;
            let rv = sigmoid_scalar(gxr[j] + bxv.data()[j] + ghr[j] + bhv.data()[j]);
            let zv = sigmoid_scalar(
                gxr[hd + j] + bxv.data()[hd + j] + ghr[hd + j] + bhv.data()[hd + j],
            );
            let hn = ghr[2 * hd + j] + bhv.data()[2 * hd + j];
            let nv = (gxr[2 * hd + j] + bxv.data()[2 * hd + j] + rv * hn).tanh();
            r[k] = rv;
            z[k] = zv;
            n[k] = nv;
            ghn[k] = hn;
            out[k] = (T::one() - zv) * nv + zv * hv.data()[k];
        }
    }
    let ids = [x.id(), h.id(), w.wx.id(), w.wh.id(), w.bx.id(), w.bh.id()];
    let parents = [x, h, w.wx, w.wh, w.bx, w.bh];
    Ok(x.tape().push(Tensor::new(vec![b, hd], out)?, &parents, || {
        Box::new(move |g, sink| {
            let mut dgx = vec![T::zero(); b * g3];
            let mut dgh = vec![T::zero(); b * g3];
            let mut dh_direct = vec![T::zero(); b * hd];
            for i in 0..b {
                for j in 0..hd {
                    let k = i * hd + j;
                    let (rv, zv, nv) = (r[k], z[k], n[k]);
                    let dz = g[k] * (hv.data()[k] - nv);
                    let dn = g[k] * (T::one() - zv);
                    dh_direct[k] = g[k] * zv;
                    let dan = dn * (T::one() - nv * nv);
                    let dr = dan * ghn[k];
                    let dar = dr * rv * (T::one() - rv);
                    let daz = dz * zv * (T::one() - zv);
                    let row = i * g3;
                    dgx[row + j] = dar;
                    dgx[row + hd + j] = daz;
                    dgx[row + 2 * hd + j] = dan;
                    dgh[row + j] = dar;
                    dgh[row + hd + j] = daz;
                    dgh[row + 2 * hd + j] = dan * rv;
                }
            }
            let [ix, ih, iwx, iwh, ibx, ibh] = ids;
            if let Some(s) = sink.slot(ix) {
                T::gemm(b, g3, din, &dgx, false, wxv.data(), true, s, true);
            }
            if let Some(s) = sink.slot(ih) {
                T::gemm(b, g3, hd, &dgh, false, whv.data(), true, s, true);
                for (d, &v) in s.iter_mut().zip(&dh_direct) {
                    *d += v;
                }
            }
            if let Some(s) = sink.slot(iwx) {
                T::gemm(din, b, g3, xv.data(), true, &dgx, false, s, true);
            }
            if let Some(s) = sink.slot(iwh) {
                T::gemm(hd, b, g3, hv.data(), true, &dgh, false, s, true);
            }
            for (id, src) in [(ibx, &dgx), (ibh, &dgh)] {
                if let Some(s) = sink.slot(id) {
                    for row in src.chunks_exact(g3) {
                        for (d, &v) in s.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                }
            }
        })
    }))
}

/// Additive spatial attention over a batch of feature grids.
///
/// `keys [R,P,A]` is the projected grid, `feats [R,P,D]` the grid itself,
/// `query [R,A]` the projected decoder state and `v [A]` the scoring vector.
/// Scores are `e = v · tanh(key + query)`, weights are a softmax over the
/// unmasked positions, and the output is the context `Σ α ⊙ feats`,
/// shaped `[R, D]`. The weights are returned alongside.
pub fn attention<'t, T: Scalar>(
    keys: Var<'t, T>,
    feats: Var<'t, T>,
    query: Var<'t, T>,
    v: Var<'t, T>,
    mask: Option<Rc<Vec<bool>>>,
) -> Result<(Var<'t, T>, Tensor<T>)> {
    let (sk, sf, sq, sv) = (keys.shape(), feats.shape(), query.shape(), v.shape());
    let ok = sk.len() == 3
        && sf.len() == 3
        && sf[..2] == sk[..2]
        && sq == [sk[0], sk[2]]
        && sv == [sk[2]];
    if !ok {
        return Err(Error::shape(
            "attention",
            format!("keys {sk:?}, feats {sf:?}, query {sq:?}, v {sv:?}"),
        ));
    }
    let (r, p, a, d) = (sk[0], sk[1], sk[2], sf[2]);
    if let Some(m) = &mask {
        if m.len() != r * p {
            return Err(Error::shape("attention", "mask size"));
        }
    }
    let (kv, fv, qv, vv) = (keys.value(), feats.value(), query.value(), v.value());
    let mut act = vec![T::zero(); r * p * a];
    let mut alpha = vec![T::zero(); r * p];
    let mut ctx = vec![T::zero(); r * d];
    for ri in 0..r {
        let q = &qv.data()[ri * a..(ri + 1) * a];
        let mut scores = vec![T::neg_infinity(); p];
        for pi in 0..p {
            if mask.as_ref().is_some_and(|m| !m[ri * p + pi]) {
                continue;
            }
            let base = (ri * p + pi) * a;
            let mut e = T::zero();
            for ai in 0..a {
                let t = (kv.data()[base + ai] + q[ai]).tanh();
                act[base + ai] = t;
                e += vv.data()[ai] * t;
            }
            scores[pi] = e;
        }
        let mx = scores.iter().copied().fold(T::neg_infinity(), T::max);
        if mx == T::neg_infinity() {
            continue;
        }
        let exps: Vec<f64> = scores
            .iter()
            .map(|&sc| if sc == T::neg_infinity() { 0.0 } else { (sc.as_f64() - mx.as_f64()).exp() })
            .collect();
        let total: f64 = exps.iter().sum();
        for pi in 0..p {
            let w = T::from_f64(exps[pi] / total);
            alpha[ri * p + pi] = w;
            if w != T::zero() {
                let f = &fv.data()[(ri * p + pi) * d..(ri * p + pi + 1) * d];
                for (c, &fe) in ctx[ri * d..(ri + 1) * d].iter_mut().zip(f) {
                    *c += w * fe;
                }
            }
        }
    }
    let alpha_t = Tensor::new(vec![r, p], alpha)?;
    let alpha_rc = Rc::new(alpha_t.clone());
    let ids = [keys.id(), feats.id(), query.id(), v.id()];
    let out = keys.tape().push(
        Tensor::new(vec![r, d], ctx)?,
        &[keys, feats, query, v],
        || {
            Box::new(move |g, sink| {
                let [ik, ifeat, iq, iv] = ids;
                let al = alpha_rc.data();
                // dα and the softmax-backward term de
                let mut de = vec![T::zero(); r * p];
                for ri in 0..r {
                    let gr = &g[ri * d..(ri + 1) * d];
                    let mut dot = T::zero();
                    for pi in 0..p {
                        let f = &fv.data()[(ri * p + pi) * d..(ri * p + pi + 1) * d];
                        let da: T = f.iter().zip(gr).map(|(&x, &y)| x * y).sum();
                        de[ri * p + pi] = da;
                        dot += al[ri * p + pi] * da;
                    }
                    for pi in 0..p {
                        let k = ri * p + pi;
                        de[k] = al[k] * (de[k] - dot);
                    }
                }
                if let Some(s) = sink.slot(ifeat) {
                    for ri in 0..r {
                        let gr = &g[ri * d..(ri + 1) * d];
                        for pi in 0..p {
                            let w = al[ri * p + pi];
                            if w == T::zero() {
                                continue;
                            }
                            let base = (ri * p + pi) * d;
                            for (dd, &gv) in s[base..base + d].iter_mut().zip(gr) {
                                *dd += w * gv;
                            }
                        }
                    }
                }
                let mut dpre = vec![T::zero(); r * p * a];
                let mut dv = vec![T::zero(); a];
                for k in 0..r * p {
                    if de[k] == T::zero() {
                        continue;
                    }
                    let base = k * a;
                    for ai in 0..a {
                        let t = act[base + ai];
                        dv[ai] += de[k] * t;
                        dpre[base + ai] = de[k] * vv.data()[ai] * (T::one() - t * t);
                    }
                }
                if let Some(s) = sink.slot(iv) {
                    for (dd, &x) in s.iter_mut().zip(&dv) {
                        *dd += x;
                    }
                }
                if let Some(s) = sink.slot(iq) {
                    for ri in 0..r {
                        for pi in 0..p {
                            let base = (ri * p + pi) * a;
                            for ai in 0..a {
                                s[ri * a + ai] += dpre[base + ai];
                            }
                        }
                    }
                }
                if let Some(s) = sink.slot(ik) {
                    for (dd, &x) in s.iter_mut().zip(&dpre) {
                        *dd += x;
                    }
                }
            })
        },
    );
    Ok((out, alpha_t))
}

fn check_probabilities<T: Scalar>(targets: &[T]) -> Result<()> {
    if let Some(bad) = targets
        .iter()
        .find(|&&t| !(t >= T::zero() && t <= T::one()))
    {
        return Err(Error::Invalid(format!(
            "cross-entropy target probability {bad} outside [0, 1]"
        )));
    }
    Ok(())
}

/// `Σ wᵢ · BCE(σ(zᵢ), yᵢ)` evaluated stably from logits.
pub fn bce_with_logits<'t, T: Scalar>(
    logits: Var<'t, T>,
    targets: Rc<Vec<T>>,
    weights: Rc<Vec<T>>,
) -> Result<Var<'t, T>> {
    let zv = logits.value();
    if targets.len() != zv.numel() || weights.len() != zv.numel() {
        return Err(Error::shape("bce_with_logits", "targets/weights size"));
    }
    check_probabilities(&targets)?;
    let mut total = T::zero();
    for ((&z, &y), &w) in zv.data().iter().zip(targets.iter()).zip(weights.iter()) {
        if w != T::zero() {
            total += w * (z.max(T::zero()) - z * y + (T::one() + (-z.abs()).exp()).ln());
        }
    }
    let iz = logits.id();
    Ok(logits.tape().push(Tensor::scalar(total), &[logits], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(iz) {
                for (((d, &z), &y), &w) in s
                    .iter_mut()
                    .zip(zv.data())
                    .zip(targets.iter())
                    .zip(weights.iter())
                {
                    *d += g[0] * w * (sigmoid_scalar(z) - y);
                }
            }
        })
    }))
}

fn log_softmax_row<T: Scalar>(row: &[T]) -> (T, Vec<T>) {
    let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
    let probs = row.iter().map(|&v| (v - lse).exp()).collect();
    (lse, probs)
}

/// `Σ_b w_b · (−log softmax(logits_b)[target_b])` for `logits [B, V]`.
pub fn sparse_cross_entropy<'t, T: Scalar>(
    logits: Var<'t, T>,
    targets: &[usize],
    weights: &[T],
) -> Result<Var<'t, T>> {
    let s = logits.shape();
    if s.len() != 2 || targets.len() != s[0] || weights.len() != s[0] {
        return Err(Error::shape(
            "sparse_cross_entropy",
            format!("logits {s:?}, {} targets, {} weights", targets.len(), weights.len()),
        ));
    }
    let (b, v) = (s[0], s[1]);
    if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
        return Err(Error::Invalid(format!("target class {bad} >= {v}")));
    }
    let zv = logits.value();
    let mut total = T::zero();
    let mut probs = vec![T::zero(); b * v];
    for i in 0..b {
        if weights[i] == T::zero() {
            continue;
        }
        let row = &zv.data()[i * v..(i + 1) * v];
        let (lse, p) = log_softmax_row(row);
        total += weights[i] * (lse - row[targets[i]]);
        probs[i * v..(i + 1) * v].copy_from_slice(&p);
    }
    let targets = targets.to_vec();
    let weights = weights.to_vec();
    let iz = logits.id();
    Ok(logits.tape().push(Tensor::scalar(total), &[logits], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(iz) {
                for i in 0..b {
                    let w = weights[i] * g[0];
                    if w == T::zero() {
                        continue;
                    }
                    for j in 0..v {
                        let onehot = if j == targets[i] { T::one() } else { T::zero() };
                        s[i * v + j] += w * (probs[i * v + j] - onehot);
                    }
                }
            }
        })
    }))
}

/// Mean over rows of `−Σ_v p_v log softmax(logits)_v` with soft targets
/// `p` of shape `[B, V]`.
pub fn cross_entropy<'t, T: Scalar>(logits: Var<'t, T>, targets: &Tensor<T>) -> Result<Var<'t, T>> {
    let s = logits.shape();
    if s.len() != 2 || targets.shape() != s.as_slice() {
        return Err(Error::shape(
            "cross_entropy",
            format!("logits {s:?}, targets {:?}", targets.shape()),
        ));
    }
    check_probabilities(targets.data())?;
    let (b, v) = (s[0], s[1]);
    let zv = logits.value();
    let bf = T::from_f64(b as f64);
    let mut total = T::zero();
    let mut probs = vec![T::zero(); b * v];
    for i in 0..b {
        let row = &zv.data()[i * v..(i + 1) * v];
        let (lse, p) = log_softmax_row(row);
        for j in 0..v {
            total += targets.data()[i * v + j] * (lse - row[j]);
        }
        probs[i * v..(i + 1) * v].copy_from_slice(&p);
    }
    let tgt = targets.data().to_vec();
    let iz = logits.id();
    Ok(logits.tape().push(Tensor::scalar(total / bf), &[logits], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(iz) {
                for i in 0..b {
                    let mass: T = tgt[i * v..(i + 1) * v].iter().copied().sum();
                    for j in 0..v {
                        let k = i * v + j;
                        s[k] += g[0] / bf * (mass * probs[k] - tgt[k]);
                    }
                }
            }
        })
    }))
}

/// Row lookup `table[idx]` for `table [V, E]`, giving `[B, E]`.
pub fn embedding<'t, T: Scalar>(table: Var<'t, T>, idx: &[usize]) -> Result<Var<'t, T>> {
    let s = table.shape();
    if s.len() != 2 || idx.is_empty() {
        return Err(Error::shape("embedding", format!("table {s:?}")));
    }
    let (v, e) = (s[0], s[1]);
    if let Some(&bad) = idx.iter().find(|&&i| i >= v) {
        return Err(Error::Vocab(format!("index {bad} outside table of {v} rows")));
    }
    let tv = table.value();
    let mut out = Vec::with_capacity(idx.len() * e);
    for &i in idx {
        out.extend_from_slice(&tv.data()[i * e..(i + 1) * e]);
    }
    let idx = idx.to_vec();
    let it = table.id();
    Ok(table.tape().push(Tensor::new(vec![idx.len(), e], out)?, &[table], || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(it) {
                for (row, &i) in idx.iter().enumerate() {
                    for k in 0..e {
                        s[i * e + k] += g[row * e + k];
                    }
                }
            }
        })
    }))
}

/// Per-location weighted sum of equally shaped feature maps:
/// `out = Σ_s weights[.., s] ⊙ feats[s]` with `weights [N,H,W,S]`.
pub fn scale_fuse<'t, T: Scalar>(weights: Var<'t, T>, feats: &[Var<'t, T>]) -> Result<Var<'t, T>> {
    let sw = weights.shape();
    let ns = feats.len();
    if sw.len() != 4 || sw[3] != ns || ns == 0 {
        return Err(Error::shape("scale_fuse", format!("weights {sw:?} for {ns} maps")));
    }
    let sf = feats[0].shape();
    if sf.len() != 4 || sf[..3] != sw[..3] || feats.iter().any(|f| f.shape() != sf) {
        return Err(Error::shape("scale_fuse", format!("feature maps vs weights {sw:?}")));
    }
    let c = sf[3];
    let locs = sw[0] * sw[1] * sw[2];
    let wv = weights.value();
    let fvs: Vec<Rc<Tensor<T>>> = feats.iter().map(|f| f.value()).collect();
    let mut out = vec![T::zero(); locs * c];
    for (s, fv) in fvs.iter().enumerate() {
        for l in 0..locs {
            let w = wv.data()[l * ns + s];
            for (o, &x) in out[l * c..(l + 1) * c].iter_mut().zip(&fv.data()[l * c..(l + 1) * c]) {
                *o += w * x;
            }
        }
    }
    let iw = weights.id();
    let ifs: Vec<usize> = feats.iter().map(|f| f.id()).collect();
    let mut parents = vec![weights];
    parents.extend_from_slice(feats);
    Ok(weights.tape().push(Tensor::new(sf, out)?, &parents, || {
        Box::new(move |g, sink| {
            if let Some(s) = sink.slot(iw) {
                for (si, fv) in fvs.iter().enumerate() {
                    for l in 0..locs {
                        let dot: T = g[l * c..(l + 1) * c]
                            .iter()
                            .zip(&fv.data()[l * c..(l + 1) * c])
                            .map(|(&a, &b)| a * b)
                            .sum();
                        s[l * ns + si] += dot;
                    }
                }
            }
            for (si, &id) in ifs.iter().enumerate() {
                if let Some(s) = sink.slot(id) {
                    for l in 0..locs {
                        let w = wv.data()[l * ns + si];
                        for (d, &gv) in s[l * c..(l + 1) * c].iter_mut().zip(&g[l * c..(l + 1) * c]) {
                            *d += w * gv;
                        }
                    }
                }
            }
        })
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;

    #[test]
    fn gru_zero_fixed_point() {
        let tape = Tape::<f64>::new();
        let w = GruWeights {
            wx: tape.constant(Tensor::full(vec![3, 6], 0.3)),
            wh: tape.constant(Tensor::full(vec![2, 6], -0.2)),
            bx: tape.constant(Tensor::zeros(vec![6])),
            bh: tape.constant(Tensor::zeros(vec![6])),
        };
        let x = tape.constant(Tensor::zeros(vec![4, 3]));
        let h = tape.constant(Tensor::zeros(vec![4, 2]));
        let out = gru_cell(x, h, w).unwrap();
        assert!(out.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gru_saturated_update_gate_keeps_state() {
        let tape = Tape::<f64>::new();
        let mut bx = vec![0.0; 6];
        bx[2] = 60.0;
        bx[3] = 60.0;
        let w = GruWeights {
            wx: tape.constant(Tensor::full(vec![1, 6], 0.5)),
            wh: tape.constant(Tensor::full(vec![2, 6], 0.5)),
            bx: tape.constant(Tensor::new(vec![6], bx).unwrap()),
            bh: tape.constant(Tensor::zeros(vec![6])),
        };
        let x = tape.constant(Tensor::full(vec![1, 1], 0.7));
        let h = tape.constant(Tensor::new(vec![1, 2], vec![0.25, -0.5]).unwrap());
        let out = gru_cell(x, h, w).unwrap().value();
        assert!((out.data()[0] - 0.25).abs() < 1e-12);
        assert!((out.data()[1] + 0.5).abs() < 1e-12);
    }

    #[test]
    fn gru_rejects_non_finite_input() {
        let tape = Tape::<f32>::new();
        let w = GruWeights {
            wx: tape.constant(Tensor::zeros(vec![1, 3])),
            wh: tape.constant(Tensor::zeros(vec![1, 3])),
            bx: tape.constant(Tensor::zeros(vec![3])),
            bh: tape.constant(Tensor::zeros(vec![3])),
        };
        let x = tape.constant(Tensor::full(vec![1, 1], f32::NAN));
        let h = tape.constant(Tensor::zeros(vec![1, 1]));
        let err = gru_cell(x, h, w).err().unwrap();
        assert!(matches!(err, Error::NonFinite(ref m) if m.contains("input x")));
    }

    #[test]
    fn cross_entropy_rejects_bad_targets() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(vec![1, 2]));
        let bad = Tensor::new(vec![1, 2], vec![1.5, -0.5]).unwrap();
        assert!(matches!(cross_entropy(z, &bad), Err(Error::Invalid(_))));
        let r = bce_with_logits(z, Rc::new(vec![2.0, 0.0]), Rc::new(vec![1.0, 1.0]));
        assert!(matches!(r, Err(Error::Invalid(_))));
    }

    #[test]
    fn uniform_logits_cross_entropy_is_log_v() {
        let tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(vec![3, 38]));
        let loss = sparse_cross_entropy(z, &[0, 5, 37], &[1.0 / 3.0; 3]).unwrap();
        assert!((loss.item() - 38f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn attention_uniform_scores_average_features() {
        let tape = Tape::<f64>::new();
        let keys = tape.constant(Tensor::zeros(vec![1, 3, 2]));
        let feats =
            tape.constant(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
        let q = tape.constant(Tensor::full(vec![1, 2], 0.4));
        let v = tape.constant(Tensor::full(vec![2], 1.0));
        let (c, alpha) = attention(keys, feats, q, v, None).unwrap();
        assert!(alpha.data().iter().all(|&a| (a - 1.0 / 3.0).abs() < 1e-15));
        let c = c.value();
        assert!((c.data()[0] - 3.0).abs() < 1e-12);
        assert!((c.data()[1] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn attention_saturated_score_selects_cell() {
        let tape = Tape::<f64>::new();
        // key of cell 1 drives tanh to +1, others to -1, scaled by a huge v
        let keys = tape.constant(
            Tensor::new(vec![1, 3, 1], vec![-50.0, 50.0, -50.0]).unwrap(),
        );
        let feats =
            tape.constant(Tensor::new(vec![1, 3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 9.0]).unwrap());
        let q = tape.constant(Tensor::zeros(vec![1, 1]));
        let v = tape.constant(Tensor::full(vec![1], 1e4));
        let (c, _) = attention(keys, feats, q, v, None).unwrap();
        assert_eq!(c.value().data(), &[3.0, 4.0]);
    }
}
