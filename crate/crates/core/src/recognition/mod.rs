//! Attention-based sequence recognizer over aligned RoI features: a conv
//! stack, vertical then horizontal GRU context encoding, and a GRU decoder
//! with additive spatial attention.

mod vocab;

use std::rc::Rc;

use rand::Rng;

pub use vocab::CharVocab;

use crate::error::{Error, Result};
use crate::params::{ConvBnRelu, Ctx, Gru, Init, Linear, ParamId, ParamStore};
use crate::tensor::{
    add, attention, concat, embedding, flip_axis, matmul, pad_axis, relu, reshape, slice_axis,
    sparse_cross_entropy, Scalar, Tensor, Var,
};

#[derive(Debug, Clone, PartialEq)]
pub struct RecognizerConfig {
    /// Channels of the input RoI features.
    pub in_channels: usize,
    pub conv_channels: usize,
    pub conv_layers: usize,
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub embedding: usize,
    pub attention: usize,
    /// Adds reversed vertical and horizontal passes.
    pub bidirectional: bool,
}

impl Default for RecognizerConfig {
    fn default() -> Self {
        RecognizerConfig {
            in_channels: 128,
            conv_channels: 128,
            conv_layers: 4,
            encoder_hidden: 128,
            decoder_hidden: 128,
            embedding: 64,
            attention: 128,
            bidirectional: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Recognizer {
    pub config: RecognizerConfig,
    pub vocab: CharVocab,
    convs: Vec<ConvBnRelu>,
    vgru: Vec<Gru>,
    hgru: Vec<Gru>,
    key: Linear,
    query: Linear,
    score_v: ParamId,
    embed: ParamId,
    decoder: Gru,
    classifier: Linear,
}

/// Encoded feature grids of a batch of RoIs.
///
/// `feats [R, P, D]` holds each RoI's `h × wmax` grid in row-major order,
/// right-padded to the widest RoI; `mask` marks the real positions.
#[derive(Debug, Clone)]
pub struct Encoded<'t, T> {
    pub feats: Var<'t, T>,
    keys: Var<'t, T>,
    pub mask: Rc<Vec<bool>>,
    pub h: usize,
    pub wmax: usize,
    pub widths: Vec<usize>,
}

impl<T> Encoded<'_, T> {
    pub fn len(&self) -> usize {
        self.widths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.widths.is_empty()
    }

    /// Attention weights of RoI `r` over its own `h × w` grid, row-major.
    pub fn crop_weights(&self, alpha: &[f64], r: usize) -> Vec<f64> {
        let p = self.h * self.wmax;
        let row = &alpha[r * p..(r + 1) * p];
        let w = self.widths[r];
        (0..self.h)
            .flat_map(|i| row[i * self.wmax..i * self.wmax + w].iter().copied())
            .collect()
    }
}

/// Per-step attention weights and outputs of one decoded RoI.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTrace {
    pub h: usize,
    pub w: usize,
    /// One `h × w` row-major map per step.
    pub alphas: Vec<Vec<f64>>,
    pub outputs: Vec<usize>,
}

impl AttentionTrace {
    /// Attention-weighted mean position `(x, y)` of step `t`.
    pub fn centroid(&self, t: usize) -> [f64; 2] {
        let mut c = [0.0, 0.0];
        for (k, &a) in self.alphas[t].iter().enumerate() {
            c[0] += a * (k % self.w) as f64;
            c[1] += a * (k / self.w) as f64;
        }
        c
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decoded {
    pub text: String,
    pub trace: AttentionTrace,
    /// Stopped at the step limit without emitting `EOS`.
    pub truncated: bool,
}

impl Recognizer {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        config: RecognizerConfig,
        vocab: CharVocab,
        rng: &mut impl Rng,
    ) -> Self {
        let c = &config;
        let convs = (0..c.conv_layers)
            .map(|l| {
                let cin = if l == 0 { c.in_channels } else { c.conv_channels };
                ConvBnRelu::new(store, &format!("rec.conv{l}"), 3, cin, c.conv_channels, 1, rng)
            })
            .collect();
        let dirs = if c.bidirectional { 2 } else { 1 };
        let conv_out = if c.conv_layers == 0 { c.in_channels } else { c.conv_channels };
        let vgru = (0..dirs)
            .map(|d| Gru::new(store, &format!("rec.vgru{d}"), conv_out, c.encoder_hidden, rng))
            .collect();
        let hgru = (0..dirs)
            .map(|d| Gru::new(store, &format!("rec.hgru{d}"), dirs * c.encoder_hidden, c.encoder_hidden, rng))
            .collect();
        let d = dirs * c.encoder_hidden;
        let key = Linear::new(store, "rec.attn.key", d, c.attention, false, Init::lecun(d), rng);
        let query = Linear::new(
            store,
            "rec.attn.query",
            c.decoder_hidden,
            c.attention,
            true,
            Init::lecun(c.decoder_hidden),
            rng,
        );
        let score_v = store.add("rec.attn.v", &[c.attention], Init::lecun(c.attention), true, rng);
        let embed = store.add(
            "rec.embed",
            &[vocab.num_inputs(), c.embedding],
            Init::Uniform { fan_in: 1, gain: 0.03 },
            true,
            rng,
        );
        let decoder = Gru::new(store, "rec.decoder", d + c.embedding, c.decoder_hidden, rng);
        let classifier = Linear::new(
            store,
            "rec.classifier",
            c.decoder_hidden,
            vocab.num_classes(),
            true,
            Init::lecun(c.decoder_hidden),
            rng,
        );
        Recognizer {
            config,
            vocab,
            convs,
            vgru,
            hgru,
            key,
            query,
            score_v,
            embed,
            decoder,
            classifier,
        }
    }

    /// Channels of the encoded grid.
    pub fn feature_dim(&self) -> usize {
        self.vgru.len() * self.config.encoder_hidden
    }

    /// Conv stack on each RoI. Batch statistics are shared across the RoIs.
    fn conv_stack<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, rois: &[Var<'t, T>]) -> Result<Vec<Var<'t, T>>> {
        let mut xs = rois.to_vec();
        for layer in &self.convs {
            let ys = xs
                .iter()
                .map(|&x| layer.conv.forward(ctx, x))
                .collect::<Result<Vec<_>>>()?;
            let joined = if ys.len() == 1 { ys[0] } else { concat(&ys, 2)? };
            let normed = relu(layer.bn.forward(ctx, joined)?);
            xs = split_widths(normed, &widths_of(rois))?;
        }
        Ok(xs)
    }

    /// Encodes RoI features `[1, h, w_r, C]` (common `h`).
    pub fn encode<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, rois: &[Var<'t, T>]) -> Result<Encoded<'t, T>> {
        if rois.is_empty() {
            return Err(Error::Invalid("encode needs at least one RoI".into()));
        }
        let s0 = rois[0].shape();
        for r in rois {
            let s = r.shape();
            if s.len() != 4 || s[0] != 1 || s[1] != s0[1] || s[3] != self.config.in_channels {
                return Err(Error::shape("encode", format!("RoI {s:?} vs first {s0:?}")));
            }
        }
        let tape = ctx.tape;
        let h = s0[1];
        let widths = widths_of(rois);
        let total: usize = widths.iter().sum();
        let wmax = *widths.iter().max().unwrap();
        let a = self.conv_stack(ctx, rois)?;
        let a = if a.len() == 1 { a[0] } else { concat(&a, 2)? };
        let ca = a.shape()[3];
        let a = reshape(a, &[h, total, ca])?;

        // columns evolve in parallel, recurring down the rows
        let mut vouts = Vec::new();
        for (d, gru) in self.vgru.iter().enumerate() {
            let src = if d == 0 { a } else { flip_axis(a, 0)? };
            let mut state = tape.constant(Tensor::zeros(vec![total, gru.hidden]));
            let mut rows = Vec::with_capacity(h);
            for i in 0..h {
                let x = reshape(slice_axis(src, 0, i, 1)?, &[total, ca])?;
                state = gru.step(ctx, x, state)?;
                rows.push(reshape(state, &[1, total, gru.hidden])?);
            }
            let out = concat(&rows, 0)?;
            vouts.push(if d == 0 { out } else { flip_axis(out, 0)? });
        }
        let b = if vouts.len() == 1 { vouts[0] } else { concat(&vouts, 2)? };
        let cb = b.shape()[2];

        // rows of all RoIs evolve in parallel, recurring along the columns
        let mut per_roi = Vec::with_capacity(rois.len());
        let mut off = 0;
        for &w in &widths {
            per_roi.push(slice_axis(b, 1, off, w)?);
            off += w;
        }
        let mut houts = Vec::new();
        for (d, gru) in self.hgru.iter().enumerate() {
            let padded = per_roi
                .iter()
                .map(|&x| {
                    let x = if d == 0 { x } else { flip_axis(x, 1)? };
                    pad_axis(x, 1, wmax, 0)
                })
                .collect::<Result<Vec<_>>>()?;
            let stacked = if padded.len() == 1 { padded[0] } else { concat(&padded, 0)? };
            let rows = rois.len() * h;
            let mut state = tape.constant(Tensor::zeros(vec![rows, gru.hidden]));
            let mut cols = Vec::with_capacity(wmax);
            for j in 0..wmax {
                let x = reshape(slice_axis(stacked, 1, j, 1)?, &[rows, cb])?;
                state = gru.step(ctx, x, state)?;
                cols.push(reshape(state, &[rows, 1, gru.hidden])?);
            }
            let out = concat(&cols, 1)?;
            let out = if d == 0 {
                out
            } else {
                // undo the per-RoI reversal so positions line up again
                let parts = widths
                    .iter()
                    .enumerate()
                    .map(|(r, &w)| {
                        let x = slice_axis(slice_axis(out, 0, r * h, h)?, 1, 0, w)?;
                        pad_axis(flip_axis(x, 1)?, 1, wmax, 0)
                    })
                    .collect::<Result<Vec<_>>>()?;
                if parts.len() == 1 { parts[0] } else { concat(&parts, 0)? }
            };
            houts.push(out);
        }
        let hmap = if houts.len() == 1 { houts[0] } else { concat(&houts, 2)? };
        let dim = self.feature_dim();
        let p = h * wmax;
        let feats = reshape(hmap, &[rois.len(), p, dim])?;
        let keys = matmul(reshape(hmap, &[rois.len() * p, dim])?, ctx.param(self.key.weight))?;
        let keys = reshape(keys, &[rois.len(), p, self.config.attention])?;
        let mask = widths
            .iter()
            .flat_map(|&w| (0..p).map(move |k| k % wmax < w))
            .collect();
        Ok(Encoded {
            feats,
            keys,
            mask: Rc::new(mask),
            h,
            wmax,
            widths,
        })
    }

    /// Context vectors `[R, D]` and attention weights `[R, P]` given the
    /// previous decoder state `[R, Dg]`.
    pub fn attention_step<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        enc: &Encoded<'t, T>,
        g_prev: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Tensor<T>)> {
        let q = self.query.forward(ctx, g_prev)?;
        attention(enc.keys, enc.feats, q, ctx.param(self.score_v), Some(Rc::clone(&enc.mask)))
    }

    /// One decoder update from the context and previous symbols; returns
    /// class logits `[R, |D|+1]` and the new state.
    pub fn decode_step<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        c: Var<'t, T>,
        y_prev: &[usize],
        g_prev: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let e = embedding(ctx.param(self.embed), y_prev)?;
        let g = self.decoder.step(ctx, concat(&[c, e], 1)?, g_prev)?;
        Ok((self.classifier.forward(ctx, g)?, g))
    }

    fn initial_state<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, n: usize) -> Var<'t, T> {
        ctx.tape
            .constant(Tensor::zeros(vec![n, self.config.decoder_hidden]))
    }

    /// Teacher-forced negative log-likelihood averaged over every valid
    /// (sample, step) pair, each transcript followed by an `EOS` target.
    pub fn recognition_loss<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        enc: &Encoded<'t, T>,
        transcripts: &[&str],
    ) -> Result<Var<'t, T>> {
        if transcripts.len() != enc.len() {
            return Err(Error::shape(
                "recognition_loss",
                format!("{} transcripts for {} RoIs", transcripts.len(), enc.len()),
            ));
        }
        let labels = transcripts
            .iter()
            .map(|t| self.vocab.encode(t))
            .collect::<Result<Vec<_>>>()?;
        let steps = labels.iter().map(|l| l.len() + 1).max().unwrap_or(1);
        let valid: usize = labels.iter().map(|l| l.len() + 1).sum();
        let unit = T::from_f64(1.0 / valid as f64);
        let eos = self.vocab.eos();
        let mut g = self.initial_state(ctx, enc.len());
        let mut prev = vec![self.vocab.start(); enc.len()];
        let mut total: Option<Var<'t, T>> = None;
        for t in 0..steps {
            let (c, _) = self.attention_step(ctx, enc, g)?;
            let (logits, g_next) = self.decode_step(ctx, c, &prev, g)?;
            g = g_next;
            let mut targets = Vec::with_capacity(enc.len());
            let mut weights = Vec::with_capacity(enc.len());
            for (r, l) in labels.iter().enumerate() {
                let (target, w) = match t.cmp(&l.len()) {
                    std::cmp::Ordering::Less => (l[t], unit),
                    std::cmp::Ordering::Equal => (eos, unit),
                    std::cmp::Ordering::Greater => (eos, T::zero()),
                };
                targets.push(target);
                weights.push(w);
                prev[r] = target;
            }
            let step_loss = sparse_cross_entropy(logits, &targets, &weights)?;
            total = Some(match total {
                None => step_loss,
                Some(acc) => add(acc, step_loss)?,
            });
        }
        Ok(total.expect("at least one step"))
    }

    /// Greedy decoding from `START` until `EOS` or `max_steps`; ties pick
    /// the lowest index.
    pub fn greedy_decode<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        enc: &Encoded<'t, T>,
        max_steps: usize,
    ) -> Result<Vec<Decoded>> {
        let max_steps = max_steps.max(1);
        let n = enc.len();
        let eos = self.vocab.eos();
        let mut g = self.initial_state(ctx, n);
        let mut prev = vec![self.vocab.start(); n];
        let mut out: Vec<Decoded> = enc
            .widths
            .iter()
            .map(|&w| Decoded {
                text: String::new(),
                trace: AttentionTrace {
                    h: enc.h,
                    w,
                    alphas: Vec::new(),
                    outputs: Vec::new(),
                },
                truncated: true,
            })
            .collect();
        let mut done = vec![false; n];
        for _ in 0..max_steps {
            if done.iter().all(|&d| d) {
                break;
            }
            let (c, alpha) = self.attention_step(ctx, enc, g)?;
            let (logits, g_next) = self.decode_step(ctx, c, &prev, g)?;
            g = g_next;
            let alpha: Vec<f64> = alpha.data().iter().map(|v| v.as_f64()).collect();
            let lv = logits.value();
            let classes = self.vocab.num_classes();
            for r in 0..n {
                if done[r] {
                    continue;
                }
                let row = &lv.data()[r * classes..(r + 1) * classes];
                let best = argmax(row);
                let d = &mut out[r];
                d.trace.alphas.push(enc.crop_weights(&alpha, r));
                d.trace.outputs.push(best);
                prev[r] = best;
                if best == eos {
                    done[r] = true;
                    d.truncated = false;
                } else {
                    d.text.push(self.vocab.chars()[best]);
                }
            }
        }
        Ok(out)
    }
}

fn widths_of<T: Scalar>(rois: &[Var<'_, T>]) -> Vec<usize> {
    rois.iter().map(|r| r.shape()[2]).collect()
}

fn split_widths<'t, T: Scalar>(x: Var<'t, T>, widths: &[usize]) -> Result<Vec<Var<'t, T>>> {
    if widths.len() == 1 {
        return Ok(vec![x]);
    }
    let mut off = 0;
    widths
        .iter()
        .map(|&w| {
            let part = slice_axis(x, 2, off, w);
            off += w;
            part
        })
        .collect()
}

/// Index of the largest value, lowest index on ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny(bidirectional: bool) -> (ParamStore<f64>, Recognizer) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let cfg = RecognizerConfig {
            in_channels: 3,
            conv_channels: 4,
            conv_layers: 2,
            encoder_hidden: 5,
            decoder_hidden: 6,
            embedding: 3,
            attention: 4,
            bidirectional,
        };
        let vocab = CharVocab::new("ab".chars()).unwrap();
        let rec = Recognizer::new(&mut store, cfg, vocab, &mut rng);
        (store, rec)
    }

    fn roi(tape: &Tape<f64>, w: usize, seed: usize) -> Var<'_, f64> {
        tape.constant(Tensor::from_fn(vec![1, 4, w, 3], |i| {
            (((i + seed) * 7919) % 97) as f64 / 97.0 - 0.5
        }))
    }

    #[test]
    fn encoded_grid_matches_roi_dims() {
        let (store, rec) = tiny(false);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &store);
        let rois = [roi(&tape, 6, 0), roi(&tape, 3, 1)];
        let enc = rec.encode(&ctx, &rois).unwrap();
        assert_eq!(enc.feats.shape(), vec![2, 4 * 6, 5]);
        assert_eq!(enc.mask.iter().filter(|&&m| m).count(), 4 * 6 + 4 * 3);
    }

    #[test]
    fn batching_does_not_change_unidirectional_encoding() {
        let (store, rec) = tiny(false);
        let tape = Tape::new();
        // eval mode so statistics are not shared across the batch
        let ctx = Ctx::eval(&tape, &store);
        let (a, b) = (roi(&tape, 6, 0), roi(&tape, 3, 1));
        let both = rec.encode(&ctx, &[a, b]).unwrap();
        let alone = rec.encode(&ctx, &[b]).unwrap();
        let crop = both.crop_weights(
            &both.feats.value().data().iter().step_by(5).copied().collect::<Vec<_>>(),
            1,
        );
        let single = alone.crop_weights(
            &alone.feats.value().data().iter().step_by(5).copied().collect::<Vec<_>>(),
            0,
        );
        for (x, y) in crop.iter().zip(&single) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn bidirectional_batching_is_consistent() {
        let (store, rec) = tiny(true);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let (a, b) = (roi(&tape, 5, 0), roi(&tape, 2, 1));
        let both = rec.encode(&ctx, &[a, b]).unwrap();
        let alone = rec.encode(&ctx, &[b]).unwrap();
        let d = rec.feature_dim();
        let (bv, av) = (both.feats.value(), alone.feats.value());
        for i in 0..4 {
            for j in 0..2 {
                for c in 0..d {
                    let x = bv.data()[((4 * 5) + i * 5 + j) * d + c];
                    let y = av.data()[(i * 2 + j) * d + c];
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn zero_roi_with_zero_biases_encodes_to_zero() {
        let (store, rec) = tiny(false);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let z = tape.constant(Tensor::zeros(vec![1, 4, 5, 3]));
        let enc = rec.encode(&ctx, &[z]).unwrap();
        assert!(enc.feats.value().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn column_permutation_changes_encoding() {
        let (store, rec) = tiny(false);
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let base = Tensor::from_fn(vec![1, 4, 5, 3], |i| ((i * 31) % 17) as f64 / 17.0);
        let mut swapped = base.clone();
        for i in 0..4 {
            for c in 0..3 {
                let (p, q) = ((i * 5) * 3 + c, (i * 5 + 3) * 3 + c);
                swapped.data_mut().swap(p, q);
            }
        }
        let e1 = rec.encode(&ctx, &[tape.constant(base)]).unwrap();
        let e2 = rec.encode(&ctx, &[tape.constant(swapped)]).unwrap();
        assert!(e1.feats.value().max_abs_diff(&e2.feats.value()) > 1e-6);
    }

    #[test]
    fn attention_weights_are_distributions() {
        let (store, rec) = tiny(false);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &store);
        let enc = rec.encode(&ctx, &[roi(&tape, 6, 0), roi(&tape, 2, 3)]).unwrap();
        let g = tape.constant(Tensor::from_fn(vec![2, 6], |i| i as f64 * 0.1));
        let (c, alpha) = rec.attention_step(&ctx, &enc, g).unwrap();
        assert_eq!(c.shape(), vec![2, 5]);
        let a: Vec<f64> = alpha.data().to_vec();
        for r in 0..2 {
            let s: f64 = enc.crop_weights(&a, r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn decode_step_logits_cover_eos() {
        let (store, rec) = tiny(false);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &store);
        let c = tape.constant(Tensor::zeros(vec![1, 5]));
        let g = tape.constant(Tensor::zeros(vec![1, 6]));
        let (logits, _) = rec.decode_step(&ctx, c, &[rec.vocab.start()], g).unwrap();
        assert_eq!(logits.shape(), vec![1, 3]);
        assert!(matches!(
            rec.decode_step(&ctx, c, &[9], g),
            Err(Error::Vocab(_))
        ));
    }

    #[test]
    fn uniform_logits_loss_is_log_classes() {
        let (mut store, rec) = tiny(false);
        let id = rec.classifier.weight;
        store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &store);
        let enc = rec.encode(&ctx, &[roi(&tape, 6, 0), roi(&tape, 2, 3)]).unwrap();
        let loss = rec.recognition_loss(&ctx, &enc, &["a", "bab"]).unwrap();
        assert!((loss.item() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn uniform_logits_over_37_chars_cost_ln_38() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let vocab = CharVocab::new("abcdefghijklmnopqrstuvwxyz0123456789-".chars()).unwrap();
        assert_eq!(vocab.num_classes(), 38);
        let cfg = RecognizerConfig {
            in_channels: 3,
            conv_channels: 4,
            conv_layers: 1,
            encoder_hidden: 4,
            decoder_hidden: 4,
            embedding: 3,
            attention: 4,
            bidirectional: false,
        };
        let rec = Recognizer::new(&mut store, cfg, vocab, &mut rng);
        let id = rec.classifier.weight;
        store.get_mut(id).tensor.data_mut().iter_mut().for_each(|v| *v = 0.0);
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, &store);
        let enc = rec.encode(&ctx, &[roi(&tape, 5, 1)]).unwrap();
        let loss = rec.recognition_loss(&ctx, &enc, &["k9-"]).unwrap();
        assert!((loss.item() - 3.6376).abs() < 1e-4);
        assert!((loss.item() - 38f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn eos_first_decodes_empty() {
        let (mut store, rec) = tiny(false);
        let b = rec.classifier.bias.unwrap();
        store.get_mut(b).tensor.data_mut()[2] = 1e3;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let enc = rec.encode(&ctx, &[roi(&tape, 6, 0)]).unwrap();
        let out = rec.greedy_decode(&ctx, &enc, 5).unwrap();
        assert_eq!(out[0].text, "");
        assert!(!out[0].truncated);
        assert_eq!(out[0].trace.alphas.len(), 1);
    }

    #[test]
    fn decode_respects_step_limit() {
        let (mut store, rec) = tiny(false);
        let b = rec.classifier.bias.unwrap();
        store.get_mut(b).tensor.data_mut()[0] = 1e3;
        let tape = Tape::new();
        let ctx = Ctx::eval(&tape, &store);
        let enc = rec.encode(&ctx, &[roi(&tape, 6, 0)]).unwrap();
        let out = rec.greedy_decode(&ctx, &enc, 4).unwrap();
        assert_eq!(out[0].text, "aaaa");
        assert!(out[0].truncated);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
    }
}
