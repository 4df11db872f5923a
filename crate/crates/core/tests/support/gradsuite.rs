//! Randomized gradient checks of every differentiable primitive and of the
//! whole network.

#![allow(dead_code)]

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textnet_core::config::{RunConfig, Stage};
use textnet_core::geometry::Quad;
use textnet_core::params::ParamStore;
use textnet_core::recognition::{CharVocab, Recognizer, RecognizerConfig};
use textnet_core::synth::render_sample;
use textnet_core::tensor::{
    batch_norm_eval, batch_norm_train, conv2d, cross_entropy, gru_cell, smooth_l1, softmax,
    sparse_cross_entropy, upsample_bilinear, weighted_sum, GruWeights, Padding,
};
use textnet_core::train::{fit_to_size, total_loss};
use textnet_core::{perspective_sample, solve_homography, Result, TextNet, Var};

use super::fd::{check_inputs, check_model, random_tensor};

pub const PRIMITIVE_TOL: f64 = 1e-4;
pub const COMPOSITE_TOL: f64 = 1e-3;

pub struct Case {
    pub name: &'static str,
    pub tol: f64,
    pub run: fn(&mut ChaCha8Rng) -> f64,
}

/// Random fixed projection to a scalar.
fn project<'t>(x: Var<'t, f64>, rng: &mut impl Rng) -> Result<Var<'t, f64>> {
    let w: Vec<f64> = (0..x.numel()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    weighted_sum(x, Rc::new(w))
}

fn seeded(rng: &mut ChaCha8Rng) -> u64 {
    rng.gen()
}

fn conv(rng: &mut ChaCha8Rng) -> f64 {
    let k = [1, 3][rng.gen_range(0..2)];
    let stride = rng.gen_range(1..=2);
    let padding = if rng.gen_bool(0.5) { Padding::Same } else { Padding::Valid };
    let (n, h, w) = (rng.gen_range(1..=2), rng.gen_range(3..=7), rng.gen_range(3..=7));
    let (cin, cout) = (rng.gen_range(1..=3), rng.gen_range(1..=4));
    let x = random_tensor(rng, &[n, h, w, cin], 1.0);
    let kern = random_tensor(rng, &[k, k, cin, cout], 1.0);
    let seed = seeded(rng);
    check_inputs(
        &[x, kern],
        move |_, v| project(conv2d(v[0], v[1], stride, padding)?, &mut ChaCha8Rng::seed_from_u64(seed)),
        None,
        rng,
    )
}

fn gru(rng: &mut ChaCha8Rng) -> f64 {
    let (b, din, hd) = (rng.gen_range(1..=3), rng.gen_range(1..=4), rng.gen_range(1..=5));
    let inputs = [
        random_tensor(rng, &[b, din], 1.0),
        random_tensor(rng, &[b, hd], 1.0),
        random_tensor(rng, &[din, 3 * hd], 0.8),
        random_tensor(rng, &[hd, 3 * hd], 0.8),
        random_tensor(rng, &[3 * hd], 0.5),
        random_tensor(rng, &[3 * hd], 0.5),
    ];
    let seed = seeded(rng);
    check_inputs(
        &inputs,
        move |_, v| {
            let w = GruWeights {
                wx: v[2],
                wh: v[3],
                bx: v[4],
                bh: v[5],
            };
            project(gru_cell(v[0], v[1], w)?, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        None,
        rng,
    )
}

fn softmax_case(rng: &mut ChaCha8Rng) -> f64 {
    let rank = rng.gen_range(1..=3);
    let shape: Vec<usize> = (0..rank).map(|_| rng.gen_range(1..=5)).collect();
    let axis = rng.gen_range(0..rank);
    let x = random_tensor(rng, &shape, 3.0);
    let seed = seeded(rng);
    check_inputs(
        &[x],
        move |_, v| project(softmax(v[0], axis)?, &mut ChaCha8Rng::seed_from_u64(seed)),
        None,
        rng,
    )
}

fn batch_norm(rng: &mut ChaCha8Rng) -> f64 {
    let c = rng.gen_range(1..=4);
    let shape = [rng.gen_range(1..=2), rng.gen_range(2..=4), rng.gen_range(2..=4), c];
    let x = random_tensor(rng, &shape, 2.0);
    let gamma = random_tensor(rng, &[c], 1.5);
    let beta = random_tensor(rng, &[c], 1.0);
    let mean: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.5..0.5)).collect();
    let var: Vec<f64> = (0..c).map(|_| rng.gen_range(0.2..2.0)).collect();
    let training = rng.gen_bool(0.7);
    let seed = seeded(rng);
    check_inputs(
        &[x, gamma, beta],
        move |_, v| {
            let y = if training {
                batch_norm_train(v[0], v[1], v[2], 1e-5)?.0
            } else {
                batch_norm_eval(v[0], v[1], v[2], &mean, &var, 1e-5)?
            };
            project(y, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        None,
        rng,
    )
}

fn smooth_l1_case(rng: &mut ChaCha8Rng) -> f64 {
    let n = rng.gen_range(1..=20);
    let x = random_tensor(rng, &[n], 3.0);
    let seed = seeded(rng);
    check_inputs(
        &[x],
        move |_, v| project(smooth_l1(v[0]), &mut ChaCha8Rng::seed_from_u64(seed)),
        None,
        rng,
    )
}

fn cross_entropy_case(rng: &mut ChaCha8Rng) -> f64 {
    let (b, v) = (rng.gen_range(1..=4), rng.gen_range(2..=6));
    let logits = random_tensor(rng, &[b, v], 3.0);
    if rng.gen_bool(0.5) {
        let mut t = random_tensor(rng, &[b, v], 1.0);
        for row in t.data_mut().chunks_mut(v) {
            row.iter_mut().for_each(|p| *p = p.abs());
            let s: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= s);
        }
        check_inputs(&[logits], move |_, x| cross_entropy(x[0], &t), None, rng)
    } else {
        let targets: Vec<usize> = (0..b).map(|_| rng.gen_range(0..v)).collect();
        let weights: Vec<f64> = (0..b).map(|_| rng.gen_range(0.0..1.0)).collect();
        check_inputs(
            &[logits],
            move |_, x| sparse_cross_entropy(x[0], &targets, &weights),
            None,
            rng,
        )
    }
}

fn upsample(rng: &mut ChaCha8Rng) -> f64 {
    let factor = [1, 2, 4][rng.gen_range(0..3)];
    let shape = [rng.gen_range(1..=2), rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=3)];
    let x = random_tensor(rng, &shape, 1.0);
    let seed = seeded(rng);
    check_inputs(
        &[x],
        move |_, v| project(upsample_bilinear(v[0], factor)?, &mut ChaCha8Rng::seed_from_u64(seed)),
        None,
        rng,
    )
}

fn perspective(rng: &mut ChaCha8Rng) -> f64 {
    let (n, hs, ws, c) = (rng.gen_range(1..=2), rng.gen_range(4..=8), rng.gen_range(4..=9), rng.gen_range(1..=3));
    let feats = random_tensor(rng, &[n, hs, ws, c], 1.0);
    let batch = rng.gen_range(0..n);
    let quad = loop {
        let pts = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]].map(|[u, v]: [f64; 2]| {
            [
                u * (ws as f64 - 1.0) + rng.gen_range(-1.0..1.0),
                v * (hs as f64 - 1.0) + rng.gen_range(-1.0..1.0),
            ]
        });
        let q = Quad::new(pts);
        if q.is_valid() && q.is_convex() {
            break q;
        }
    };
    let (w_t, h_t) = (rng.gen_range(2..=6), rng.gen_range(2..=4));
    let h = solve_homography(&quad, w_t, h_t).expect("convex quad");
    let seed = seeded(rng);
    check_inputs(
        &[feats],
        move |_, v| project(perspective_sample(v[0], batch, &h, w_t, h_t)?, &mut ChaCha8Rng::seed_from_u64(seed)),
        None,
        rng,
    )
}

fn small_recognizer(rng: &mut ChaCha8Rng, bidirectional: bool) -> (Recognizer, ParamStore<f64>) {
    let cfg = RecognizerConfig {
        in_channels: 3,
        conv_channels: 4,
        conv_layers: 1,
        encoder_hidden: 3,
        decoder_hidden: 4,
        embedding: 3,
        attention: 4,
        bidirectional,
    };
    let mut store = ParamStore::new();
    let vocab = CharVocab::new("abc".chars()).unwrap();
    let rec = Recognizer::new(&mut store, cfg, vocab, rng);
    // break the zero initialization of biases so every path is exercised
    for (_, p) in store.iter_mut() {
        if p.trainable {
            for v in p.tensor.data_mut() {
                *v += rng.gen_range(-0.3..0.3);
            }
        }
    }
    (rec, store)
}

fn attention_step(rng: &mut ChaCha8Rng) -> f64 {
    let bidirectional = rng.gen_bool(0.5);
    let (rec, store) = small_recognizer(rng, bidirectional);
    let h = rng.gen_range(1..=2);
    let rois: Vec<_> = (0..rng.gen_range(1..=3))
        .map(|_| {
            let w = rng.gen_range(1..=4);
            random_tensor(rng, &[1, h, w, 3], 1.0)
        })
        .collect();
    let r = rois.len();
    let mut inputs = rois;
    inputs.push(random_tensor(rng, &[r, 4], 1.0));
    let seed = seeded(rng);
    check_model(
        &store,
        &inputs,
        move |ctx, v| {
            let enc = rec.encode(ctx, &v[..r])?;
            let (c, _) = rec.attention_step(ctx, &enc, v[r])?;
            project(c, &mut ChaCha8Rng::seed_from_u64(seed))
        },
        None,
        rng,
    )
}

fn decode_step(rng: &mut ChaCha8Rng) -> f64 {
    let (rec, store) = small_recognizer(rng, false);
    let r = rng.gen_range(1..=3);
    let d = rec.feature_dim();
    let inputs = [random_tensor(rng, &[r, d], 1.0), random_tensor(rng, &[r, 4], 1.0)];
    let prev: Vec<usize> = (0..r).map(|_| rng.gen_range(0..rec.vocab.num_inputs())).collect();
    let seed = seeded(rng);
    check_model(
        &store,
        &inputs,
        move |ctx, v| {
            let (logits, g) = rec.decode_step(ctx, v[0], &prev, v[1])?;
            let mut prng = ChaCha8Rng::seed_from_u64(seed);
            let a = project(logits, &mut prng)?;
            let b = project(g, &mut prng)?;
            textnet_core::tensor::add(a, b)
        },
        None,
        rng,
    )
}

/// Tiny configuration for whole-network checks.
pub fn tiny_config() -> RunConfig {
    RunConfig::parse(
        "model.widths=3,3,4,4\nmodel.block_mid=3\nmodel.fused=4\nmodel.h_t=2\nmodel.w_max=6\n\
         model.rec_conv=3\nmodel.rec_conv_layers=1\nmodel.enc_hidden=3\nmodel.dec_hidden=3\n\
         model.embedding=2\nmodel.attention=3\ntrain.image_size=64\ntrain.batch=2\ntrain.rois=3\n\
         data.width=64\ndata.height=64\ndata.glyph_min=9\ndata.glyph_max=12\ndata.words_min=1\n\
         data.words_max=2\ndata.words=ab,ba,abc,c1\n",
    )
    .expect("tiny config")
}

fn full_network(rng: &mut ChaCha8Rng) -> f64 {
    let mut cfg = tiny_config();
    cfg.data.synth.seed = rng.gen();
    cfg.loss.beta = rng.gen_range(0.5..2.0);
    let batch: Vec<_> = (0..2)
        .map(|i| fit_to_size(&render_sample(&cfg.data.synth, i).unwrap(), 64))
        .collect();
    let (net, mut store) = TextNet::build::<f64>(&cfg.model, rng.gen());
    for (_, p) in store.iter_mut() {
        if p.trainable {
            for v in p.tensor.data_mut() {
                *v += rng.gen_range(-0.05..0.05);
            }
        }
    }
    let roi_seed = rng.gen();
    check_model(
        &store,
        &[],
        move |ctx, _| Ok(total_loss(ctx, &net, &batch, &cfg, Stage::Joint, roi_seed)?.0),
        Some(3),
        rng,
    )
}

pub fn cases() -> Vec<Case> {
    let p = |name, run| Case {
        name,
        tol: PRIMITIVE_TOL,
        run,
    };
    vec![
        p("conv2d", conv as fn(&mut ChaCha8Rng) -> f64),
        p("gru_cell", gru),
        p("softmax", softmax_case),
        p("batch_norm", batch_norm),
        p("smooth_l1", smooth_l1_case),
        p("cross_entropy", cross_entropy_case),
        p("upsample", upsample),
        p("perspective_sample", perspective),
        p("attention_step", attention_step),
        p("decode_step", decode_step),
        Case {
            name: "full_network",
            tol: COMPOSITE_TOL,
            run: full_network,
        },
    ]
}

/// Worst error of each case over `instances` random draws.
pub fn run(instances: usize, seed: u64) -> Vec<(&'static str, f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases()
        .into_iter()
        .map(|c| {
            let worst = (0..instances).map(|_| (c.run)(&mut rng)).fold(0.0, f64::max);
            (c.name, worst, c.tol)
        })
        .collect()
}
