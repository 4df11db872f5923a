//! Central finite-difference gradient oracle in f64.
//!
//! The error of a check is the worst, over inputs, of
//! `‖g_analytic − g_numeric‖₂ / max(‖g_analytic‖₂, ‖g_numeric‖₂, 1e-12)`
//! over the checked coordinates of that input. Coordinate `x` is perturbed
//! by `±h` with `h = STEP·max(1, |x|)`. When the central quotients at `h`
//! and `h/2` disagree the probe straddles a kink (ReLU, max) and the step
//! shrinks tenfold until they agree.

#![allow(dead_code)]

use rand::seq::index::sample;
use rand::Rng;
use textnet_core::params::{Ctx, ParamStore};
use textnet_core::{Result, Tape, Tensor, Var};

pub const STEP: f64 = 1e-5;

const MAX_SHRINKS: usize = 4;

/// Central-difference derivative of `f` at `x`, with kink retreat.
fn derivative(f: impl Fn(f64) -> f64, x: f64) -> f64 {
    let central = |h: f64| (f(x + h) - f(x - h)) / (2.0 * h);
    let mut h = STEP * x.abs().max(1.0);
    let mut est = central(h);
    for _ in 0..MAX_SHRINKS {
        let half = central(h / 2.0);
        if (est - half).abs() <= 1e-7 + 1e-5 * est.abs() {
            break;
        }
        h /= 10.0;
        est = central(h);
    }
    est
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-scale..scale))
}

fn rel_err(a: &[f64], n: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(n).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nn = n.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nn).max(1e-12)
}

fn coords(rng: &mut impl Rng, n: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < n => {
            let mut v = sample(rng, n, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..n).collect(),
    }
}

/// Checks the gradient of a scalar function of free tensors. `limit` caps
/// the coordinates probed per input.
pub fn check_inputs<F>(inputs: &[Tensor<f64>], f: F, limit: Option<usize>, rng: &mut impl Rng) -> f64
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let vars: Vec<_> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        f(&tape, &vars).expect("forward").item()
    };
    let tape = Tape::new();
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&tape, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");
    let mut worst = 0.0f64;
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k]);
        let picked = coords(rng, x.numel(), limit);
        let mut a = Vec::with_capacity(picked.len());
        let mut n = Vec::with_capacity(picked.len());
        for &i in &picked {
            let at = |v: f64| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[i] = v;
                eval(&xs)
            };
            a.push(analytic[i]);
            n.push(derivative(at, x.data()[i]));
        }
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}

/// Checks the gradient of a scalar function of every trainable parameter
/// in `store` and of free `inputs`, in training mode.
pub fn check_model<F>(
    store: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    f: F,
    limit: Option<usize>,
    rng: &mut impl Rng,
) -> f64
where
    F: for<'t> Fn(&Ctx<'t, f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let eval = |s: &ParamStore<f64>, xs: &[Tensor<f64>]| -> f64 {
        let tape = Tape::new();
        let ctx = Ctx::train(&tape, s);
        let vars: Vec<_> = xs.iter().map(|x| tape.leaf(x.clone(), false)).collect();
        f(&ctx, &vars).expect("forward").item()
    };
    let tape = Tape::new();
    let ctx = Ctx::train(&tape, store);
    let vars: Vec<_> = inputs.iter().map(|x| tape.leaf(x.clone(), true)).collect();
    let loss = f(&ctx, &vars).expect("forward");
    let grads = tape.backward(loss).expect("backward");
    let pass = ctx.finish();
    let mut with_grads = store.clone();
    with_grads.absorb_grads(&tape, &pass, &grads);
    let mut worst = 0.0f64;
    for (id, p) in with_grads.iter() {
        if !p.trainable {
            continue;
        }
        let analytic = p.tensor.grad().expect("absorbed").to_vec();
        let picked = coords(rng, p.tensor.numel(), limit);
        let mut a = Vec::with_capacity(picked.len());
        let mut n = Vec::with_capacity(picked.len());
        for &i in &picked {
            let at = |v: f64| {
                let mut s = store.clone();
                s.get_mut(id).tensor.data_mut()[i] = v;
                eval(&s, inputs)
            };
            a.push(analytic[i]);
            n.push(derivative(at, p.tensor.data()[i]));
        }
        worst = worst.max(rel_err(&a, &n));
    }
    for (k, x) in inputs.iter().enumerate() {
        let analytic = grads.get_or_zeros(vars[k]);
        let picked = coords(rng, x.numel(), limit);
        let mut a = Vec::with_capacity(picked.len());
        let mut n = Vec::with_capacity(picked.len());
        for &i in &picked {
            let at = |v: f64| {
                let mut xs = inputs.to_vec();
                xs[k].data_mut()[i] = v;
                eval(store, &xs)
            };
            a.push(analytic[i]);
            n.push(derivative(at, x.data()[i]));
        }
        worst = worst.max(rel_err(&a, &n));
    }
    worst
}
