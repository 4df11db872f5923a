//! Named parameter storage, per-step binding onto a tape, and the layer
//! building blocks shared by every network stage.

use std::cell::RefCell;

use rand::Rng;

use crate::error::Result;
use crate::tensor::{
    self, add_bias, batch_norm_eval, batch_norm_train, conv2d, GruWeights, Padding, Scalar, Tape,
    Tensor, Var,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub name: String,
    pub tensor: Tensor<T>,
    /// Buffers (batch-norm running statistics) are stored but not optimized.
    pub trainable: bool,
}

/// Weight initialization schemes.
#[derive(Debug, Clone, Copy)]
pub enum Init {
    Zeros,
    Ones,
    /// Zero-mean uniform with bound `sqrt(gain / fan_in)`.
    Uniform { fan_in: usize, gain: f64 },
}

impl Init {
    /// He-style scaling for layers followed by ReLU.
    pub fn he(fan_in: usize) -> Self {
        Init::Uniform { fan_in, gain: 6.0 }
    }

    /// Variance-preserving scaling for saturating (tanh / sigmoid) units.
    pub fn lecun(fan_in: usize) -> Self {
        Init::Uniform { fan_in, gain: 3.0 }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        trainable: bool,
        rng: &mut impl Rng,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![T::zero(); n],
            Init::Ones => vec![T::one(); n],
            Init::Uniform { fan_in, gain } => {
                let bound = (gain / fan_in.max(1) as f64).sqrt();
                (0..n)
                    .map(|_| T::from_f64(rng.gen_range(-bound..=bound)))
                    .collect()
            }
        };
        let mut tensor = Tensor::new(shape.to_vec(), data).expect("parameter shape");
        tensor.set_requires_grad(trainable);
        self.params.push(Param {
            name: name.into(),
            tensor,
            trainable,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<T> {
        &mut self.params[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Param<T>)> {
        self.params.iter_mut().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn num_trainable(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.tensor.set_grad(None);
        }
    }

    /// Converts every parameter and buffer to another precision.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    tensor: p.tensor.cast(),
                    trainable: p.trainable,
                })
                .collect(),
        }
    }

    /// Copies gradients from a finished reverse sweep into the bound
    /// parameters. Unbound or off-path parameters get an all-zero gradient.
    pub fn absorb_grads(&mut self, tape: &Tape<T>, pass: &Pass<T>, grads: &tensor::Gradients<T>) {
        for (i, p) in self.params.iter_mut().enumerate() {
            if !p.trainable {
                continue;
            }
            let g = pass.bound[i]
                .and_then(|id| grads.get(tape.leaf_ref(id)).map(<[T]>::to_vec))
                .unwrap_or_else(|| vec![T::zero(); p.tensor.numel()]);
            p.tensor.set_grad(Some(g));
        }
    }

    /// Applies running-statistic updates collected during a training forward.
    pub fn apply_updates(&mut self, updates: Vec<BufferUpdate<T>>, momentum: T) {
        for u in updates {
            let data = self.params[u.id.0].tensor.data_mut();
            for (r, &b) in data.iter_mut().zip(&u.batch_value) {
                *r = momentum * *r + (T::one() - momentum) * b;
            }
        }
    }
}

/// Pending exponential-average update of a buffer.
#[derive(Debug, Clone)]
pub struct BufferUpdate<T> {
    pub id: ParamId,
    pub batch_value: Vec<T>,
}

/// Parameter bindings and buffer updates of a finished forward pass.
#[derive(Debug, Clone)]
pub struct Pass<T> {
    bound: Vec<Option<usize>>,
    pub updates: Vec<BufferUpdate<T>>,
}

/// Forward-pass context: binds parameters onto a tape once each and
/// collects buffer updates in training mode.
pub struct Ctx<'t, T> {
    pub tape: &'t Tape<T>,
    pub store: &'t ParamStore<T>,
    pub train: bool,
    grad: bool,
    bound: RefCell<Vec<Option<usize>>>,
    updates: RefCell<Vec<BufferUpdate<T>>>,
}

impl<'t, T: Scalar> Ctx<'t, T> {
    /// Training-mode context: batch statistics, parameters differentiable.
    pub fn train(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self::with_mode(tape, store, true, true)
    }

    /// Inference-mode context: running statistics, no gradients.
    pub fn eval(tape: &'t Tape<T>, store: &'t ParamStore<T>) -> Self {
        Self::with_mode(tape, store, false, false)
    }

    pub fn with_mode(tape: &'t Tape<T>, store: &'t ParamStore<T>, train: bool, grad: bool) -> Self {
        Ctx {
            tape,
            store,
            train,
            grad,
            bound: RefCell::new(vec![None; store.len()]),
            updates: RefCell::new(Vec::new()),
        }
    }

    pub fn param(&self, id: ParamId) -> Var<'t, T> {
        if let Some(node) = self.bound.borrow()[id.0] {
            return self.tape.leaf_ref(node);
        }
        let p = self.store.get(id);
        let v = self
            .tape
            .leaf(p.tensor.clone(), self.grad && p.trainable);
        self.bound.borrow_mut()[id.0] = Some(v.id());
        v
    }

    /// Tape node bound to a parameter, if it was used in this pass.
    pub fn bound_var(&self, id: ParamId) -> Option<Var<'t, T>> {
        self.bound.borrow()[id.0].map(|n| self.tape.leaf_ref(n))
    }

    /// Ends the pass, releasing the borrow of the store.
    pub fn finish(self) -> Pass<T> {
        Pass {
            bound: self.bound.into_inner(),
            updates: self.updates.into_inner(),
        }
    }

    pub fn take_updates(&self) -> Vec<BufferUpdate<T>> {
        std::mem::take(&mut self.updates.borrow_mut())
    }

    fn record_update(&self, id: ParamId, batch_value: Vec<T>) {
        self.updates.borrow_mut().push(BufferUpdate { id, batch_value });
    }
}

/// 2-D convolution with optional bias.
#[derive(Debug, Clone, Copy)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            &[k, k, cin, cout],
            Init::he(k * k * cin),
            true,
            rng,
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), &[cout], Init::Zeros, true, rng));
        Conv {
            weight,
            bias,
            stride,
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = conv2d(x, ctx.param(self.weight), self.stride, Padding::Same)?;
        match self.bias {
            Some(b) => add_bias(y, ctx.param(b)),
            None => Ok(y),
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.9;

/// Batch normalization over all axes but the last.
#[derive(Debug, Clone, Copy)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
}

impl BatchNorm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, c: usize, rng: &mut impl Rng) -> Self {
        BatchNorm {
            gamma: store.add(format!("{name}.gamma"), &[c], Init::Ones, true, rng),
            beta: store.add(format!("{name}.beta"), &[c], Init::Zeros, true, rng),
            running_mean: store.add(format!("{name}.running_mean"), &[c], Init::Zeros, false, rng),
            running_var: store.add(format!("{name}.running_var"), &[c], Init::Ones, false, rng),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let (g, b) = (ctx.param(self.gamma), ctx.param(self.beta));
        let eps = T::from_f64(BN_EPS);
        if ctx.train {
            let (y, stats) = batch_norm_train(x, g, b, eps)?;
            ctx.record_update(self.running_mean, stats.mean);
            ctx.record_update(self.running_var, stats.var);
            Ok(y)
        } else {
            let mean = ctx.store.get(self.running_mean).tensor.data();
            let var = ctx.store.get(self.running_var).tensor.data();
            batch_norm_eval(x, g, b, mean, var, eps)
        }
    }
}

/// Convolution, batch norm, ReLU.
#[derive(Debug, Clone, Copy)]
pub struct ConvBnRelu {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBnRelu {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        k: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut impl Rng,
    ) -> Self {
        ConvBnRelu {
            conv: Conv::new(store, &format!("{name}.conv"), k, cin, cout, stride, false, rng),
            bn: BatchNorm::new(store, &format!("{name}.bn"), cout, rng),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = self.conv.forward(ctx, x)?;
        let y = self.bn.forward(ctx, y)?;
        Ok(tensor::relu(y))
    }
}

/// Affine map `x · W + b` on `[B, Din]`.
#[derive(Debug, Clone, Copy)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        dout: usize,
        bias: bool,
        init: Init,
        rng: &mut impl Rng,
    ) -> Self {
        Linear {
            weight: store.add(format!("{name}.weight"), &[din, dout], init, true, rng),
            bias: bias.then(|| store.add(format!("{name}.bias"), &[dout], Init::Zeros, true, rng)),
        }
    }

    pub fn forward<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let y = tensor::matmul(x, ctx.param(self.weight))?;
        match self.bias {
            Some(b) => add_bias(y, ctx.param(b)),
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Gru {
    pub wx: ParamId,
    pub wh: ParamId,
    pub bx: ParamId,
    pub bh: ParamId,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        name: &str,
        din: usize,
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let g3 = 3 * hidden;
        Gru {
            wx: store.add(format!("{name}.wx"), &[din, g3], Init::lecun(din), true, rng),
            wh: store.add(format!("{name}.wh"), &[hidden, g3], Init::lecun(hidden), true, rng),
            bx: store.add(format!("{name}.bx"), &[g3], Init::Zeros, true, rng),
            bh: store.add(format!("{name}.bh"), &[g3], Init::Zeros, true, rng),
            hidden,
        }
    }

    pub fn weights<'t, T: Scalar>(&self, ctx: &Ctx<'t, T>) -> GruWeights<'t, T> {
        GruWeights {
            wx: ctx.param(self.wx),
            wh: ctx.param(self.wh),
            bx: ctx.param(self.bx),
            bh: ctx.param(self.bh),
        }
    }

    pub fn step<'t, T: Scalar>(
        &self,
        ctx: &Ctx<'t, T>,
        x: Var<'t, T>,
        h: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        tensor::gru_cell(x, h, self.weights(ctx))
    }
}
