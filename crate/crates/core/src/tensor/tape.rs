//! Computation tape: an append-only record of primitive applications that is
//! replayed in reverse to accumulate gradients.

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Vector-Jacobian product of one tape entry: receives the gradient of the
/// entry's output and accumulates into its inputs through the sink.
pub type BackwardFn<T> = Box<dyn Fn(&[T], &mut GradSink<T>)>;

struct Node<T> {
    value: Rc<Tensor<T>>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

/// Record of the forward computation. Entries are appended in execution
/// order, so every input of entry `k` has an index below `k`.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
    consumed: Cell<bool>,
}

impl<T> Default for Tape<T> {
    fn default() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            consumed: Cell::new(false),
        }
    }
}

/// Handle to a tape entry.
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = self.tape.nodes.borrow()[self.id].value.shape.clone();
        f.debug_struct("Var")
            .field("id", &self.id)
            .field("shape", &shape)
            .finish()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Adds a leaf. Gradients are reported for leaves with `requires_grad`.
    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.insert(value, requires_grad, None)
    }

    /// Handle for an existing entry id.
    pub(crate) fn leaf_ref(&self, id: usize) -> Var<'_, T> {
        debug_assert!(id < self.len());
        Var { tape: self, id }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    fn insert(
        &self,
        mut value: Tensor<T>,
        requires_grad: bool,
        backward: Option<BackwardFn<T>>,
    ) -> Var<'_, T> {
        value.set_requires_grad(false);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            requires_grad,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Appends the result of a primitive. The backward closure is only built
    /// when some parent participates in differentiation.
    pub fn push<'t>(
        &'t self,
        value: Tensor<T>,
        parents: &[Var<'t, T>],
        backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Var<'t, T> {
        debug_assert!(parents.iter().all(|p| std::ptr::eq(p.tape, self)));
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        let backward = requires_grad.then(backward);
        self.insert(value, requires_grad, backward)
    }

    /// Runs the reverse sweep from a scalar loss. Each entry at or below the
    /// loss is visited once, in reverse insertion order. The tape can be
    /// differentiated only once.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        if !std::ptr::eq(loss.tape, self) {
            return Err(Error::Usage("loss belongs to a different tape".into()));
        }
        if loss.value().numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                loss.shape()
            )));
        }
        if self.consumed.replace(true) {
            return Err(Error::Usage("tape already differentiated".into()));
        }
        let nodes = self.nodes.borrow();
        let mut sink = GradSink {
            grads: (0..nodes.len()).map(|_| None).collect(),
            sizes: nodes.iter().map(|n| n.value.numel()).collect(),
            requires: nodes.iter().map(|n| n.requires_grad).collect(),
        };
        if !nodes[loss.id].requires_grad {
            return Ok(Gradients { grads: sink.grads });
        }
        sink.grads[loss.id] = Some(vec![T::one()]);
        for k in (0..=loss.id).rev() {
            let Some(backward) = &nodes[k].backward else {
                continue;
            };
            if let Some(g) = sink.grads[k].take() {
                backward(&g, &mut sink);
                sink.grads[k] = Some(g);
            }
        }
        Ok(Gradients { grads: sink.grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        Rc::clone(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.nodes.borrow()[self.id].value.shape().to_vec()
    }

    pub fn numel(&self) -> usize {
        self.tape.nodes.borrow()[self.id].value.numel()
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.nodes.borrow()[self.id].requires_grad
    }

    /// First element; used for scalar results.
    pub fn item(&self) -> T {
        self.tape.nodes.borrow()[self.id].value.data()[0]
    }
}

/// Gradient accumulator handed to backward closures.
pub struct GradSink<T> {
    grads: Vec<Option<Vec<T>>>,
    sizes: Vec<usize>,
    requires: Vec<bool>,
}

impl<T: Scalar> GradSink<T> {
    pub fn wants(&self, id: usize) -> bool {
        self.requires[id]
    }

    /// Mutable gradient buffer of entry `id`, zero-initialized on first use.
    /// `None` when that entry does not participate in differentiation.
    pub fn slot(&mut self, id: usize) -> Option<&mut [T]> {
        if !self.requires[id] {
            return None;
        }
        let size = self.sizes[id];
        Some(
            self.grads[id]
                .get_or_insert_with(|| vec![T::zero(); size])
                .as_mut_slice(),
        )
    }

    pub fn add(&mut self, id: usize, g: &[T]) {
        if let Some(slot) = self.slot(id) {
            debug_assert_eq!(slot.len(), g.len());
            for (a, &b) in slot.iter_mut().zip(g) {
                *a += b;
            }
        }
    }
}

/// Result of a reverse sweep.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss w.r.t. any entry, `None` if the entry is off
    /// the path to the loss (equivalently all-zero).
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }

    pub fn get_or_zeros(&self, v: Var<'_, T>) -> Vec<T> {
        self.get(v)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); v.numel()])
    }
}
