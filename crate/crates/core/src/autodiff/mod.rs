//! Tape-based reverse-mode differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during an
//! eager forward pass. [`Tape::backward`] then walks the records in reverse
//! and accumulates vector-Jacobian products into a [`Gradients`] table.
//!
//! ```
//! use tagcn::autodiff::Tape;
//! use tagcn::tensor::Tensor;
//!
//! let tape = Tape::new();
//! let x = tape.param(Tensor::from_vec(vec![1.0, 2.0]));
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.wrt(x).data(), &[2.0, 4.0]);
//! ```

mod kernels;
mod ops;

use std::cell::{Cell, RefCell};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub use ops::{sigmoid, OpKind};
use ops::Op;

struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records one forward pass. Single-threaded; build a fresh tape per pass.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    fault: Cell<Option<OpKind>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Mutation-testing hook: every backward rule of `kind` returns its input
    /// gradients scaled by 1.5. Used to prove the gradient checker catches
    /// broken rules.
    pub fn inject_fault(&self, kind: OpKind) {
        self.fault.set(Some(kind));
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, false)
    }

    pub fn param(&self, value: Tensor) -> Var<'_> {
        self.leaf(value, true)
    }

    pub fn leaf(&self, value: Tensor, requires_grad: bool) -> Var<'_> {
        self.push(value, Op::Leaf, requires_grad)
    }

    fn push(&self, value: Tensor, op: Op, needs_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].needs_grad)
    }

    /// Hash of the sign pattern at every ReLU input. Two forward passes with
    /// equal signatures took the same branch at every kink, so a finite
    /// difference between them sees a smooth function.
    pub fn kink_signature(&self) -> u64 {
        const FNV_PRIME: u64 = 0x100000001b3;
        let nodes = self.nodes.borrow();
        let mut h: u64 = 0xcbf29ce484222325;
        for node in nodes.iter() {
            if let Op::Relu(input) = node.op {
                for &v in nodes[input].value.data() {
                    h ^= u64::from(v > 0.0);
                    h = h.wrapping_mul(FNV_PRIME);
                }
            }
        }
        h
    }

    /// Reverse-mode sweep from a scalar `root`.
    pub fn backward(&self, root: Var<'_>) -> Result<Gradients> {
        let nodes = self.nodes.borrow();
        if nodes[root.id].value.len() != 1 {
            return Err(Error::Argument(format!(
                "backward root must be a scalar, got shape {:?}",
                nodes[root.id].value.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; nodes.len()];
        grads[root.id] = Some(vec![1.0]);
        let fault = self.fault.get();
        for id in (0..=root.id).rev() {
            let Some(dy) = grads[id].take() else { continue };
            let node = &nodes[id];
            if !node.needs_grad {
                continue;
            }
            if let Op::Leaf = node.op {
                grads[id] = Some(dy);
                continue;
            }
            let mut contributions = node.op.backward(&nodes, &node.value, &dy);
            if fault == Some(node.op.kind()) {
                for (_, g) in contributions.iter_mut() {
                    g.iter_mut().for_each(|v| *v *= 1.5);
                }
            }
            for (input, g) in contributions {
                if !nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    slot @ None => *slot = Some(g),
                }
            }
            grads[id] = None;
        }
        let shapes = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

/// Gradients of one backward sweep, indexed by the leaves they belong to.
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Total derivative of the root w.r.t. `v`; zeros if `v` is unreachable.
    pub fn wrt(&self, v: Var<'_>) -> Tensor {
        self.by_id(v.id)
    }

    pub fn by_id(&self, id: usize) -> Tensor {
        let shape = &self.shapes[id];
        match &self.grads[id] {
            Some(g) => Tensor::new(shape.clone(), g.clone()).expect("gradient shape"),
            None => Tensor::zeros(shape),
        }
    }
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Tensor {
        self.tape.nodes.borrow()[self.id].value.clone()
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor) -> R) -> R {
        f(&self.tape.nodes.borrow()[self.id].value)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.with_value(|t| t.shape().to_vec())
    }

    pub fn item(&self) -> f64 {
        self.with_value(|t| t.item())
    }
}
