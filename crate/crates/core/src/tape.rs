//! Reverse-mode tape.
//!
//! A [`Graph`] records every primitive applied to its [`Var`]s. Values are
//! immutable once recorded. [`Graph::backward`] walks the record in reverse
//! and accumulates `d loss / d leaf` into the `grad` slot of every leaf that
//! requires a gradient. Only first-order gradients are supported.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::ops;
use crate::params::ParamStore;
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    /// Along the last dimension (horizontal).
    X,
    /// Along the second-to-last dimension (vertical).
    Y,
}

#[derive(Debug, Clone)]
pub(crate) enum Op<T> {
    Leaf,
    Conv2d {
        input: usize,
        weight: usize,
        bias: Option<usize>,
        stride: usize,
        padding: usize,
    },
    Relu(usize),
    Sigmoid(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Square(usize),
    Abs(usize),
    Clamp {
        x: usize,
        lo: T,
        hi: T,
    },
    Pow {
        x: usize,
        exponent: T,
        floor: T,
    },
    AvgPool2(usize),
    MaxPool2 {
        x: usize,
        argmax: Vec<usize>,
    },
    Upsample2(usize),
    Concat(Vec<usize>),
    Narrow {
        x: usize,
        start: usize,
    },
    Reshape(usize),
    GlobalAvgPool(usize),
    GlobalMaxPool {
        x: usize,
        argmax: Vec<usize>,
    },
    ChannelMean(usize),
    ChannelMax {
        x: usize,
        argmax: Vec<usize>,
    },
    ScaleChannels {
        x: usize,
        gate: usize,
    },
    ScaleSpatial {
        x: usize,
        gate: usize,
    },
    AdaptiveConv {
        frames: usize,
        kernels: usize,
        size: usize,
    },
    ForwardDiff {
        x: usize,
        axis: Axis,
    },
    Sum(usize),
    Mean(usize),
}

#[derive(Debug, Clone)]
pub(crate) struct Node<T> {
    pub(crate) value: Tensor<T>,
    pub(crate) op: Op<T>,
}

/// Recorded computation.
#[derive(Debug, Clone, Default)]
pub struct Graph<T> {
    pub(crate) nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; never receives a gradient.
    pub fn input(&mut self, mut value: Tensor<T>) -> Var {
        value.requires_grad = false;
        value.grad = None;
        self.push_leaf(value)
    }

    /// Leaf that receives a gradient on [`Graph::backward`].
    pub fn leaf(&mut self, mut value: Tensor<T>) -> Var {
        value.requires_grad = true;
        value.grad = None;
        self.push_leaf(value)
    }

    fn push_leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
        });
        Var(self.nodes.len() - 1)
    }

    /// Bind a parameter from `store` as a gradient-carrying leaf. Repeated
    /// lookups of the same name return the same [`Var`].
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let t = store
            .get(name)
            .ok_or_else(|| Error::UnknownParam(name.to_string()))?;
        let value = Tensor::new(t.shape(), t.data().to_vec())?;
        let v = if t.requires_grad {
            self.leaf(value)
        } else {
            self.input(value)
        };
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Register an existing node under a parameter name; later
    /// [`Graph::param`] lookups of `name` return `var`.
    pub fn bind_param(&mut self, name: &str, var: Var) {
        self.params.insert(name.to_string(), var);
    }

    /// Parameters bound so far, by name.
    pub fn bound_params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn data(&self, v: Var) -> &[T] {
        self.nodes[v.0].value.data()
    }

    /// Accumulated gradient of a leaf, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.nodes[v.0].value.grad.as_deref()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].value.requires_grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            if matches!(n.op, Op::Leaf) && n.value.requires_grad {
                n.value.grad = None;
            }
        }
    }

    pub(crate) fn push(&mut self, value: Tensor<T>, op: Op<T>, inputs: &[usize]) -> Var {
        let mut value = value;
        value.requires_grad = inputs.iter().any(|&i| self.nodes[i].value.requires_grad);
        value.grad = None;
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    /// Accumulate `d loss / d leaf` into every gradient-carrying leaf.
    /// Calling twice without [`Graph::zero_grad`] sums the two gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.shape(loss).to_vec();
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        let mut grads: Vec<Option<Vec<T>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaf_grads: Vec<(usize, Vec<T>)> = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.value.requires_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => leaf_grads.push((i, g)),
                op => ops::backward(&self.nodes, i, op, &g, &mut grads),
            }
        }
        for (i, g) in leaf_grads {
            let value = &mut self.nodes[i].value;
            match &mut value.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => value.grad = Some(g),
            }
        }
        Ok(())
    }
}

/// Add `f`'s contribution into the gradient slot of node `idx`, creating it
/// zero-filled if needed. Skips nodes that do not require a gradient.
pub(crate) fn accumulate<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Vec<T>>],
    idx: usize,
    f: impl FnOnce(&mut [T]),
) {
    if !nodes[idx].value.requires_grad {
        return;
    }
    let slot = grads[idx].get_or_insert_with(|| vec![T::zero(); nodes[idx].value.len()]);
    f(slot);
}
