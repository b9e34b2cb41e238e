//! Dense `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations on tensors
//! that require gradients record a [`GraphNode`] holding the op tag, its inputs
//! and whatever forward values the backward rule needs. [`Tensor::backward`]
//! walks that graph once in reverse topological order and accumulates
//! gradients into every reachable tensor that requires them.
//!
//! The graph is rebuilt on every forward pass and dropped with the last
//! reference to the loss.

mod gradcheck;
pub(crate) mod kernels;
mod ops;

use std::cell::{Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result, ShapeFmt};

pub use gradcheck::{compare_with_central_differences, finite_diff_check, GradCheckReport};
pub(crate) use ops::Op;
pub use ops::{BatchNormStats, NormMode};

#[derive(Clone)]
pub struct Tensor(Rc<Inner>);

struct Inner {
    shape: Vec<usize>,
    data: Vec<f64>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<f64>>>,
    node: Option<GraphNode>,
}

/// One recorded operation: the op (with saved forward values) and its inputs.
pub struct GraphNode {
    op: Op,
    inputs: Vec<Tensor>,
}

impl GraphNode {
    pub fn op_name(&self) -> &'static str {
        self.op.name()
    }

    pub fn inputs(&self) -> &[Tensor] {
        &self.inputs
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op.name()))
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "buffer of length {} cannot have shape {}",
                data.len(),
                ShapeFmt(shape)
            )));
        }
        if shape.contains(&0) {
            return Err(Error::Shape(format!(
                "zero-sized dimension in {}",
                ShapeFmt(shape)
            )));
        }
        Ok(Self::leaf(data, shape.to_vec(), false))
    }

    /// Leaf tensor that participates in differentiation.
    pub fn parameter(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        Ok(Self::from_vec(data, shape)?.requiring_grad())
    }

    pub fn scalar(v: f64) -> Self {
        Self::leaf(vec![v], Vec::new(), false)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], v: f64) -> Self {
        let n = shape.iter().product();
        Self::leaf(vec![v; n], shape.to_vec(), false)
    }

    fn leaf(data: Vec<f64>, shape: Vec<usize>, requires_grad: bool) -> Self {
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node: None,
        }))
    }

    /// Result of an op. A node is only recorded when some input needs gradients.
    pub(crate) fn from_op(data: Vec<f64>, shape: Vec<usize>, op: Op, inputs: Vec<Tensor>) -> Self {
        debug_assert_eq!(data.len(), shape.iter().product::<usize>());
        let requires_grad = inputs.iter().any(Tensor::requires_grad);
        let node = requires_grad.then_some(GraphNode { op, inputs });
        Tensor(Rc::new(Inner {
            shape,
            data,
            requires_grad,
            grad: RefCell::new(None),
            node,
        }))
    }

    /// Fresh leaf sharing this tensor's values, with `requires_grad` set.
    pub fn requiring_grad(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), true)
    }

    /// Fresh leaf with the same values and no graph.
    pub fn detach(&self) -> Tensor {
        Self::leaf(self.0.data.clone(), self.0.shape.clone(), false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn node(&self) -> Option<&GraphNode> {
        self.0.node.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<f64>>> {
        self.0.grad.borrow()
    }

    pub fn zero_grad(&self) {
        *self.0.grad.borrow_mut() = None;
    }

    pub fn same_as(&self, other: &Tensor) -> bool {
        Rc::ptr_eq(&self.0, &other.0)
    }

    fn accumulate_grad(&self, g: Vec<f64>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g),
        }
    }

    /// Reverse-mode sweep from this scalar. Gradients accumulate, so reused
    /// leaves must be cleared with [`Tensor::zero_grad`] between sweeps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {}",
                ShapeFmt(self.shape())
            )));
        }
        if !self.requires_grad() {
            return Err(Error::Contract(
                "backward called on a tensor with no gradient graph".into(),
            ));
        }
        let order = self.topo_order();
        self.accumulate_grad(vec![1.0]);
        for t in order.iter().rev() {
            let Some(node) = t.0.node.as_ref() else {
                continue;
            };
            let input_grads = {
                let g = t.0.grad.borrow();
                let Some(g) = g.as_ref() else { continue };
                node.op.backward(&node.inputs, t, g)
            };
            for (input, g) in node.inputs.iter().zip(input_grads) {
                if let Some(g) = g {
                    if input.requires_grad() {
                        input.accumulate_grad(g);
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the subgraph of tensors that require gradients.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut seen: HashSet<*const Inner> = HashSet::new();
        let mut stack: Vec<(Tensor, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !seen.insert(Rc::as_ptr(&t.0)) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.0.node.as_ref() {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !seen.contains(&Rc::as_ptr(&input.0)) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        order
    }
}
