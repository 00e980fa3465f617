use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradient rule of one recorded op: `(grad_out, parent_values, needed) -> grads`.
/// Must return one entry per parent; entries for parents with `needed[i] == false`
/// may be `None`.
pub(crate) type Backward<T> = Box<dyn Fn(&Tensor<T>, &[&Tensor<T>], &[bool]) -> Result<Vec<Option<Tensor<T>>>>>;

struct Node<T: Real> {
    value: Rc<Tensor<T>>,
    parents: Vec<usize>,
    backward: Option<Backward<T>>,
    needs_grad: bool,
    is_param: bool,
    grad: Option<Tensor<T>>,
}

/// Ordered record of executed ops. Node ids are assigned in execution order,
/// so reverse id order is a valid reverse topological order.
///
/// Gradients of parameter leaves accumulate across [`Tape::backward`] calls
/// until [`Tape::zero_grad`] or [`Tape::clear`].
pub struct Tape<T: Real = f64> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Real = f64> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Real> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var(#{} {:?})", self.id, self.shape())
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: RefCell::new(Vec::new()) }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push_node(&self, node: Node<T>) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(node);
        Var { tape: self, id: nodes.len() - 1 }
    }

    /// Leaf whose gradient is collected by [`Tape::backward`].
    pub fn param(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.leaf(value, false)
    }

    pub fn leaf(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        self.push_node(Node {
            value: Rc::new(value),
            parents: Vec::new(),
            backward: None,
            needs_grad: requires_grad,
            is_param: requires_grad,
            grad: None,
        })
    }

    pub(crate) fn record(&self, value: Tensor<T>, parents: &[Var<'_, T>], backward: Backward<T>) -> Result<Var<'_, T>> {
        value.ensure_finite("op output")?;
        let ids: Vec<usize> = parents.iter().map(|p| p.id).collect();
        let needs_grad = {
            let nodes = self.nodes.borrow();
            ids.iter().any(|&i| nodes[i].needs_grad)
        };
        Ok(self.push_node(Node {
            value: Rc::new(value),
            parents: ids,
            backward: needs_grad.then_some(backward),
            needs_grad,
            is_param: false,
            grad: None,
        }))
    }

    /// Reverse sweep from a scalar `loss`, accumulating into parameter leaves.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<()> {
        let n = loss.id + 1;
        let mut grads: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        {
            let nodes = self.nodes.borrow();
            let value = &nodes[loss.id].value;
            if value.len() != 1 {
                return Err(Error::Contract(format!("backward needs a scalar loss, got shape {:?}", value.shape())));
            }
            grads[loss.id] = Some(Tensor::full(value.shape(), 1.0)?);
            for id in (0..n).rev() {
                let node = &nodes[id];
                let Some(backward) = node.backward.as_ref() else { continue };
                let Some(gout) = grads[id].take() else { continue };
                let parents: Vec<Rc<Tensor<T>>> = node.parents.iter().map(|&p| nodes[p].value.clone()).collect();
                let refs: Vec<&Tensor<T>> = parents.iter().map(|p| p.as_ref()).collect();
                let needed: Vec<bool> = node.parents.iter().map(|&p| nodes[p].needs_grad).collect();
                let pgrads = backward(&gout, &refs, &needed)?;
                debug_assert_eq!(pgrads.len(), node.parents.len());
                for ((&p, g), need) in node.parents.iter().zip(pgrads).zip(needed) {
                    let (Some(g), true) = (g, need) else { continue };
                    match &mut grads[p] {
                        Some(acc) => acc.add_assign(&g)?,
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        let mut nodes = self.nodes.borrow_mut();
        for (id, g) in grads.into_iter().enumerate() {
            let (Some(g), true) = (g, nodes[id].is_param) else { continue };
            match &mut nodes[id].grad {
                Some(acc) => acc.add_assign(&g)?,
                slot => *slot = Some(g),
            }
        }
        Ok(())
    }

    pub fn grad(&self, var: Var<'_, T>) -> Option<Tensor<T>> {
        self.nodes.borrow()[var.id].grad.clone()
    }

    pub fn zero_grad(&self) {
        for node in self.nodes.borrow_mut().iter_mut() {
            node.grad = None;
        }
    }

    /// Drops every recorded node. Requires exclusive access, so no stale
    /// [`Var`] can outlive it.
    pub fn clear(&mut self) {
        self.nodes.get_mut().clear();
    }

    pub(crate) fn value_of(&self, id: usize) -> Rc<Tensor<T>> {
        self.nodes.borrow()[id].value.clone()
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn id(&self) -> usize {
        self.id
    }

    pub fn value(&self) -> Rc<Tensor<T>> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    pub fn grad(&self) -> Option<Tensor<T>> {
        self.tape.grad(*self)
    }
}
