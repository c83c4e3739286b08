//! Dynamic reverse-mode differentiation.
//!
//! Every differentiable operation produces a [`Var`] that remembers its inputs
//! and a [`Backward`] rule. Nodes are numbered in creation order, so that
//! order is a topological order of the recorded graph. Operations whose
//! inputs do not require gradients record nothing, which makes inference free
//! of tape overhead and lets intermediates drop as soon as they go out of
//! scope.

use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);
static DEBUG_CHECKS: AtomicBool = AtomicBool::new(false);

/// Enables the non-finite output check on every recorded operation.
pub fn set_debug_checks(on: bool) {
    DEBUG_CHECKS.store(on, Ordering::Relaxed);
}

pub fn debug_checks() -> bool {
    DEBUG_CHECKS.load(Ordering::Relaxed)
}

/// Inputs handed to a [`Backward`] rule.
pub struct BackwardCtx<'a, T: Element> {
    pub inputs: &'a [Var<T>],
    pub output: &'a Tensor<T>,
    /// Gradient of the loss with respect to `output`.
    pub grad: &'a Tensor<T>,
    /// `needs[i]` is false when input `i` does not require a gradient.
    pub needs: &'a [bool],
}

/// The vector-Jacobian product of one operation.
pub trait Backward<T: Element> {
    fn name(&self) -> &'static str;

    /// Returns one entry per input; entries for inputs with `needs[i] ==
    /// false` may be `None`.
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Result<Vec<Option<Tensor<T>>>>;
}

struct Node<T: Element> {
    id: u64,
    value: Tensor<T>,
    requires_grad: bool,
    inputs: Vec<Var<T>>,
    op: Option<Box<dyn Backward<T>>>,
}

/// A tensor value in the differentiation graph.
pub struct Var<T: Element>(Rc<Node<T>>);

impl<T: Element> Clone for Var<T> {
    fn clone(&self) -> Self {
        Var(Rc::clone(&self.0))
    }
}

impl<T: Element> fmt::Debug for Var<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let op = self.0.op.as_ref().map_or("leaf", |o| o.name());
        write!(f, "Var#{}<{}>{:?}", self.0.id, op, self.0.value)
    }
}

impl<T: Element> Var<T> {
    fn make(value: Tensor<T>, requires_grad: bool, inputs: Vec<Var<T>>, op: Option<Box<dyn Backward<T>>>) -> Self {
        Var(Rc::new(Node {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            value,
            requires_grad,
            inputs,
            op,
        }))
    }

    /// A trainable leaf.
    pub fn param(value: Tensor<T>) -> Self {
        Self::make(value, true, Vec::new(), None)
    }

    /// A leaf that never receives a gradient.
    pub fn constant(value: Tensor<T>) -> Self {
        Self::make(value, false, Vec::new(), None)
    }

    pub fn leaf(value: Tensor<T>, requires_grad: bool) -> Self {
        Self::make(value, requires_grad, Vec::new(), None)
    }

    /// Records an operation result. Nothing is recorded when no input
    /// requires a gradient.
    pub fn from_op(value: Tensor<T>, inputs: &[&Var<T>], op: impl Backward<T> + 'static) -> Result<Self> {
        if debug_checks() && !value.all_finite() {
            return Err(Error::NonFinite { op: op.name() });
        }
        if inputs.iter().any(|v| v.requires_grad()) {
            Ok(Self::make(
                value,
                true,
                inputs.iter().map(|v| (*v).clone()).collect(),
                Some(Box::new(op)),
            ))
        } else {
            Ok(Self::constant(value))
        }
    }

    pub fn value(&self) -> &Tensor<T> {
        &self.0.value
    }

    pub fn shape(&self) -> &[usize] {
        self.0.value.shape()
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn op_name(&self) -> &'static str {
        self.0.op.as_ref().map_or("leaf", |o| o.name())
    }

    /// Moves the value out when this handle is the sole owner of an
    /// unrecorded node; otherwise clones the (shared) tensor handle.
    pub(crate) fn into_value(self) -> Tensor<T> {
        match Rc::try_unwrap(self.0) {
            Ok(node) => node.value,
            Err(rc) => rc.value.clone(),
        }
    }
}

/// The recorded operations reachable from a loss, in topological order.
pub struct Graph<T: Element> {
    nodes: Vec<Var<T>>,
    parameters: Vec<usize>,
}

impl<T: Element> Graph<T> {
    pub fn from_output(output: &Var<T>) -> Self {
        let mut seen = std::collections::HashSet::new();
        let mut stack = vec![output.clone()];
        let mut nodes = Vec::new();
        while let Some(v) = stack.pop() {
            if !v.requires_grad() || !seen.insert(v.id()) {
                continue;
            }
            for inp in &v.0.inputs {
                stack.push(inp.clone());
            }
            nodes.push(v);
        }
        nodes.sort_by_key(Var::id);
        let parameters = nodes
            .iter()
            .enumerate()
            .filter(|(_, v)| v.0.op.is_none())
            .map(|(i, _)| i)
            .collect();
        Graph { nodes, parameters }
    }

    pub fn nodes(&self) -> &[Var<T>] {
        &self.nodes
    }

    /// Trainable leaves reachable from the output.
    pub fn parameters(&self) -> impl Iterator<Item = &Var<T>> {
        self.parameters.iter().map(|&i| &self.nodes[i])
    }

    /// Propagates `seed` (the gradient of some scalar with respect to the
    /// output) back to every reachable trainable leaf.
    pub fn backward_from(&self, seed: Tensor<T>) -> Result<Gradients<T>> {
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; self.nodes.len()];
        let position: HashMap<u64, usize> = self.nodes.iter().enumerate().map(|(i, v)| (v.id(), i)).collect();
        if let Some(last) = grads.last_mut() {
            *last = Some(seed);
        }
        let mut leaves = HashMap::new();
        for (i, node) in self.nodes.iter().enumerate().rev() {
            let Some(grad) = grads[i].take() else { continue };
            let Some(op) = node.0.op.as_ref() else {
                leaves.insert(node.id(), grad);
                continue;
            };
            let inputs = &node.0.inputs;
            let needs: Vec<bool> = inputs.iter().map(Var::requires_grad).collect();
            let ctx = BackwardCtx {
                inputs,
                output: node.value(),
                grad: &grad,
                needs: &needs,
            };
            let input_grads = op.backward(&ctx)?;
            for ((inp, g), need) in inputs.iter().zip(input_grads).zip(&needs) {
                let (Some(g), true) = (g, *need) else { continue };
                if g.shape() != inp.shape() {
                    return Err(Error::ShapeMismatch {
                        op: op.name(),
                        lhs: g.shape().to_vec(),
                        rhs: inp.shape().to_vec(),
                    });
                }
                let slot = &mut grads[position[&inp.id()]];
                *slot = Some(match slot.take() {
                    None => g,
                    Some(acc) => accumulate(acc, &g),
                });
            }
        }
        Ok(Gradients { leaves })
    }
}

fn accumulate<T: Element>(acc: Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let shape = acc.shape().to_vec();
    let mut data = acc.into_vec();
    for (a, &b) in data.iter_mut().zip(g.data()) {
        *a += b;
    }
    Tensor::from_parts(shape, data)
}

/// Gradients of a scalar with respect to trainable leaves.
pub struct Gradients<T: Element> {
    leaves: HashMap<u64, Tensor<T>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, leaf: &Var<T>) -> Option<&Tensor<T>> {
        self.leaves.get(&leaf.id())
    }

    /// The gradient for `leaf`, or zeros when the loss does not depend on it.
    pub fn get_or_zeros(&self, leaf: &Var<T>) -> Tensor<T> {
        self.get(leaf).cloned().unwrap_or_else(|| Tensor::zeros(leaf.shape()))
    }
}

/// Reverse-mode gradient of a rank-0 `loss`.
pub fn backward<T: Element>(loss: &Var<T>) -> Result<Gradients<T>> {
    if loss.value().rank() != 0 {
        return Err(Error::NotScalar(loss.shape().to_vec()));
    }
    Graph::from_output(loss).backward_from(Tensor::scalar(T::one()))
}
