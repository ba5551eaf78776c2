//! Tape-based reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles during a
//! forward pass. [`Tape::backward`] replays the records in reverse order and
//! returns the gradient of a scalar loss with respect to every leaf that was
//! created with `requires_grad`.
//!
//! ```
//! use spectnt::autograd::Tape;
//! use spectnt::Tensor;
//!
//! let tape = Tape::<f64>::new();
//! let x = tape.leaf(&Tensor::new(&[2], vec![1.0, 2.0]).unwrap().with_requires_grad(true));
//! let loss = x.mul(x).unwrap().sum();
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, 4.0]);
//! ```
//!
//! Nodes are appended in evaluation order, so the record list is already a
//! topological order of the graph.

mod attention;
mod conv;
mod elementwise;
pub(crate) mod kernels;
mod layout;
mod linalg;
mod norm;
mod reduce;

use std::cell::RefCell;
use std::fmt;
use std::rc::Rc;

pub use attention::attention_probs;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Maps the output gradient to one optional gradient per input. The flags
/// say which inputs need a gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&[T], &[bool]) -> Vec<Option<Vec<T>>>>;

struct Node<T> {
    op: &'static str,
    shape: Vec<usize>,
    value: Rc<Vec<T>>,
    inputs: Vec<usize>,
    requires_grad: bool,
    is_leaf: bool,
    freed: bool,
    backward: Option<BackwardFn<T>>,
}

/// Operation record exposed for inspection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub op: &'static str,
    pub inputs: Vec<usize>,
    pub output: usize,
}

pub struct Tape<T: Element> {
    nodes: RefCell<Vec<Node<T>>>,
    grad_enabled: bool,
}

impl<T: Element> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Element> fmt::Debug for Tape<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tape")
            .field("nodes", &self.len())
            .field("grad_enabled", &self.grad_enabled)
            .finish()
    }
}

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy)]
pub struct Var<'t, T: Element> {
    tape: &'t Tape<T>,
    id: usize,
}

impl<T: Element> fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Var#{}{:?}", self.id, self.shape())
    }
}

impl<T: Element> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: true,
        }
    }

    /// A tape that records no gradient information. Use for evaluation.
    pub fn inference() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
            grad_enabled: false,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Records a tensor as a graph input. Gradients are tracked iff the
    /// tensor has `requires_grad` set and the tape is not in inference mode.
    pub fn leaf(&self, t: &Tensor<T>) -> Var<'_, T> {
        self.input(t.shape(), t.data().to_vec(), t.requires_grad())
    }

    pub fn constant(&self, shape: &[usize], data: Vec<T>) -> Var<'_, T> {
        self.input(shape, data, false)
    }

    pub fn input(&self, shape: &[usize], data: Vec<T>, requires_grad: bool) -> Var<'_, T> {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "leaf data does not match shape {shape:?}"
        );
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op: "leaf",
            shape: shape.to_vec(),
            value: Rc::new(data),
            inputs: Vec::new(),
            requires_grad: requires_grad && self.grad_enabled,
            is_leaf: true,
            freed: false,
            backward: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// True if any of `vars` carries gradient information.
    pub(crate) fn tracks(&self, vars: &[Var<'_, T>]) -> bool {
        let nodes = self.nodes.borrow();
        vars.iter().any(|v| nodes[v.id].requires_grad)
    }

    /// Appends an operation node. `backward` is only invoked when at least
    /// one input carries gradient information.
    pub(crate) fn push(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        value: Vec<T>,
        inputs: &[Var<'_, T>],
        backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Var<'_, T> {
        self.push_rc(op, shape, Rc::new(value), inputs, backward)
    }

    pub(crate) fn push_rc(
        &self,
        op: &'static str,
        shape: Vec<usize>,
        value: Rc<Vec<T>>,
        inputs: &[Var<'_, T>],
        backward: impl FnOnce() -> BackwardFn<T>,
    ) -> Var<'_, T> {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let requires_grad = self.tracks(inputs);
        let backward = requires_grad.then(backward);
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            shape,
            value,
            inputs: inputs.iter().map(|v| v.id).collect(),
            requires_grad,
            is_leaf: false,
            freed: false,
            backward,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    pub fn records(&self) -> Vec<Record> {
        self.nodes
            .borrow()
            .iter()
            .enumerate()
            .map(|(i, n)| Record {
                op: n.op,
                inputs: n.inputs.clone(),
                output: i,
            })
            .collect()
    }

    /// Drops the values of every intermediate node except `keep`. Leaves
    /// survive. Only valid on an inference tape, where no backward pass can
    /// need the released values.
    pub fn sweep(&self, keep: &[Var<'_, T>]) -> Result<()> {
        if self.grad_enabled {
            return Err(Error::contract("sweep is only allowed on inference tapes"));
        }
        let mut nodes = self.nodes.borrow_mut();
        let kept: Vec<usize> = keep.iter().map(|v| v.id).collect();
        for (i, node) in nodes.iter_mut().enumerate() {
            if !node.is_leaf && !node.freed && !kept.contains(&i) {
                node.value = Rc::new(Vec::new());
                node.freed = true;
            }
        }
        Ok(())
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        if nodes.is_empty() {
            return Err(Error::contract("backward on an empty tape"));
        }
        let root = &nodes[loss.id];
        if root.value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.shape
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..nodes.len()).map(|_| None).collect();
        if !root.requires_grad {
            return Ok(Gradients { grads });
        }
        grads[loss.id] = Some(vec![T::one()]);
        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(g) = grads[id].take() else {
                continue;
            };
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|&i| nodes[i].requires_grad)
                .collect();
            let input_grads = backward(&g, &needs);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            for (&input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.len(), nodes[input].value.len(), "{}", node.op);
                match &mut grads[input] {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                    slot @ None => *slot = Some(ig),
                }
            }
        }
        for (id, node) in nodes.iter().enumerate() {
            if !node.is_leaf {
                grads[id] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn node_value(&self, id: usize) -> Rc<Vec<T>> {
        let nodes = self.nodes.borrow();
        assert!(!nodes[id].freed, "value of node {id} was swept");
        Rc::clone(&nodes[id].value)
    }

    fn node_shape(&self, id: usize) -> Vec<usize> {
        self.nodes.borrow()[id].shape.clone()
    }
}

/// Gradients of a loss with respect to the tape's leaves.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Element> Gradients<T> {
    pub fn get(&self, v: Var<'_, T>) -> Option<&[T]> {
        self.grads.get(v.id).and_then(|g| g.as_deref())
    }
}

impl<'t, T: Element> Var<'t, T> {
    pub fn id(self) -> usize {
        self.id
    }

    pub fn tape(self) -> &'t Tape<T> {
        self.tape
    }

    pub fn shape(self) -> Vec<usize> {
        self.tape.node_shape(self.id)
    }

    pub fn numel(self) -> usize {
        self.shape().iter().product()
    }

    pub fn value(self) -> Rc<Vec<T>> {
        self.tape.node_value(self.id)
    }

    pub fn requires_grad(self) -> bool {
        self.tape.tracks(&[self])
    }

    /// Copies the value out as a plain tensor.
    pub fn to_tensor(self) -> Tensor<T> {
        Tensor::new(&self.shape(), self.value().to_vec()).expect("node shape is consistent")
    }

    /// Scalar value of a one-element node.
    pub fn item(self) -> T {
        let v = self.value();
        assert_eq!(v.len(), 1, "item() on a non-scalar");
        v[0]
    }
}
