//! Reverse-mode automatic differentiation over dense `f64` arrays.
//!
//! A [`Tensor`] is an immutable value plus, optionally, a handle to the
//! [`Tape`] node that produced it. Operations whose inputs are all untracked
//! run eagerly and record nothing; as soon as one input is tracked the result
//! is recorded on that input's tape together with a closure that maps the
//! output gradient back to the inputs.
//!
//! ```
//! use s3kit::tensor::{Tape, Tensor};
//!
//! let tape = Tape::new();
//! let x = tape.leaf(&Tensor::scalar(3.0));
//! let loss = x.mul(&x).unwrap();
//! let grads = tape.backward(&loss).unwrap();
//! assert_eq!(grads.get(&x).unwrap().item(), 6.0);
//! ```
//!
//! A tape is confined to one thread and is consumed by [`Tape::backward`].

mod conv;
mod gradcheck;
mod ops;
mod sample;

pub use gradcheck::{grad_check, grad_check_at};
pub use ops::pairwise_sum;
pub use sample::grid_sample_bilinear;

use std::cell::RefCell;
use std::collections::HashMap;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Maps the output gradient to one gradient per input. The boolean slice says
/// which inputs are tracked; entries for untracked inputs may be `None`.
pub type BackwardFn = Box<dyn Fn(&[f64], &[bool]) -> Vec<Option<Vec<f64>>>>;

struct Entry {
    kind: &'static str,
    inputs: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

#[derive(Default)]
struct TapeInner {
    entries: Vec<Entry>,
}

/// Ordered record of differentiable operations for one step.
#[derive(Clone, Default)]
pub struct Tape {
    inner: Rc<RefCell<TapeInner>>,
}

#[derive(Clone)]
struct NodeRef {
    tape: Tape,
    id: usize,
}

/// Dense row-major array, optionally tracked on a tape.
#[derive(Clone)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Rc<Vec<f64>>,
    node: Option<NodeRef>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("node", &self.node_id())
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    pub fn new(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node: None,
        })
    }

    /// Rank-0 tensor.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: Rc::new(vec![value]),
            node: None,
        }
    }

    pub fn from_slice(values: &[f64]) -> Self {
        Self {
            shape: vec![values.len()],
            data: Rc::new(values.to_vec()),
            node: None,
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: Rc::new(vec![value; numel]),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.data.as_ref().clone()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn node_id(&self) -> Option<usize> {
        self.node.as_ref().map(|n| n.id)
    }

    /// Same value, cut from the tape.
    pub fn detach(&self) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: Rc::clone(&self.data),
            node: None,
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Records the result of a custom operation.
    ///
    /// `backward` receives the output gradient and returns one optional
    /// gradient per input, each with that input's element count. If no input
    /// is tracked, nothing is recorded and the closure is dropped.
    pub fn from_op(
        kind: &'static str,
        inputs: &[&Tensor],
        data: Vec<f64>,
        shape: &[usize],
        backward: BackwardFn,
    ) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(kind, shape, &[data.len()]));
        }
        let mut tape: Option<&Tape> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(existing) if !Rc::ptr_eq(&existing.inner, &n.tape.inner) => {
                        return Err(Error::ForeignTape(kind));
                    }
                    _ => {}
                }
            }
        }
        let node = match tape {
            None => None,
            Some(tape) => {
                let ids = inputs.iter().map(|t| t.node_id()).collect();
                let id = tape.push(Entry {
                    kind,
                    inputs: ids,
                    backward: Some(backward),
                });
                Some(NodeRef {
                    tape: tape.clone(),
                    id,
                })
            }
        };
        Ok(Tensor {
            shape: shape.to_vec(),
            data: Rc::new(data),
            node,
        })
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&self, entry: Entry) -> usize {
        let mut inner = self.inner.borrow_mut();
        inner.entries.push(entry);
        inner.entries.len() - 1
    }

    /// Registers a copy of `value` as a differentiable leaf.
    pub fn leaf(&self, value: &Tensor) -> Tensor {
        let id = self.push(Entry {
            kind: "leaf",
            inputs: Vec::new(),
            backward: None,
        });
        Tensor {
            shape: value.shape.clone(),
            data: Rc::clone(&value.data),
            node: Some(NodeRef {
                tape: self.clone(),
                id,
            }),
        }
    }

    pub fn len(&self) -> usize {
        self.inner.borrow().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Operation kinds in recording order.
    pub fn kinds(&self) -> Vec<&'static str> {
        self.inner.borrow().entries.iter().map(|e| e.kind).collect()
    }

    /// Input node ids of every entry, in recording order.
    pub fn edges(&self) -> Vec<Vec<usize>> {
        self.inner
            .borrow()
            .entries
            .iter()
            .map(|e| e.inputs.iter().flatten().copied().collect())
            .collect()
    }

    /// Propagates d`loss` back through every recorded entry in reverse
    /// order. The tape is emptied; leaf gradients are returned.
    pub fn backward(&self, loss: &Tensor) -> Result<Gradients> {
        if loss.numel() != 1 {
            return Err(Error::NonScalarLoss(loss.shape.clone()));
        }
        let loss_id = match &loss.node {
            Some(n) if Rc::ptr_eq(&n.tape.inner, &self.inner) => n.id,
            Some(_) => return Err(Error::ForeignTape("backward")),
            None => return Err(Error::domain("backward", "loss is not on the tape")),
        };
        let entries = std::mem::take(&mut self.inner.borrow_mut().entries);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; entries.len()];
        grads[loss_id] = Some(vec![1.0]);
        let mut leaves = HashMap::new();
        for (id, entry) in entries.iter().enumerate().rev() {
            let Some(g) = grads[id].take() else { continue };
            let Some(backward) = &entry.backward else {
                leaves.insert(id, g);
                continue;
            };
            let needs: Vec<bool> = entry.inputs.iter().map(Option::is_some).collect();
            let input_grads = backward(&g, &needs);
            for (slot, ig) in entry.inputs.iter().zip(input_grads) {
                let (Some(src), Some(ig)) = (slot, ig) else { continue };
                debug_assert!(*src < id, "tape order violated");
                match &mut grads[*src] {
                    Some(acc) => {
                        debug_assert_eq!(acc.len(), ig.len());
                        acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b);
                    }
                    empty => *empty = Some(ig),
                }
            }
        }
        Ok(Gradients { grads: leaves })
    }
}

/// Leaf gradients produced by [`Tape::backward`].
#[derive(Debug, Default)]
pub struct Gradients {
    grads: HashMap<usize, Vec<f64>>,
}

impl Gradients {
    /// Gradient for a tracked leaf, shaped like the leaf. `None` when the
    /// leaf did not influence the loss or is untracked.
    pub fn get(&self, leaf: &Tensor) -> Option<Tensor> {
        let id = leaf.node_id()?;
        self.grads.get(&id).map(|g| Tensor {
            shape: leaf.shape.clone(),
            data: Rc::new(g.clone()),
            node: None,
        })
    }

    /// Gradient for a leaf, zeros when absent.
    pub fn get_or_zero(&self, leaf: &Tensor) -> Vec<f64> {
        leaf.node_id()
            .and_then(|id| self.grads.get(&id).cloned())
            .unwrap_or_else(|| vec![0.0; leaf.numel()])
    }

    pub fn by_node(&self, node_id: usize) -> Option<&[f64]> {
        self.grads.get(&node_id).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}
