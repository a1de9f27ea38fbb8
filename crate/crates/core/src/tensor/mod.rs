//! Dense tensors with reverse-mode automatic differentiation.
//!
//! Values are `f64` in row-major order. A tensor produced by an operation
//! holds references to its inputs and a backward closure; calling
//! [`Tensor::backward`] on a scalar result replays the recorded graph in
//! reverse topological order and accumulates adjoints into every
//! `requires_grad` leaf. The graph is rebuilt on every forward pass
//! (define-by-run), which is what makes unrolling RNNs over variable-length
//! sentences straightforward.
//!
//! Shape errors are programming errors and panic with a message naming the
//! operation and both shapes. Everything is single-threaded: `Tensor` is
//! deliberately `!Send`, one training run owns its graph.

use std::cell::{Cell, Ref, RefCell};
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::rc::Rc;


mod checkpoint;
mod grad_check;
mod ops;
mod optim;

pub use checkpoint::{load_checkpoint, load_into_params, save_checkpoint, CheckpointError};
pub use grad_check::grad_check;
pub use optim::{Optimizer, OptimizerError};

thread_local! {
    static NEXT_ID: Cell<usize> = const { Cell::new(0) };
    static NO_GRAD: Cell<bool> = const { Cell::new(false) };
}

fn fresh_id() -> usize {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

/// Runs `f` with graph recording disabled; operations inside produce plain
/// value tensors even when inputs require gradients. Used by samplers and
/// evaluation paths that never call `backward`.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    let prev = NO_GRAD.with(|c| c.replace(true));
    let out = f();
    NO_GRAD.with(|c| c.set(prev));
    out
}

fn grad_enabled() -> bool {
    NO_GRAD.with(|c| !c.get())
}

/// Backward rule: receives the node's adjoint, the node's parents (so
/// closures never capture graph references), and the adjoint workspace.
type BackwardFn = Box<dyn Fn(&[f64], &[Tensor], &mut Adjoints)>;

struct Inner {
    id: usize,
    shape: Vec<usize>,
    values: RefCell<Vec<f64>>,
    /// Accumulated adjoint; allocated on demand, leaves only.
    grad: RefCell<Option<Vec<f64>>>,
    requires_grad: bool,
    parents: Vec<Tensor>,
    backward_fn: Option<BackwardFn>,
    op: &'static str,
}

/// Dense multi-dimensional array participating in a reverse-mode graph.
///
/// Cloning is cheap and aliases the same storage.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Inner>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("op", &self.inner.op)
            .field("requires_grad", &self.inner.requires_grad)
            .field("values", &self.inner.values.borrow())
            .finish()
    }
}

impl Tensor {
    fn new_inner(
        shape: Vec<usize>,
        values: Vec<f64>,
        requires_grad: bool,
        parents: Vec<Tensor>,
        backward_fn: Option<BackwardFn>,
        op: &'static str,
    ) -> Tensor {
        debug_assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "{op}: value length {} does not match shape {:?}",
            values.len(),
            shape
        );
        Tensor {
            inner: Rc::new(Inner {
                id: fresh_id(),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                parents,
                backward_fn,
                op,
            }),
        }
    }

    /// Constant scalar (shape `[]`).
    pub fn scalar(v: f64) -> Tensor {
        Tensor::new_inner(vec![], vec![v], false, vec![], None, "scalar")
    }

    /// Constant vector.
    pub fn vector(vals: &[f64]) -> Tensor {
        Tensor::new_inner(vec![vals.len()], vals.to_vec(), false, vec![], None, "vector")
    }

    /// Constant matrix from row-major values.
    pub fn matrix(rows: usize, cols: usize, vals: Vec<f64>) -> Tensor {
        assert_eq!(vals.len(), rows * cols, "matrix: {} values for shape [{rows}, {cols}]", vals.len());
        Tensor::new_inner(vec![rows, cols], vals, false, vec![], None, "matrix")
    }

    /// Constant tensor of arbitrary shape.
    pub fn constant(shape: &[usize], vals: Vec<f64>) -> Tensor {
        assert_eq!(vals.len(), shape.iter().product::<usize>(), "constant: {} values for shape {shape:?}", vals.len());
        Tensor::new_inner(shape.to_vec(), vals, false, vec![], None, "constant")
    }

    /// Trainable leaf: gradients accumulate here during `backward`.
    pub fn param(shape: &[usize], vals: Vec<f64>) -> Tensor {
        assert_eq!(vals.len(), shape.iter().product::<usize>(), "param: {} values for shape {shape:?}", vals.len());
        Tensor::new_inner(shape.to_vec(), vals, true, vec![], None, "param")
    }

    pub fn param_scalar(v: f64) -> Tensor {
        Tensor::param(&[], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Tensor {
        Tensor::constant(shape, vec![0.0; shape.iter().product()])
    }

    pub(crate) fn from_op(
        op: &'static str,
        shape: Vec<usize>,
        values: Vec<f64>,
        parents: Vec<Tensor>,
        backward_fn: impl Fn(&[f64], &[Tensor], &mut Adjoints) + 'static,
    ) -> Tensor {
        let record = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if record {
            Tensor::new_inner(shape, values, true, parents, Some(Box::new(backward_fn)), op)
        } else {
            Tensor::new_inner(shape, values, false, vec![], None, op)
        }
    }

    pub fn id(&self) -> usize {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_scalar(&self) -> bool {
        self.len() == 1
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Borrow of the raw row-major values.
    pub fn values(&self) -> Ref<'_, Vec<f64>> {
        self.inner.values.borrow()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.inner.values.borrow().clone()
    }

    /// Scalar value; panics when the tensor has more than one element.
    pub fn value(&self) -> f64 {
        assert!(self.is_scalar(), "value: tensor of shape {:?} is not a scalar", self.shape());
        self.inner.values.borrow()[0]
    }

    /// Overwrites the stored values in place. Only meaningful for leaves;
    /// a recorded graph must not be mutated between forward and backward.
    pub fn set_values(&self, vals: &[f64]) {
        assert_eq!(vals.len(), self.len(), "set_values: {} values for shape {:?}", vals.len(), self.shape());
        self.inner.values.borrow_mut().copy_from_slice(vals);
    }

    /// Accumulated gradient, if any backward pass has reached this leaf.
    pub fn grad(&self) -> Option<Vec<f64>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Detached copy of the values as a fresh constant.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.shape(), self.to_vec())
    }

    fn is_leaf(&self) -> bool {
        self.inner.backward_fn.is_none()
    }

    fn accum_grad(&self, contribution: &[f64]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (g, c) in buf.iter_mut().zip(contribution) {
                    *g += c;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root. Adjoints are computed in a
    /// scratch workspace and then added into each `requires_grad` leaf's
    /// `grad`, so repeated calls accumulate additively.
    pub fn backward(&self) {
        assert!(
            self.is_scalar(),
            "backward: root must be a scalar, got shape {:?}",
            self.shape()
        );
        if !self.requires_grad() {
            return;
        }
        let order = topo_order(self);
        let mut adjoints = Adjoints::default();
        adjoints.seed(self, vec![1.0]);
        for node in order.iter().rev() {
            let Some(adj) = adjoints.take(node.id()) else {
                continue;
            };
            match &node.inner.backward_fn {
                Some(f) => f(&adj, &node.inner.parents, &mut adjoints),
                None => node.accum_grad(&adj),
            }
        }
    }
}

/// Scratch adjoint buffers keyed by tensor id, used during one backward sweep.
#[derive(Default)]
pub(crate) struct Adjoints {
    bufs: HashMap<usize, Vec<f64>>,
}

impl Adjoints {
    fn seed(&mut self, t: &Tensor, v: Vec<f64>) {
        self.bufs.insert(t.id(), v);
    }

    fn take(&mut self, id: usize) -> Option<Vec<f64>> {
        self.bufs.remove(&id)
    }

    /// Applies `f` to the (zero-initialized) adjoint buffer of `t`, skipping
    /// tensors outside the differentiable subgraph.
    pub(crate) fn add_with(&mut self, t: &Tensor, f: impl FnOnce(&mut [f64])) {
        if !t.requires_grad() {
            return;
        }
        let buf = self
            .bufs
            .entry(t.id())
            .or_insert_with(|| vec![0.0; t.len()]);
        f(buf);
    }
}

impl Drop for Inner {
    fn drop(&mut self) {
        // Unrolled RNN graphs can be hundreds of thousands of nodes deep;
        // the default recursive drop would blow the stack. Drain the parent
        // chain iteratively, stealing children wherever we hold the last
        // reference.
        let mut stack = std::mem::take(&mut self.parents);
        while let Some(t) = stack.pop() {
            let Tensor { inner } = t;
            if let Some(mut sole) = Rc::into_inner(inner) {
                stack.append(&mut sole.parents);
            }
        }
    }
}

fn topo_order(root: &Tensor) -> Vec<Tensor> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        for p in &node.inner.parents {
            if p.requires_grad() && !visited.contains(&p.id()) {
                stack.push((p.clone(), false));
            }
        }
    }
    order
}

/// Named parameter collection; the unit that optimizers and checkpoints
/// operate on. Tensors are aliases of the model's own leaves.
#[derive(Clone, Default)]
pub struct ParamSet {
    items: Vec<(String, Tensor)>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet { items: Vec::new() }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor) {
        let name = name.into();
        assert!(!name.contains(char::is_whitespace), "parameter name {name:?} contains whitespace");
        assert!(t.is_leaf(), "parameter {name:?} is not a leaf tensor");
        self.items.push((name, t));
    }

    pub fn extend(&mut self, other: ParamSet) {
        self.items.extend(other.items);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.items.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.items.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn zero_grad(&self) {
        for (_, t) in &self.items {
            t.zero_grad();
        }
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.items.iter().map(|(_, t)| t.len()).sum()
    }
}

impl FromIterator<(String, Tensor)> for ParamSet {
    fn from_iter<I: IntoIterator<Item = (String, Tensor)>>(iter: I) -> Self {
        let mut set = ParamSet::new();
        for (n, t) in iter {
            set.push(n, t);
        }
        set
    }
}
