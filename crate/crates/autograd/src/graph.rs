use std::cell::{Cell, RefCell};
use std::collections::HashMap;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustfft::FftPlanner;

use crate::{ParamId, ParamStore, Scalar, Tensor};

/// Handle to a node recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule: receives the gradient of the node output and a flag per
/// input telling whether that input wants a gradient.
pub type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Arc<Tensor<T>>,
    parents: Vec<Var>,
    backward: Option<BackwardFn<T>>,
    needs_grad: bool,
    param: Option<ParamId>,
}

/// Evaluation mode of a graph. Training enables dropout and batch statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A single-use tape. Forward ops compute values eagerly and record backward
/// rules; [`Graph::backward`] walks the tape once in reverse.
pub struct Graph<T: Scalar> {
    nodes: RefCell<Vec<Node<T>>>,
    param_vars: RefCell<HashMap<ParamId, Var>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
    mode: Mode,
    grad_enabled: Cell<bool>,
    rng: RefCell<ChaCha8Rng>,
    pub(crate) fft: RefCell<FftPlanner<T>>,
}

impl<T: Scalar> Graph<T> {
    pub fn new(mode: Mode) -> Self {
        Self::with_seed(mode, 0)
    }

    pub fn with_seed(mode: Mode, seed: u64) -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
            param_vars: RefCell::new(HashMap::new()),
            buffer_updates: RefCell::new(Vec::new()),
            mode,
            grad_enabled: Cell::new(true),
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(seed)),
            fft: RefCell::new(FftPlanner::new()),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_training(&self) -> bool {
        self.mode == Mode::Train
    }

    /// Disables recording of backward rules for ops created from now on.
    pub fn set_grad_enabled(&self, enabled: bool) {
        self.grad_enabled.set(enabled);
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled.get()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    /// Constant input (no gradient).
    pub fn constant(&self, value: Tensor<T>) -> Var {
        self.push_leaf(Arc::new(value), false, None)
    }

    pub fn constant_arc(&self, value: Arc<Tensor<T>>) -> Var {
        self.push_leaf(value, false, None)
    }

    /// Free leaf that collects a gradient (used for input-gradient checks).
    pub fn leaf(&self, value: Tensor<T>) -> Var {
        let needs = self.grad_enabled();
        self.push_leaf(Arc::new(value), needs, None)
    }

    /// Leaf bound to a stored parameter. Repeated calls return the same node.
    pub fn param(&self, store: &ParamStore<T>, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.borrow().get(&id) {
            return v;
        }
        let needs = self.grad_enabled() && store.is_trainable(id);
        let v = self.push_leaf(store.value_arc(id), needs, Some(id));
        self.param_vars.borrow_mut().insert(id, v);
        v
    }

    fn push_leaf(&self, value: Arc<Tensor<T>>, needs_grad: bool, param: Option<ParamId>) -> Var {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            needs_grad,
            param,
        });
        Var(nodes.len() - 1)
    }

    /// Records an op result. The backward rule is dropped when no parent needs
    /// a gradient.
    pub fn push(&self, value: Tensor<T>, parents: &[Var], backward: BackwardFn<T>) -> Var {
        let needs = self.grad_enabled() && parents.iter().any(|&p| self.needs_grad(p));
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Arc::new(value),
            parents: parents.to_vec(),
            backward: if needs { Some(backward) } else { None },
            needs_grad: needs,
            param: None,
        });
        Var(nodes.len() - 1)
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes.borrow()[v.0].needs_grad
    }

    pub fn value(&self, v: Var) -> Arc<Tensor<T>> {
        self.nodes.borrow()[v.0].value.clone()
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.nodes.borrow()[v.0].value.shape().to_vec()
    }

    /// Copy of the value as a fresh constant, cutting the gradient path.
    pub fn detach(&self, v: Var) -> Var {
        let value = self.value(v);
        self.constant_arc(value)
    }

    /// Scalar value of a one-element node.
    pub fn item(&self, v: Var) -> T {
        let value = self.value(v);
        assert_eq!(value.numel(), 1, "item() on non-scalar node");
        value.data()[0]
    }

    pub(crate) fn record_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Running-statistic updates produced by training-mode normalization.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.buffer_updates.borrow_mut())
    }

    /// Reverse sweep from a scalar node.
    pub fn backward(&self, loss: Var) -> Gradients<T> {
        let seed = Tensor::ones(self.value(loss).shape());
        self.backward_with(loss, seed)
    }

    pub fn backward_with(&self, root: Var, seed: Tensor<T>) -> Gradients<T> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Tensor<T>>> = (0..=root.0).map(|_| None).collect();
        let mut out = Gradients {
            params: HashMap::new(),
            leaves: HashMap::new(),
        };
        if !nodes[root.0].needs_grad {
            return out;
        }
        grads[root.0] = Some(seed);
        for id in (0..=root.0).rev() {
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let node = &nodes[id];
            match &node.backward {
                Some(rule) => {
                    let wants: Vec<bool> =
                        node.parents.iter().map(|p| nodes[p.0].needs_grad).collect();
                    let parent_grads = rule(&grad, &wants);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !nodes[p.0].needs_grad {
                            continue;
                        }
                        debug_assert_eq!(pg.shape(), nodes[p.0].value.shape());
                        match &mut grads[p.0] {
                            Some(acc) => acc.add_assign(&pg),
                            slot => *slot = Some(pg),
                        }
                    }
                }
                None => {
                    if let Some(pid) = node.param {
                        out.params.insert(pid, grad);
                    } else if node.needs_grad {
                        out.leaves.insert(Var(id), grad);
                    }
                }
            }
        }
        out
    }
}

/// Gradients gathered by a reverse sweep.
pub struct Gradients<T> {
    params: HashMap<ParamId, Tensor<T>>,
    leaves: HashMap<Var, Tensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn param(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params.get(&id)
    }

    pub fn leaf(&self, v: Var) -> Option<&Tensor<T>> {
        self.leaves.get(&v)
    }

    pub fn params(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.params.iter().map(|(&k, v)| (k, v))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = (ParamId, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(&k, v)| (k, v))
    }

    /// Global L2 norm over all parameter gradients.
    pub fn global_norm(&self) -> f64 {
        let mut ids: Vec<&ParamId> = self.params.keys().collect();
        ids.sort();
        ids.iter().map(|id| self.params[*id].sum_sq().as_f64()).sum::<f64>().sqrt()
    }

    /// Rescales parameter gradients so that their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm && norm.is_finite() {
            let s = T::of(max_norm / norm);
            for g in self.params.values_mut() {
                g.scale_assign(s);
            }
        }
        norm
    }

    pub fn all_finite(&self) -> bool {
        self.params.values().all(|g| g.all_finite())
    }
}
