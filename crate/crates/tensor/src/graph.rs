use std::cell::{Cell, RefCell};
use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dtype::Float;
use crate::error::{Result, TensorError};
use crate::params::{ParamId, ParamStore};
use crate::tensor::Tensor;

type BackwardFn<T> = Box<dyn Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>>>;

struct Node<T: Float> {
    op: &'static str,
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn<T>>,
}

/// How a [`Graph`] evaluates.
#[derive(Debug, Clone, Copy)]
pub struct GraphOptions {
    /// Training mode: dropout/drop-path active, batch norm uses batch statistics.
    pub train: bool,
    /// Record backward closures. Off for pure inference.
    pub record: bool,
    /// Seed for the graph-local RNG used by stochastic ops.
    pub seed: u64,
}

impl GraphOptions {
    pub fn train(seed: u64) -> Self {
        Self {
            train: true,
            record: true,
            seed,
        }
    }

    pub fn eval() -> Self {
        Self {
            train: false,
            record: false,
            seed: 0,
        }
    }

    /// Eval-mode numerics (no dropout, running BN stats) with gradients recorded.
    pub fn eval_recording() -> Self {
        Self {
            train: false,
            record: true,
            seed: 0,
        }
    }
}

/// One matrix product observed during a forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatmulRecord {
    pub lhs: Vec<usize>,
    pub rhs: Vec<usize>,
    /// Set when the right operand is (a slice of) a stored parameter.
    pub rhs_param: Option<ParamId>,
}

/// Gradient tape plus a read-only snapshot of the parameters it was built from.
pub struct Graph<T: Float> {
    params: Vec<Tensor<T>>,
    trainable: Vec<bool>,
    param_nodes: RefCell<Vec<Option<usize>>>,
    nodes: RefCell<Vec<Node<T>>>,
    leaf_grads: RefCell<HashMap<usize, Tensor<T>>>,
    consumed: Cell<bool>,
    opts: GraphOptions,
    rng: RefCell<ChaCha8Rng>,
    macs: Cell<u64>,
    matmul_log: RefCell<Option<Vec<MatmulRecord>>>,
    captures: RefCell<Option<Vec<(String, Tensor<T>)>>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor<T>)>>,
}

/// A value in a [`Graph`], optionally connected to the tape.
#[derive(Clone)]
pub struct Var<'g, T: Float> {
    graph: &'g Graph<T>,
    value: Tensor<T>,
    node: Option<usize>,
    param: Option<ParamId>,
}

impl<T: Float> Graph<T> {
    pub fn new(store: &ParamStore<T>, opts: GraphOptions) -> Self {
        let params: Vec<Tensor<T>> = store.entries().iter().map(|e| e.value.clone()).collect();
        let trainable = store.entries().iter().map(|e| e.trainable).collect();
        let n = params.len();
        Self {
            params,
            trainable,
            param_nodes: RefCell::new(vec![None; n]),
            nodes: RefCell::new(Vec::new()),
            leaf_grads: RefCell::new(HashMap::new()),
            consumed: Cell::new(false),
            opts,
            rng: RefCell::new(ChaCha8Rng::seed_from_u64(opts.seed)),
            macs: Cell::new(0),
            matmul_log: RefCell::new(None),
            captures: RefCell::new(None),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    /// A graph with no parameters, for free-standing tensor computations.
    pub fn standalone(opts: GraphOptions) -> Self {
        Self::new(&ParamStore::new(), opts)
    }

    pub fn is_training(&self) -> bool {
        self.opts.train
    }

    pub fn is_recording(&self) -> bool {
        self.opts.record
    }

    /// Parameter as a graph leaf. Repeated calls return the same leaf.
    pub fn param(&self, id: ParamId) -> Var<'_, T> {
        let value = self.params[id.0].clone();
        let node = if self.opts.record && self.trainable[id.0] {
            let mut map = self.param_nodes.borrow_mut();
            Some(*map[id.0].get_or_insert_with(|| self.push_leaf("param")))
        } else {
            None
        };
        Var {
            graph: self,
            value,
            node,
            param: Some(id),
        }
    }

    /// Input tensor; a leaf on the tape when `requires_grad`.
    pub fn input(&self, value: Tensor<T>, requires_grad: bool) -> Var<'_, T> {
        let node = (requires_grad && self.opts.record).then(|| self.push_leaf("input"));
        Var {
            graph: self,
            value,
            node,
            param: None,
        }
    }

    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.input(value, false)
    }

    fn push_leaf(&self, op: &'static str) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            op,
            parents: Vec::new(),
            backward: None,
        });
        nodes.len() - 1
    }

    /// Wraps an op result, attaching a backward closure when any parent is on the tape.
    ///
    /// The closure receives the output gradient and which parents need gradients,
    /// and returns one optional gradient per parent.
    pub fn record<'g>(
        &'g self,
        op: &'static str,
        value: Tensor<T>,
        parents: &[&Var<'g, T>],
        backward: impl Fn(&Tensor<T>, &[bool]) -> Vec<Option<Tensor<T>>> + 'static,
    ) -> Result<Var<'g, T>> {
        if !value.all_finite() {
            return Err(TensorError::NonFinite { op });
        }
        let parent_ids: Vec<Option<usize>> = parents.iter().map(|p| p.node).collect();
        let node = if self.opts.record && parent_ids.iter().any(Option::is_some) {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                op,
                parents: parent_ids,
                backward: Some(Box::new(backward)),
            });
            Some(nodes.len() - 1)
        } else {
            None
        };
        Ok(Var {
            graph: self,
            value,
            node,
            param: None,
        })
    }

    /// Reverse-mode sweep from a scalar loss. Consumes the tape.
    pub fn backward(&self, loss: &Var<'_, T>) -> Result<()> {
        if !self.opts.record {
            return Err(TensorError::NotRecording);
        }
        if self.consumed.get() {
            return Err(TensorError::TapeConsumed);
        }
        if loss.value.numel() != 1 {
            return Err(TensorError::NonScalarLoss(loss.value.shape().to_vec()));
        }
        let root = loss.node.ok_or(TensorError::DetachedGraph)?;
        self.consumed.set(true);

        let mut nodes = std::mem::take(&mut *self.nodes.borrow_mut());
        let mut grads: Vec<Option<Tensor<T>>> = vec![None; nodes.len()];
        grads[root] = Some(Tensor::ones(loss.value.shape()));
        let mut leaf_grads = self.leaf_grads.borrow_mut();
        for id in (0..=root).rev() {
            let Some(grad) = grads[id].take() else { continue };
            let node = &mut nodes[id];
            match node.backward.take() {
                None => {
                    leaf_grads.insert(id, grad);
                }
                Some(backward) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let parent_grads = backward(&grad, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "op {}", node.op);
                    for (parent, pg) in node.parents.iter().zip(parent_grads) {
                        let (Some(p), Some(pg)) = (parent, pg) else { continue };
                        grads[*p] = Some(match grads[*p].take() {
                            None => pg,
                            Some(acc) => acc
                                .zip_map(&pg, |a, b| a + b)
                                .unwrap_or_else(|e| panic!("gradient shape bug below op '{}': {e}", node.op)),
                        });
                    }
                }
            }
        }
        Ok(())
    }

    /// Gradient of a leaf variable after [`Graph::backward`].
    pub fn grad(&self, var: &Var<'_, T>) -> Option<Tensor<T>> {
        var.node.and_then(|n| self.leaf_grads.borrow().get(&n).cloned())
    }

    /// Gradients indexed by [`ParamId`]; `None` for unused or frozen entries.
    pub fn param_grads(&self) -> Vec<Option<Tensor<T>>> {
        let leaf = self.leaf_grads.borrow();
        self.param_nodes
            .borrow()
            .iter()
            .map(|n| n.and_then(|n| leaf.get(&n).cloned()))
            .collect()
    }

    pub(crate) fn with_rng<R>(&self, f: impl FnOnce(&mut ChaCha8Rng) -> R) -> R {
        f(&mut self.rng.borrow_mut())
    }

    pub(crate) fn add_macs(&self, n: u64) {
        self.macs.set(self.macs.get() + n);
    }

    /// Multiply-accumulates executed by matmul/conv kernels so far.
    pub fn macs(&self) -> u64 {
        self.macs.get()
    }

    pub fn enable_matmul_log(&self) {
        *self.matmul_log.borrow_mut() = Some(Vec::new());
    }

    pub fn matmul_log(&self) -> Vec<MatmulRecord> {
        self.matmul_log.borrow().clone().unwrap_or_default()
    }

    pub(crate) fn log_matmul(&self, rec: impl FnOnce() -> MatmulRecord) {
        if let Some(log) = self.matmul_log.borrow_mut().as_mut() {
            log.push(rec());
        }
    }

    /// Turns on capture of named intermediate tensors (attention maps, features).
    pub fn enable_capture(&self) {
        *self.captures.borrow_mut() = Some(Vec::new());
    }

    pub fn capturing(&self) -> bool {
        self.captures.borrow().is_some()
    }

    pub fn capture(&self, name: impl Into<String>, value: &Tensor<T>) {
        if let Some(c) = self.captures.borrow_mut().as_mut() {
            c.push((name.into(), value.clone()));
        }
    }

    pub fn captures(&self) -> Vec<(String, Tensor<T>)> {
        self.captures.borrow().clone().unwrap_or_default()
    }

    /// Queues a new value for a non-trainable buffer (e.g. running statistics).
    pub fn push_buffer_update(&self, id: ParamId, value: Tensor<T>) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }

    /// Number of recorded tape nodes (leaves included).
    pub fn tape_len(&self) -> usize {
        self.nodes.borrow().len()
    }
}

impl<'g, T: Float> Var<'g, T> {
    pub fn value(&self) -> &Tensor<T> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn graph(&self) -> &'g Graph<T> {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn param_id(&self) -> Option<ParamId> {
        self.param
    }

    pub(crate) fn with_param(mut self, param: Option<ParamId>) -> Self {
        self.param = param;
        self
    }

    /// Same value, cut off from the tape.
    pub fn detach(&self) -> Var<'g, T> {
        Var {
            graph: self.graph,
            value: self.value.clone(),
            node: None,
            param: None,
        }
    }
}

impl<T: Float> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var")
            .field("value", &self.value)
            .field("node", &self.node)
            .finish()
    }
}
