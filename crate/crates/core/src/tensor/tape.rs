//! Recording context and graph nodes.
//!
//! Every differentiable [`Tensor`] points at a [`Node`] holding the primitive
//! that produced it together with its input tensors. Node ids come from a
//! per-tape monotone counter, so sorting by id is a topological order.
//! Nodes are reference counted: a subgraph is freed as soon as no live tensor
//! can reach it, and [`Tensor::truncate_history`] cuts a node from its inputs
//! to bound how far back gradients can flow.

use std::cell::{Cell, RefCell};
use std::rc::Rc;
use std::sync::atomic::{AtomicU64, Ordering};

use super::array::Array;
use super::error::{Result, TensorError};
use super::ops::Op;

pub type NodeId = u64;

static NEXT_TAPE_ID: AtomicU64 = AtomicU64::new(1);

thread_local! {
    static CHECKED: Cell<bool> = Cell::new(
        std::env::var("BILEVEL_CHECKED").map(|v| v == "1").unwrap_or(false)
    );
}

/// Whether NaN/Inf guards are active on this thread. Defaults to `BILEVEL_CHECKED=1`.
pub fn checked_mode() -> bool {
    CHECKED.with(|c| c.get())
}

pub fn set_checked_mode(on: bool) {
    CHECKED.with(|c| c.set(on));
}

pub(crate) struct TapeCore {
    id: u64,
    next_node: Cell<NodeId>,
    recording: Cell<bool>,
    live_nodes: Cell<usize>,
    checkpoints: RefCell<Vec<NodeId>>,
}

/// A single-threaded recording context. Cloning yields another handle to the same tape.
#[derive(Clone)]
pub struct Tape {
    core: Rc<TapeCore>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            core: Rc::new(TapeCore {
                id: NEXT_TAPE_ID.fetch_add(1, Ordering::Relaxed),
                next_node: Cell::new(0),
                recording: Cell::new(true),
                live_nodes: Cell::new(0),
                checkpoints: RefCell::new(Vec::new()),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.core.id
    }

    /// A trainable leaf. Gradients can be requested with respect to it.
    pub fn param(&self, value: Array) -> Tensor {
        let node = Node::new(&self.core, NodeKind::Leaf);
        Tensor {
            value: Rc::new(value),
            node: Some(node),
        }
    }

    /// A non-leaf node with no inputs: sits on the tape but never passes gradient on.
    pub fn constant_node(&self, value: Array) -> Tensor {
        let node = Node::new(&self.core, NodeKind::Constant);
        Tensor {
            value: Rc::new(value),
            node: Some(node),
        }
    }

    pub fn is_recording(&self) -> bool {
        self.core.recording.get()
    }

    /// Runs `f` with recording switched off; ops inside produce plain constants.
    pub fn no_grad<T>(&self, f: impl FnOnce() -> T) -> T {
        let _guard = RecordingGuard::set(&self.core, false);
        f()
    }

    pub(crate) fn recording_guard(&self, on: bool) -> RecordingGuard {
        RecordingGuard::set(&self.core, on)
    }

    /// Marks the start of a subgraph; returns the id the next node will get.
    pub fn checkpoint(&self) -> NodeId {
        let id = self.core.next_node.get();
        self.core.checkpoints.borrow_mut().push(id);
        id
    }

    pub fn checkpoints(&self) -> Vec<NodeId> {
        self.core.checkpoints.borrow().clone()
    }

    /// Next id to be handed out, i.e. the number of nodes ever recorded.
    pub fn node_count(&self) -> NodeId {
        self.core.next_node.get()
    }

    /// Nodes still reachable from some live tensor.
    pub fn live_nodes(&self) -> usize {
        self.core.live_nodes.get()
    }

    pub(crate) fn from_core(core: Rc<TapeCore>) -> Self {
        Tape { core }
    }
}

pub(crate) struct RecordingGuard {
    core: Rc<TapeCore>,
    prev: bool,
}

impl RecordingGuard {
    fn set(core: &Rc<TapeCore>, on: bool) -> Self {
        let prev = core.recording.replace(on);
        RecordingGuard {
            core: core.clone(),
            prev,
        }
    }
}

impl Drop for RecordingGuard {
    fn drop(&mut self) {
        self.core.recording.set(self.prev);
    }
}

pub(crate) enum NodeKind {
    Leaf,
    Constant,
    Op { op: Op, inputs: Vec<Tensor> },
}

pub(crate) struct Node {
    pub(crate) id: NodeId,
    pub(crate) tape: Rc<TapeCore>,
    pub(crate) kind: RefCell<NodeKind>,
}

impl Node {
    fn new(core: &Rc<TapeCore>, kind: NodeKind) -> Rc<Node> {
        let id = core.next_node.get();
        core.next_node.set(id + 1);
        core.live_nodes.set(core.live_nodes.get() + 1);
        Rc::new(Node {
            id,
            tape: core.clone(),
            kind: RefCell::new(kind),
        })
    }
}

impl Drop for Node {
    fn drop(&mut self) {
        self.tape.live_nodes.set(self.tape.live_nodes.get() - 1);
        // Unlink inputs iteratively so long chains do not recurse deeply on drop.
        let mut stack: Vec<Tensor> = match self.kind.replace(NodeKind::Constant) {
            NodeKind::Op { inputs, .. } => inputs,
            _ => return,
        };
        while let Some(t) = stack.pop() {
            if let Some(node) = t.node {
                if let Ok(node) = Rc::try_unwrap(node) {
                    if let NodeKind::Op { inputs, .. } = node.kind.replace(NodeKind::Constant) {
                        stack.extend(inputs);
                    }
                }
            }
        }
    }
}

/// An n-dimensional `f64` value, optionally carrying gradient lineage.
#[derive(Clone)]
pub struct Tensor {
    pub(crate) value: Rc<Array>,
    pub(crate) node: Option<Rc<Node>>,
}

impl std::fmt::Debug for Tensor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.value.shape())
            .field("node_id", &self.node_id())
            .finish()
    }
}

impl From<Array> for Tensor {
    fn from(a: Array) -> Self {
        Tensor::constant(a)
    }
}

impl Tensor {
    /// A tensor with no tape lineage.
    pub fn constant(value: Array) -> Self {
        Tensor {
            value: Rc::new(value),
            node: None,
        }
    }

    pub fn scalar(v: f64) -> Self {
        Tensor::constant(Array::scalar(v))
    }

    pub fn value(&self) -> &Array {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn data(&self) -> &[f64] {
        self.value.data()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn item(&self) -> f64 {
        self.value.item()
    }

    pub fn node_id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|n| n.id)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        matches!(
            self.node
                .as_ref()
                .map(|n| matches!(*n.kind.borrow(), NodeKind::Leaf)),
            Some(true)
        )
    }

    pub fn tape(&self) -> Option<Tape> {
        self.node.as_ref().map(|n| Tape::from_core(n.tape.clone()))
    }

    /// Same values, no lineage.
    pub fn detach(&self) -> Tensor {
        Tensor {
            value: self.value.clone(),
            node: None,
        }
    }

    /// True when both tensors refer to the same graph node.
    pub fn same_node(&self, other: &Tensor) -> bool {
        match (&self.node, &other.node) {
            (Some(a), Some(b)) => Rc::ptr_eq(a, b),
            _ => false,
        }
    }

    /// Cuts this node off from its inputs. Every tensor sharing the node keeps
    /// its value and id but gradients stop here from now on.
    pub fn truncate_history(&self) {
        if let Some(node) = &self.node {
            let mut kind = node.kind.borrow_mut();
            if matches!(*kind, NodeKind::Op { .. }) {
                *kind = NodeKind::Constant;
            }
        }
    }

    /// Records `op` applied to `inputs` with precomputed output `value`.
    pub(crate) fn record(value: Array, op: Op, inputs: &[&Tensor]) -> Result<Tensor> {
        let name = op.name();
        if checked_mode() {
            if inputs.iter().any(|t| !t.value.is_finite()) || !value.is_finite() {
                return Err(TensorError::NonFinite { op: name });
            }
        }
        let mut tape: Option<&Rc<TapeCore>> = None;
        for t in inputs {
            if let Some(n) = &t.node {
                match tape {
                    None => tape = Some(&n.tape),
                    Some(core) if core.id != n.tape.id => {
                        return Err(TensorError::TapeMismatch(name))
                    }
                    _ => {}
                }
            }
        }
        let node = match tape {
            Some(core) if core.recording.get() => Some(Node::new(
                core,
                NodeKind::Op {
                    op,
                    inputs: inputs.iter().map(|t| (*t).clone()).collect(),
                },
            )),
            _ => None,
        };
        Ok(Tensor {
            value: Rc::new(value),
            node,
        })
    }
}
