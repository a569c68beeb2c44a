use std::collections::VecDeque;

use crate::nn::ParamSet;
use crate::tensor::{NodeId, Tensor};

/// One retained inner step. `omega_next` is recorded as the differentiable
/// relation `omega_in - lr * grads`.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub omega_in: ParamSet,
    pub grads: Vec<Tensor>,
    pub omega_next: ParamSet,
    pub theta_ids: Vec<Option<NodeId>>,
}

/// The last `capacity` inner steps, oldest first.
#[derive(Debug)]
pub struct UnrollWindow {
    capacity: usize,
    records: VecDeque<StepRecord>,
}

impl UnrollWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "window capacity must be at least 1");
        UnrollWindow {
            capacity,
            records: VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter()
    }

    pub fn steps(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.step).collect()
    }

    pub fn newest(&self) -> Option<&StepRecord> {
        self.records.back()
    }

    /// Appends a record. When full, the oldest record is dropped and the
    /// weights it produced are cut from their history, so nothing upstream
    /// of the window can receive gradient.
    pub fn push(&mut self, record: StepRecord) {
        self.records.push_back(record);
        while self.records.len() > self.capacity {
            let old = self.records.pop_front().expect("non-empty");
            for t in old.omega_next.tensors() {
                t.truncate_history();
            }
        }
    }

    /// Detaches and forgets every record.
    pub fn clear(&mut self) {
        for r in self.records.drain(..) {
            for t in r.omega_next.tensors() {
                t.truncate_history();
            }
        }
    }
}
