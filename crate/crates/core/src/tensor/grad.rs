use std::collections::{HashMap, HashSet};
use std::rc::Rc;

use super::array::Array;
use super::error::{Result, TensorError};
use super::ops::vjp;
use super::tape::{Node, NodeId, NodeKind, Tape, Tensor};

/// Gradients keyed by the node id of the tensor they were taken with respect to.
#[derive(Clone, Debug, Default)]
pub struct GradMap {
    grads: HashMap<NodeId, Tensor>,
}

impl GradMap {
    pub fn get(&self, param: &Tensor) -> Option<&Tensor> {
        param.node_id().and_then(|id| self.grads.get(&id))
    }

    pub fn get_id(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(&id)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, id: NodeId, grad: Tensor) {
        self.grads.insert(id, grad);
    }
}

/// Reverse-mode gradients of the scalar `loss` with respect to each of `wrt`.
///
/// With `retain_graph` the backward computation is itself recorded, so every
/// returned gradient is a node on the same tape and can be differentiated
/// again. Targets the loss does not depend on get zeros.
pub fn backward(loss: &Tensor, wrt: &[&Tensor], retain_graph: bool) -> Result<GradMap> {
    if loss.numel() != 1 {
        return Err(TensorError::NotScalar(loss.shape().to_vec()));
    }
    let loss_tape = loss.node.as_ref().map(|n| n.tape.clone());
    for w in wrt {
        let Some(node) = &w.node else {
            return Err(TensorError::NotOnTape);
        };
        if let Some(core) = &loss_tape {
            if !Rc::ptr_eq(core, &node.tape) {
                return Err(TensorError::NotOnTape);
            }
        }
    }

    let mut grads: HashMap<NodeId, Tensor> = HashMap::new();
    if let (Some(loss_node), Some(core)) = (&loss.node, &loss_tape) {
        let tape = Tape::from_core(core.clone());
        let _rec = tape.recording_guard(retain_graph);

        // Reachable subgraph, keyed by id.
        let mut nodes: HashMap<NodeId, Rc<Node>> = HashMap::new();
        let mut stack = vec![loss_node.clone()];
        while let Some(n) = stack.pop() {
            if nodes.contains_key(&n.id) {
                continue;
            }
            if let NodeKind::Op { inputs, .. } = &*n.kind.borrow() {
                for t in inputs {
                    if let Some(inp) = &t.node {
                        if !nodes.contains_key(&inp.id) {
                            stack.push(inp.clone());
                        }
                    }
                }
            }
            nodes.insert(n.id, n);
        }
        let mut order: Vec<NodeId> = nodes.keys().copied().collect();
        order.sort_unstable();

        // A node matters if some differentiation target lies below it.
        let targets: HashSet<NodeId> = wrt.iter().filter_map(|w| w.node_id()).collect();
        let mut relevant: HashSet<NodeId> = HashSet::new();
        for id in &order {
            let node = &nodes[id];
            let hit = targets.contains(id)
                || match &*node.kind.borrow() {
                    NodeKind::Op { inputs, .. } => inputs
                        .iter()
                        .any(|t| t.node_id().is_some_and(|i| relevant.contains(&i))),
                    _ => false,
                };
            if hit {
                relevant.insert(*id);
            }
        }

        if relevant.contains(&loss_node.id) {
            grads.insert(loss_node.id, Tensor::constant(Array::ones(loss.shape())));
            for id in order.iter().rev() {
                if !relevant.contains(id) {
                    continue;
                }
                let node = &nodes[id];
                let kind = node.kind.borrow();
                let NodeKind::Op { op, inputs } = &*kind else {
                    continue;
                };
                let Some(g) = grads.get(id).cloned() else {
                    continue;
                };
                let needed: Vec<bool> = inputs
                    .iter()
                    .map(|t| t.node_id().is_some_and(|i| relevant.contains(&i)))
                    .collect();
                let contributions = vjp(op, inputs, &g, &needed)?;
                for (t, c) in inputs.iter().zip(contributions) {
                    let (Some(inp_id), Some(c)) = (t.node_id(), c) else {
                        continue;
                    };
                    let acc = match grads.remove(&inp_id) {
                        Some(prev) => prev.add(&c)?,
                        None => c,
                    };
                    grads.insert(inp_id, acc);
                }
                // Intermediate gradients are no longer needed once propagated.
                if !targets.contains(id) {
                    grads.remove(id);
                }
            }
        }
    }

    let mut out = GradMap::default();
    for w in wrt {
        let id = w.node_id().expect("checked above");
        let g = match grads.get(&id) {
            Some(g) => g.clone(),
            None => Tensor::constant(Array::zeros(w.shape())),
        };
        let g = if retain_graph && !g.requires_grad() {
            w.tape()
                .expect("checked above")
                .constant_node(g.value().clone())
        } else if !retain_graph {
            g.detach()
        } else {
            g
        };
        out.insert(id, g);
    }
    Ok(out)
}

/// Central-difference gradient of a scalar function, one coordinate at a time.
pub fn finite_diff_gradient<F, E>(f: F, x: &Array, h: f64) -> std::result::Result<Array, E>
where
    F: Fn(&Array) -> std::result::Result<f64, E>,
    E: From<TensorError>,
{
    if !(h > 0.0) {
        return Err(E::from(TensorError::Invalid {
            op: "finite_diff_gradient",
            detail: format!("step must be positive, got {}", h),
        }));
    }
    let mut grad = Array::zeros(x.shape());
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[i] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(E::from(TensorError::NonFinite {
                op: "finite_diff_gradient",
            }));
        }
        grad.data_mut()[i] = (fp - fm) / (2.0 * h);
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let tape = Tape::new();
        let x = tape.param(Array::from_vec(vec![1.0, 2.0, 3.0]));
        let loss = x.mul(&x).unwrap().sum().unwrap();
        let g = backward(&loss, &[&x], false).unwrap();
        assert_eq!(g.get(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn tanh_at_zero() {
        let tape = Tape::new();
        let w = tape.param(Array::scalar(0.0));
        let x = Tensor::scalar(5.0);
        let loss = w.mul(&x).unwrap().tanh().unwrap();
        let g = backward(&loss, &[&w], false).unwrap();
        assert_eq!(g.get(&w).unwrap().item(), 5.0);
    }

    #[test]
    fn double_backward_cubic() {
        let tape = Tape::new();
        let w = tape.param(Array::scalar(2.0));
        let cube = w.mul(&w).unwrap().mul(&w).unwrap();
        let g = backward(&cube, &[&w], true).unwrap();
        let g1 = g.get(&w).unwrap().clone();
        assert_eq!(g1.item(), 12.0);
        assert!(g1.requires_grad());
        let g2 = backward(&g1, &[&w], false).unwrap();
        assert_eq!(g2.get(&w).unwrap().item(), 12.0);
    }

    #[test]
    fn unreachable_param_gets_zero() {
        let tape = Tape::new();
        let a = tape.param(Array::from_vec(vec![1.0, 2.0]));
        let b = tape.param(Array::from_vec(vec![3.0]));
        let loss = a.sum().unwrap();
        let g = backward(&loss, &[&a, &b], true).unwrap();
        assert_eq!(g.get(&b).unwrap().data(), &[0.0]);
        assert!(g.get(&b).unwrap().requires_grad());
        assert!(g.get(&a).unwrap().requires_grad());
    }

    #[test]
    fn detach_blocks_gradient() {
        let tape = Tape::new();
        let a = tape.param(Array::scalar(3.0));
        let y = a.mul(&a).unwrap();
        let loss = y.detach().mul(&a).unwrap();
        let g = backward(&loss, &[&a], false).unwrap();
        assert_eq!(g.get(&a).unwrap().item(), 9.0);
    }

    #[test]
    fn truncate_history_blocks_gradient() {
        let tape = Tape::new();
        let a = tape.param(Array::scalar(3.0));
        let y = a.mul(&a).unwrap();
        y.truncate_history();
        let loss = y.mul(&a).unwrap();
        let g = backward(&loss, &[&a], false).unwrap();
        assert_eq!(g.get(&a).unwrap().item(), 9.0);
    }

    #[test]
    fn errors() {
        let tape = Tape::new();
        let a = tape.param(Array::from_vec(vec![1.0, 2.0]));
        assert!(matches!(
            backward(&a, &[&a], false),
            Err(TensorError::NotScalar(_))
        ));
        let loss = a.sum().unwrap();
        let other = Tape::new().param(Array::scalar(1.0));
        assert_eq!(
            backward(&loss, &[&other], false).unwrap_err(),
            TensorError::NotOnTape
        );
        let c = Tensor::scalar(1.0);
        assert_eq!(
            backward(&loss, &[&c], false).unwrap_err(),
            TensorError::NotOnTape
        );
    }

    #[test]
    fn finite_diff_basics() {
        let f = |x: &Array| Ok::<_, TensorError>(x.data().iter().map(|v| v * v).sum::<f64>());
        let g = finite_diff_gradient(f, &Array::from_vec(vec![1.0, 2.0]), 1e-5).unwrap();
        assert!((g.data()[0] - 2.0).abs() < 1e-8 && (g.data()[1] - 4.0).abs() < 1e-8);
        let c = finite_diff_gradient(
            |_| Ok::<_, TensorError>(7.0),
            &Array::from_vec(vec![1.0, 2.0]),
            1e-5,
        )
        .unwrap();
        assert_eq!(c.data(), &[0.0, 0.0]);
        assert!(finite_diff_gradient(
            |_| Ok::<_, TensorError>(f64::NAN),
            &Array::scalar(1.0),
            1e-5
        )
        .is_err());
        assert!(
            finite_diff_gradient(|_| Ok::<_, TensorError>(1.0), &Array::scalar(1.0), 0.0).is_err()
        );
    }

    #[test]
    fn deterministic_bitwise() {
        let run = || {
            let tape = Tape::new();
            let w = tape.param(Array::from_vec(vec![0.3, -1.2, 0.7]));
            let loss = w
                .tanh()
                .unwrap()
                .mul(&w.exp().unwrap())
                .unwrap()
                .sum()
                .unwrap();
            backward(&loss, &[&w], false)
                .unwrap()
                .get(&w)
                .unwrap()
                .value()
                .clone()
        };
        let a = run();
        let b = run();
        assert!(a
            .data()
            .iter()
            .zip(b.data())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
