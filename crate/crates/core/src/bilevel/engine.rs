use super::config::HypergradConfig;
use super::outer::OuterOptimizer;
use super::window::{StepRecord, UnrollWindow};
use super::{BilevelError, Result};
use crate::nn::ParamSet;
use crate::tensor::{backward, Array, Tape, Tensor};

/// Live classifier weights `omega`, augmenter weights `theta`, and the outer
/// optimizer state, all on one tape.
pub struct TrainState {
    tape: Tape,
    omega: ParamSet,
    theta: ParamSet,
    step: usize,
    outer: OuterOptimizer,
    differentiable: bool,
    inner_lr: f64,
    clip_norm: Option<f64>,
    theta_grad: Option<Vec<Array>>,
}

impl TrainState {
    /// `differentiable` records every inner update so hypergradients can flow
    /// through it; without it inner steps are plain SGD on fresh leaves.
    pub fn new(
        omega: &ParamSet,
        theta: &ParamSet,
        cfg: &HypergradConfig,
        differentiable: bool,
    ) -> Self {
        let tape = Tape::new();
        TrainState {
            omega: omega.to_leaves(&tape),
            theta: theta.to_leaves(&tape),
            tape,
            step: 0,
            outer: OuterOptimizer::new(cfg),
            differentiable,
            inner_lr: cfg.inner_lr,
            clip_norm: cfg.clip_norm,
            theta_grad: None,
        }
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn omega(&self) -> &ParamSet {
        &self.omega
    }

    pub fn theta(&self) -> &ParamSet {
        &self.theta
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn outer_steps(&self) -> u64 {
        self.outer.steps_taken()
    }

    /// Applies one outer update; the new augmenter weights are fresh leaves.
    pub fn outer_step(&mut self, hypergrad: &[Array]) {
        let vals = self.outer.step(&self.theta.values(), hypergrad);
        let fresh = self.theta.with_values(vals);
        self.theta = fresh.to_leaves(&self.tape);
    }

    /// Direct gradient of the last non-differentiable inner step's training
    /// loss with respect to theta, if theta is non-empty.
    pub fn take_theta_grad(&mut self) -> Option<Vec<Array>> {
        self.theta_grad.take()
    }

    /// Replaces the augmenter weights with fresh leaves holding `values`.
    pub fn set_theta(&mut self, values: Vec<Array>) {
        self.theta = self.theta.with_values(values).to_leaves(&self.tape);
    }
}

/// `omega - lr * g` with optional global-norm clipping, as tensor arithmetic
/// so the same code serves recorded and unrecorded updates.
fn sgd_update(
    omega: &ParamSet,
    grads: &[Tensor],
    lr: f64,
    clip: Option<f64>,
) -> Result<(Vec<Tensor>, ParamSet)> {
    let mut grads = grads.to_vec();
    if let Some(c) = clip {
        let norm = grads
            .iter()
            .flat_map(|g| g.data().iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt();
        if norm > c {
            let s = c / norm;
            grads = grads
                .iter()
                .map(|g| g.scale(s))
                .collect::<std::result::Result<_, _>>()?;
        }
    }
    let next = omega
        .tensors()
        .iter()
        .zip(&grads)
        .map(|(w, g)| w.sub(&g.scale(lr)?))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((grads, omega.with_tensors(next)))
}

/// One SGD step on the training loss built by `loss_fn(omega, theta)`.
///
/// In differentiable mode the update is recorded and pushed into `window`;
/// the committed weights are the window's newest weights. Returns the loss.
pub fn inner_step<F>(state: &mut TrainState, window: &mut UnrollWindow, loss_fn: F) -> Result<f64>
where
    F: FnOnce(&ParamSet, &ParamSet) -> Result<Tensor>,
{
    let step = state.step;
    let omega_in = state.omega.clone();
    let loss = loss_fn(&omega_in, &state.theta)?;
    let lv = loss.item();
    if !lv.is_finite() {
        return Err(BilevelError::NonFiniteLoss { step });
    }
    let refs = omega_in.refs();
    if state.differentiable {
        let g = backward(&loss, &refs, true)?;
        let grads: Vec<Tensor> = refs
            .iter()
            .map(|w| g.get(w).expect("requested").clone())
            .collect();
        let (grads, omega_next) = sgd_update(&omega_in, &grads, state.inner_lr, state.clip_norm)?;
        state.omega = omega_next.clone();
        window.push(StepRecord {
            step,
            loss: lv,
            omega_in,
            grads,
            omega_next,
            theta_ids: state.theta.node_ids(),
        });
    } else {
        let mut targets = refs.clone();
        targets.extend(state.theta.tensors());
        let g = backward(&loss, &targets, false)?;
        let grads: Vec<Tensor> = refs
            .iter()
            .map(|w| g.get(w).expect("requested").clone())
            .collect();
        if !state.theta.is_empty() {
            state.theta_grad = Some(
                state
                    .theta
                    .tensors()
                    .iter()
                    .map(|t| g.get(t).expect("requested").value().clone())
                    .collect(),
            );
        }
        let detached = omega_in.detached();
        let (_, next) = sgd_update(&detached, &grads, state.inner_lr, state.clip_norm)?;
        state.omega = next.to_leaves(&state.tape);
    }
    state.step += 1;
    Ok(lv)
}

/// Plain SGD step on a throwaway tape; the reference the inner step must
/// reproduce when augmentation is the identity.
pub fn sgd_reference_step<F>(
    omega: &ParamSet,
    lr: f64,
    clip: Option<f64>,
    loss_fn: F,
) -> Result<ParamSet>
where
    F: FnOnce(&ParamSet) -> Result<Tensor>,
{
    let tape = Tape::new();
    let w = omega.to_leaves(&tape);
    let loss = loss_fn(&w)?;
    let g = backward(&loss, &w.refs(), false)?;
    let grads: Vec<Tensor> = w
        .tensors()
        .iter()
        .map(|t| g.get(t).expect("requested").clone())
        .collect();
    let (_, next) = sgd_update(&w.detached(), &grads, lr, clip)?;
    Ok(next.detached())
}

/// Gradient of the validation loss at the newest weights with respect to
/// theta, flowing back through the retained inner steps only.
pub fn hypergrad_truncated<F>(
    state: &TrainState,
    window: &UnrollWindow,
    val_fn: F,
) -> Result<Vec<Array>>
where
    F: FnOnce(&ParamSet) -> Result<Tensor>,
{
    let newest = window.newest().ok_or(BilevelError::EmptyWindow)?;
    let ids = state.theta.node_ids();
    for r in window.records() {
        if r.theta_ids != ids {
            return Err(BilevelError::StaleTheta { step: r.step });
        }
    }
    let val = val_fn(&newest.omega_next)?;
    let g = backward(&val, &state.theta.refs(), false)?;
    Ok(state
        .theta
        .tensors()
        .iter()
        .map(|t| g.get(t).expect("requested").value().clone())
        .collect())
}

/// Exact hypergradient through `steps` unclipped SGD steps from `omega0`,
/// holding theta fixed. Every step graph is kept alive; `node_limit` bounds
/// the number of live tape nodes.
pub fn full_unroll_hypergrad<F, V>(
    omega0: &ParamSet,
    theta: &ParamSet,
    steps: usize,
    lr: f64,
    node_limit: usize,
    mut train_fn: F,
    val_fn: V,
) -> Result<Vec<Array>>
where
    F: FnMut(usize, &ParamSet, &ParamSet) -> Result<Tensor>,
    V: FnOnce(&ParamSet) -> Result<Tensor>,
{
    let tape = Tape::new();
    let theta = theta.to_leaves(&tape);
    let mut omega = omega0.to_leaves(&tape);
    for t in 0..steps {
        let loss = train_fn(t, &omega, &theta)?;
        if !loss.item().is_finite() {
            return Err(BilevelError::NonFiniteLoss { step: t });
        }
        let refs = omega.refs();
        let g = backward(&loss, &refs, true)?;
        let grads: Vec<Tensor> = refs
            .iter()
            .map(|w| g.get(w).expect("requested").clone())
            .collect();
        omega = sgd_update(&omega, &grads, lr, None)?.1;
        if tape.live_nodes() > node_limit {
            return Err(BilevelError::MemoryGuard { limit: node_limit });
        }
    }
    let val = val_fn(&omega)?;
    let g = backward(&val, &theta.refs(), false)?;
    Ok(theta
        .tensors()
        .iter()
        .map(|t| g.get(t).expect("requested").value().clone())
        .collect())
}
