use super::config::{HypergradConfig, OuterOptimizerKind};
use crate::tensor::Array;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Scales all arrays together so their joint L2 norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|v| *v *= s);
        }
    }
    norm
}

/// SGD or Adam on the augmenter weights, with L2 weight decay folded into
/// the gradient.
#[derive(Clone, Debug)]
pub struct OuterOptimizer {
    kind: OuterOptimizerKind,
    lr: f64,
    weight_decay: f64,
    clip_norm: Option<f64>,
    m: Vec<Array>,
    v: Vec<Array>,
    t: u64,
}

impl OuterOptimizer {
    pub fn new(cfg: &HypergradConfig) -> Self {
        OuterOptimizer {
            kind: cfg.outer_optimizer,
            lr: cfg.outer_lr,
            weight_decay: cfg.weight_decay,
            clip_norm: cfg.clip_norm,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }

    /// New parameter values after one update.
    pub fn step(&mut self, params: &[Array], grads: &[Array]) -> Vec<Array> {
        assert_eq!(params.len(), grads.len(), "one gradient per parameter");
        let mut g: Vec<Array> = grads.to_vec();
        if let Some(c) = self.clip_norm {
            clip_global_norm(&mut g, c);
        }
        if self.weight_decay != 0.0 {
            for (gi, p) in g.iter_mut().zip(params) {
                for (a, b) in gi.data_mut().iter_mut().zip(p.data()) {
                    *a += self.weight_decay * b;
                }
            }
        }
        self.t += 1;
        match self.kind {
            OuterOptimizerKind::Sgd => params
                .iter()
                .zip(&g)
                .map(|(p, gi)| {
                    let d = p
                        .data()
                        .iter()
                        .zip(gi.data())
                        .map(|(a, b)| a - self.lr * b)
                        .collect();
                    Array::new(p.shape().to_vec(), d).expect("same shape")
                })
                .collect(),
            OuterOptimizerKind::Adam => {
                if self.m.is_empty() {
                    self.m = params.iter().map(|p| Array::zeros(p.shape())).collect();
                    self.v = self.m.clone();
                }
                let bc1 = 1.0 - BETA1.powi(self.t as i32);
                let bc2 = 1.0 - BETA2.powi(self.t as i32);
                let mut out = Vec::with_capacity(params.len());
                for i in 0..params.len() {
                    let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
                    let mut d = params[i].data().to_vec();
                    for (k, gk) in g[i].data().iter().enumerate() {
                        m[k] = BETA1 * m[k] + (1.0 - BETA1) * gk;
                        v[k] = BETA2 * v[k] + (1.0 - BETA2) * gk * gk;
                        let mh = m[k] / bc1;
                        let vh = v[k] / bc2;
                        d[k] -= self.lr * mh / (vh.sqrt() + EPS);
                    }
                    out.push(Array::new(params[i].shape().to_vec(), d).expect("same shape"));
                }
                out
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: OuterOptimizerKind, lr: f64, wd: f64) -> HypergradConfig {
        HypergradConfig {
            outer_optimizer: kind,
            outer_lr: lr,
            weight_decay: wd,
            clip_norm: None,
            ..Default::default()
        }
    }

    #[test]
    fn sgd_step() {
        let mut o = OuterOptimizer::new(&cfg(OuterOptimizerKind::Sgd, 0.1, 0.0));
        let out = o.step(&[Array::scalar(2.0)], &[Array::scalar(1.0)]);
        assert!((out[0].item() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn adam_first_step_is_lr_times_sign() {
        let mut o = OuterOptimizer::new(&cfg(OuterOptimizerKind::Adam, 1e-3, 0.0));
        let out = o.step(
            &[Array::from_vec(vec![0.5, 0.5])],
            &[Array::from_vec(vec![3.0, -0.02])],
        );
        // m_hat = g, v_hat = g^2, so the update is lr * g / (|g| + eps).
        let want = [
            0.5 - 1e-3 * 3.0 / (3.0 + EPS),
            0.5 + 1e-3 * 0.02 / (0.02 + EPS),
        ];
        for (a, b) in out[0].data().iter().zip(want) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_gradient_without_decay_is_noop() {
        for kind in [OuterOptimizerKind::Sgd, OuterOptimizerKind::Adam] {
            let mut o = OuterOptimizer::new(&cfg(kind, 0.1, 0.0));
            let p = Array::from_vec(vec![0.3, -0.7]);
            let out = o.step(&[p.clone()], &[Array::zeros(&[2])]);
            assert_eq!(out[0], p);
        }
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut o = OuterOptimizer::new(&cfg(OuterOptimizerKind::Sgd, 0.5, 0.1));
        let out = o.step(&[Array::scalar(2.0)], &[Array::scalar(0.0)]);
        assert!((out[0].item() - 1.9).abs() < 1e-15);
    }

    #[test]
    fn clipping_bounds_norm() {
        let mut g = vec![Array::from_vec(vec![3.0]), Array::from_vec(vec![4.0])];
        let n = clip_global_norm(&mut g, 1.0);
        assert_eq!(n, 5.0);
        assert!((g[0].item() - 0.6).abs() < 1e-15 && (g[1].item() - 0.8).abs() < 1e-15);
    }
}
