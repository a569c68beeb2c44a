//! Analytic and unrolled-derivative oracles for the hypergradient engine.

use super::CheckReport;
use crate::bilevel::{
    full_unroll_hypergrad, hypergrad_truncated, inner_step, sgd_reference_step, HypergradConfig,
    OuterOptimizerKind, Result, TrainState, UnrollWindow,
};
use crate::nn::ParamSet;
use crate::rng::{normal_vec, seeded};
use crate::tensor::{finite_diff_gradient, Array, Tensor};

pub const SCALAR_TOL: f64 = 1e-12;
pub const UNROLL_TOL: f64 = 1e-10;
pub const FD_REL_TOL: f64 = 1e-6;
const FD_STEP: f64 = 1e-5;
const NODE_LIMIT: usize = 1_000_000;

fn set(name: &str, a: Array) -> ParamSet {
    ParamSet::from_parts(vec![name.into()], vec![Tensor::constant(a)])
}

fn half_sq(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let d = a.sub(b)?;
    Ok(d.mul(&d)?.scale(0.5)?)
}

fn exact_cfg(k: usize, lr: f64) -> HypergradConfig {
    HypergradConfig {
        k,
        j: k,
        inner_lr: lr,
        outer_optimizer: OuterOptimizerKind::Sgd,
        clip_norm: None,
        ..Default::default()
    }
}

/// Inner loss `(w - theta)^2 / 2`, outer loss `(w - a)^2 / 2`.
pub struct ScalarQuadratic {
    pub omega0: f64,
    pub theta: f64,
    pub lr: f64,
    pub target: f64,
}

impl Default for ScalarQuadratic {
    fn default() -> Self {
        ScalarQuadratic {
            omega0: 0.0,
            theta: 1.0,
            lr: 0.1,
            target: 2.0,
        }
    }
}

impl ScalarQuadratic {
    /// Hypergradient through one engine step with a one-step window.
    pub fn truncated_one_step(&self) -> Result<f64> {
        let mut st = TrainState::new(
            &set("w", Array::scalar(self.omega0)),
            &set("theta", Array::scalar(self.theta)),
            &exact_cfg(1, self.lr),
            true,
        );
        let mut win = UnrollWindow::new(1);
        inner_step(&mut st, &mut win, |w, th| half_sq(w.get(0), th.get(0)))?;
        let a = Tensor::scalar(self.target);
        Ok(hypergrad_truncated(&st, &win, |w| half_sq(w.get(0), &a))?[0].item())
    }

    pub fn full_unroll(&self, steps: usize) -> Result<f64> {
        let a = Tensor::scalar(self.target);
        let g = full_unroll_hypergrad(
            &set("w", Array::scalar(self.omega0)),
            &set("theta", Array::scalar(self.theta)),
            steps,
            self.lr,
            NODE_LIMIT,
            |_, w, th| half_sq(w.get(0), th.get(0)),
            |w| half_sq(w.get(0), &a),
        )?;
        Ok(g[0].item())
    }

    /// `w_T = r^T w0 + (1 - r^T) theta` with `r = 1 - lr`, so
    /// `dL/dtheta = (w_T - a) * lr * sum_{i<T} r^i`.
    pub fn closed_form(&self, steps: usize) -> f64 {
        let r = 1.0 - self.lr;
        let rt = r.powi(steps as i32);
        let w_t = rt * self.omega0 + (1.0 - rt) * self.theta;
        let geo: f64 = (0..steps).map(|i| r.powi(i as i32)).sum();
        (w_t - self.target) * self.lr * geo
    }
}

/// Least-squares regression whose features are rescaled by `1 + theta`
/// during training and left untouched for validation.
pub struct LinearToy {
    x_tr: Tensor,
    y_tr: Tensor,
    x_val: Tensor,
    y_val: Tensor,
    pub omega0: ParamSet,
    pub theta: ParamSet,
    pub lr: f64,
}

impl LinearToy {
    pub const SAMPLES: usize = 8;
    pub const FEATURES: usize = 2;

    pub fn new(seed: u64) -> Self {
        let mut rng = seeded(seed);
        let (n, d) = (Self::SAMPLES, Self::FEATURES);
        let mut mat = |r: usize, c: usize, s: f64| {
            let v = normal_vec(&mut rng, r * c)
                .into_iter()
                .map(|x| x * s)
                .collect();
            Array::new(vec![r, c], v).expect("sized")
        };
        let x_tr = mat(n, d, 1.0);
        let y_tr = mat(n, 1, 1.0);
        let x_val = mat(n, d, 1.0);
        let y_val = mat(n, 1, 1.0);
        let omega0 = mat(d, 1, 0.5);
        let theta = mat(1, d, 0.2);
        LinearToy {
            x_tr: Tensor::constant(x_tr),
            y_tr: Tensor::constant(y_tr),
            x_val: Tensor::constant(x_val),
            y_val: Tensor::constant(y_val),
            omega0: set("w", omega0),
            theta: set("theta", theta),
            lr: 0.1,
        }
    }

    fn mse(x: &Tensor, w: &Tensor, y: &Tensor) -> Result<Tensor> {
        let d = x.matmul(w)?.sub(y)?;
        Ok(d.mul(&d)?.mean()?.scale(0.5)?)
    }

    pub fn train_loss(&self, w: &ParamSet, theta: &ParamSet) -> Result<Tensor> {
        let x = self.x_tr.mul(&theta.get(0).add_scalar(1.0)?)?;
        Self::mse(&x, w.get(0), &self.y_tr)
    }

    pub fn val_loss(&self, w: &ParamSet) -> Result<Tensor> {
        Self::mse(&self.x_val, w.get(0), &self.y_val)
    }

    /// Engine hypergradient after `t` steps with a window of `t`.
    pub fn truncated(&self, t: usize) -> Result<Array> {
        let mut st = TrainState::new(&self.omega0, &self.theta, &exact_cfg(t, self.lr), true);
        let mut win = UnrollWindow::new(t);
        for _ in 0..t {
            inner_step(&mut st, &mut win, |w, th| self.train_loss(w, th))?;
        }
        Ok(hypergrad_truncated(&st, &win, |w| self.val_loss(w))?.remove(0))
    }

    pub fn full(&self, t: usize) -> Result<Array> {
        Ok(full_unroll_hypergrad(
            &self.omega0,
            &self.theta,
            t,
            self.lr,
            NODE_LIMIT,
            |_, w, th| self.train_loss(w, th),
            |w| self.val_loss(w),
        )?
        .remove(0))
    }

    /// Validation loss after `t` plain SGD steps with `theta` held fixed.
    pub fn unrolled_val(&self, theta: &Array, t: usize) -> Result<f64> {
        let th = set("theta", theta.clone());
        let mut w = self.omega0.clone();
        for _ in 0..t {
            w = sgd_reference_step(&w, self.lr, None, |w| self.train_loss(w, &th))?;
        }
        Ok(self.val_loss(&w)?.item())
    }

    pub fn finite_diff(&self, t: usize) -> Result<Array> {
        finite_diff_gradient(
            |th| self.unrolled_val(th, t),
            self.theta.get(0).value(),
            FD_STEP,
        )
    }
}

fn rel(a: &Array, b: &Array) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / y.abs().max(1e-8))
        .fold(0.0, f64::max)
}

fn report<F: FnOnce() -> Result<(usize, f64)>>(name: &str, tol: f64, f: F) -> CheckReport {
    match f() {
        Ok((cases, err)) => CheckReport::new(name, cases, err, tol, None),
        Err(e) => CheckReport::new(name, 0, f64::INFINITY, tol, Some(e.to_string())),
    }
}

pub fn scalar_quadratic_report() -> CheckReport {
    report("hypergrad_scalar_quadratic", SCALAR_TOL, || {
        let p = ScalarQuadratic::default();
        let hg = p.truncated_one_step()?;
        Ok((1, (hg - (-0.19)).abs()))
    })
}

pub fn geometric_series_report(max_steps: usize) -> CheckReport {
    report("full_unroll_geometric_series", SCALAR_TOL, || {
        let p = ScalarQuadratic::default();
        let mut worst = 0.0f64;
        for t in 1..=max_steps {
            worst = worst.max((p.full_unroll(t)? - p.closed_form(t)).abs());
        }
        Ok((max_steps, worst))
    })
}

pub fn truncation_report(max_steps: usize, seed: u64) -> CheckReport {
    report("truncated_equals_full_unroll", UNROLL_TOL, || {
        let toy = LinearToy::new(seed);
        let mut worst = 0.0f64;
        for t in 1..=max_steps {
            worst = worst.max(toy.truncated(t)?.max_abs_diff(&toy.full(t)?));
        }
        Ok((max_steps, worst))
    })
}

pub fn finite_diff_report(max_steps: usize, seed: u64) -> CheckReport {
    report("hypergrad_vs_finite_diff", FD_REL_TOL, || {
        let toy = LinearToy::new(seed);
        let mut worst = 0.0f64;
        for t in 1..=max_steps {
            let fd = toy.finite_diff(t)?;
            worst = worst
                .max(rel(&toy.truncated(t)?, &fd))
                .max(rel(&toy.full(t)?, &fd));
        }
        Ok((max_steps, worst))
    })
}

/// Everything the `oracle` command runs.
pub fn oracle_suite(seed: u64) -> Vec<CheckReport> {
    vec![
        scalar_quadratic_report(),
        geometric_series_report(6),
        truncation_report(6, seed),
        finite_diff_report(6, seed),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes() {
        for r in oracle_suite(7) {
            assert!(r.passed(), "{r}");
        }
    }

    #[test]
    fn scalar_closed_form_by_hand() {
        // One step: w1 = 0.1, (0.1 - 2) * 0.1 = -0.19.
        assert!((ScalarQuadratic::default().closed_form(1) + 0.19).abs() < 1e-15);
    }

    #[test]
    fn truncation_to_fewer_steps_differs_from_full_unroll() {
        let toy = LinearToy::new(3);
        let mut st = TrainState::new(&toy.omega0, &toy.theta, &exact_cfg(1, toy.lr), true);
        let mut win = UnrollWindow::new(1);
        for _ in 0..3 {
            inner_step(&mut st, &mut win, |w, th| toy.train_loss(w, th)).unwrap();
        }
        let short = hypergrad_truncated(&st, &win, |w| toy.val_loss(w))
            .unwrap()
            .remove(0);
        assert!(short.max_abs_diff(&toy.full(3).unwrap()) > 1e-6);
    }
}
