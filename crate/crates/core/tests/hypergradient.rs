use bilevel::bilevel::{
    hypergrad_truncated, inner_step, sgd_reference_step, HypergradConfig, OuterOptimizerKind,
    TrainState, UnrollWindow,
};
use bilevel::checks::oracle::{LinearToy, ScalarQuadratic, FD_REL_TOL, SCALAR_TOL, UNROLL_TOL};
use bilevel::nn::ParamSet;
use bilevel::tensor::{Array, Tensor};

fn rel(a: &Array, b: &Array) -> f64 {
    let scale = a
        .data()
        .iter()
        .chain(b.data())
        .fold(1e-12f64, |m, v| m.max(v.abs()));
    a.max_abs_diff(b) / scale
}

fn single(name: &str, v: f64) -> ParamSet {
    let mut p = ParamSet::new();
    p.push(name, Tensor::constant(Array::scalar(v)));
    p
}

#[test]
fn scalar_quadratic_one_step() {
    let q = ScalarQuadratic::default();
    let g = q.truncated_one_step().unwrap();
    assert!((g - (-0.19)).abs() <= SCALAR_TOL, "{g}");
    assert!((q.closed_form(1) - (-0.19)).abs() <= SCALAR_TOL);
}

#[test]
fn scalar_quadratic_unroll_matches_geometric_series() {
    let q = ScalarQuadratic::default();
    for t in 1..=8 {
        let g = q.full_unroll(t).unwrap();
        assert!(
            (g - q.closed_form(t)).abs() <= SCALAR_TOL,
            "t={t}: {g} vs {}",
            q.closed_form(t)
        );
    }
}

#[test]
fn truncated_equals_full_unroll_and_finite_differences() {
    for seed in [0, 1, 2] {
        let toy = LinearToy::new(seed);
        for t in 1..=5 {
            let tr = toy.truncated(t).unwrap();
            let full = toy.full(t).unwrap();
            let fd = toy.finite_diff(t).unwrap();
            assert!(tr.max_abs_diff(&full) <= UNROLL_TOL, "seed {seed} t={t}");
            assert!(
                rel(&tr, &fd) <= FD_REL_TOL,
                "seed {seed} t={t}: {:?} vs {:?}",
                tr,
                fd
            );
        }
    }
}

#[test]
fn plain_step_matches_reference_sgd() {
    let cfg = HypergradConfig {
        inner_lr: 0.3,
        clip_norm: Some(0.5),
        outer_optimizer: OuterOptimizerKind::Sgd,
        ..Default::default()
    };
    let w0 = single("w", 4.0);
    let th = single("theta", 1.0);
    let loss = |w: &ParamSet, th: &ParamSet| -> bilevel::bilevel::Result<Tensor> {
        let d = w.get(0).sub(th.get(0))?;
        Ok(d.mul(&d)?.scale(0.5)?)
    };
    let mut st = TrainState::new(&w0, &th, &cfg, false);
    let mut win = UnrollWindow::new(1);
    inner_step(&mut st, &mut win, loss).unwrap();
    let reference = sgd_reference_step(&w0, 0.3, Some(0.5), |w| loss(w, &th)).unwrap();
    assert!(st.omega().bitwise_eq(&reference));
    // gradient 3 clipped to 0.5, times lr 0.3
    assert!((st.omega().get(0).item() - 3.85).abs() < 1e-15);
}

#[test]
fn window_bounds_graph_growth() {
    let cfg = HypergradConfig {
        k: 2,
        j: 2,
        inner_lr: 0.1,
        clip_norm: None,
        ..Default::default()
    };
    let mut st = TrainState::new(&single("w", 0.0), &single("theta", 1.0), &cfg, true);
    let mut win = UnrollWindow::new(2);
    let mut live = Vec::new();
    for _ in 0..40 {
        inner_step(&mut st, &mut win, |w, th| {
            let d = w.get(0).sub(th.get(0))?;
            Ok(d.mul(&d)?.scale(0.5)?)
        })
        .unwrap();
        live.push(st.tape().live_nodes());
    }
    assert!(win.records().count() <= 2);
    assert!(
        live[39] <= live[9],
        "live nodes grew: {} -> {}",
        live[9],
        live[39]
    );
    let a = Tensor::scalar(2.0);
    let g = hypergrad_truncated(&st, &win, |w| {
        let d = w.get(0).sub(&a)?;
        Ok(d.mul(&d)?.scale(0.5)?)
    })
    .unwrap();
    assert!(g[0].is_finite());
}
