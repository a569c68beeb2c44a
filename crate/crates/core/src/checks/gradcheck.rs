//! Central finite-difference checks for every primitive and every image
//! transform, plus Hessian-vector checks for the double-backward path.

use rand::Rng;

use super::CheckReport;
use crate::rng::{self, ExpRng};
use crate::tensor::{backward, finite_diff_gradient, Array, Tape, Tensor, TensorError};
use crate::vision::{self, ImageBatch, TransformSet, VisionError};

pub const STEP: f64 = 1e-5;
pub const FIRST_ORDER_TOL: f64 = 1e-4;
pub const SECOND_ORDER_TOL: f64 = 1e-3;
pub const KINK_MARGIN: f64 = 0.05;
pub const CASES_PER_OP: usize = 100;

type OpFn = dyn Fn(&[Tensor]) -> Result<Tensor, VisionError>;

/// Elementwise relative error with a small absolute floor.
pub fn rel_err(a: &Array, b: &Array) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-4))
        .fold(0.0, f64::max)
}

fn uniform(rng: &mut ExpRng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n = shape.iter().product();
    Array::new(shape.to_vec(), rng::uniform_vec(rng, n, lo, hi)).expect("sized")
}

/// Uniform in [-2, 2] but at least `KINK_MARGIN` away from every kink.
fn avoiding(rng: &mut ExpRng, shape: &[usize], kinks: &[f64]) -> Array {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let v: f64 = rng.gen_range(-2.0..2.0);
        if kinks.iter().all(|k| (v - k).abs() >= KINK_MARGIN) {
            data.push(v);
        }
    }
    Array::new(shape.to_vec(), data).expect("sized")
}

/// Compares backward() against finite differences of `sum(op(inputs) * r)`
/// for each of the first `differentiable` inputs; the rest are data (labels,
/// masks). Returns the worst relative error.
pub fn check_op(
    inputs: &[Array],
    differentiable: usize,
    op: &OpFn,
    rng: &mut ExpRng,
) -> Result<f64, VisionError> {
    let consts: Vec<Tensor> = inputs.iter().cloned().map(Tensor::constant).collect();
    let out_shape = op(&consts)?.shape().to_vec();
    let proj = Tensor::constant(uniform(rng, &out_shape, -1.0, 1.0));
    let loss_of = |xs: &[Tensor]| -> Result<Tensor, VisionError> { Ok(op(xs)?.mul(&proj)?.sum()?) };

    let tape = Tape::new();
    let params: Vec<Tensor> = inputs
        .iter()
        .enumerate()
        .map(|(i, a)| {
            if i < differentiable {
                tape.param(a.clone())
            } else {
                Tensor::constant(a.clone())
            }
        })
        .collect();
    let loss = loss_of(&params)?;
    let refs: Vec<&Tensor> = params[..differentiable].iter().collect();
    let grads = backward(&loss, &refs, false)?;

    let mut worst: f64 = 0.0;
    for (i, p) in params[..differentiable].iter().enumerate() {
        let fd = finite_diff_gradient(
            |x| {
                let mut xs = consts.clone();
                xs[i] = Tensor::constant(x.clone());
                Ok::<_, VisionError>(loss_of(&xs)?.item())
            },
            &inputs[i],
            STEP,
        )?;
        worst = worst.max(rel_err(grads.get(p).expect("requested").value(), &fd));
    }
    Ok(worst)
}

/// Hessian-vector product through double backward versus central differences
/// of the first gradient, for a scalar function of one input.
pub fn check_hvp(
    x: &Array,
    f: &dyn Fn(&Tensor) -> Result<Tensor, VisionError>,
    rng: &mut ExpRng,
) -> Result<f64, VisionError> {
    let v = uniform(rng, x.shape(), -1.0, 1.0);
    let grad_at = |xa: &Array| -> Result<Array, VisionError> {
        let tape = Tape::new();
        let p = tape.param(xa.clone());
        let g = backward(&f(&p)?, &[&p], false)?;
        Ok(g.get(&p).expect("requested").value().clone())
    };

    let tape = Tape::new();
    let p = tape.param(x.clone());
    let g = backward(&f(&p)?, &[&p], true)?;
    let gv = g
        .get(&p)
        .expect("requested")
        .mul(&Tensor::constant(v.clone()))?
        .sum()?;
    let hv = backward(&gv, &[&p], false)?;
    let hv = hv.get(&p).expect("requested").value().clone();

    let shifted = |s: f64| -> Array {
        let data = x
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| a + s * b)
            .collect();
        Array::new(x.shape().to_vec(), data).expect("sized")
    };
    let gp = grad_at(&shifted(STEP))?;
    let gm = grad_at(&shifted(-STEP))?;
    let fd = Array::new(
        x.shape().to_vec(),
        gp.data()
            .iter()
            .zip(gm.data())
            .map(|(a, b)| (a - b) / (2.0 * STEP))
            .collect(),
    )
    .expect("sized");
    Ok(rel_err(&hv, &fd))
}

struct OpCase {
    name: &'static str,
    differentiable: usize,
    gen: Box<dyn Fn(&mut ExpRng) -> Vec<Array>>,
    op: Box<OpFn>,
}

fn case(
    name: &'static str,
    gen: impl Fn(&mut ExpRng) -> Vec<Array> + 'static,
    op: impl Fn(&[Tensor]) -> Result<Tensor, VisionError> + 'static,
) -> OpCase {
    OpCase {
        name,
        differentiable: usize::MAX,
        gen: Box::new(gen),
        op: Box::new(op),
    }
}

impl OpCase {
    /// Only the first `n` generated inputs are differentiated.
    fn data_after(mut self, n: usize) -> Self {
        self.differentiable = n;
        self
    }
}

fn t(r: Result<Tensor, TensorError>) -> Result<Tensor, VisionError> {
    r.map_err(VisionError::from)
}

fn primitive_cases() -> Vec<OpCase> {
    let smooth = |shape: &'static [usize]| move |r: &mut ExpRng| vec![avoiding(r, shape, &[])];
    vec![
        case(
            "add",
            |r| vec![avoiding(r, &[3, 4], &[]), avoiding(r, &[4], &[])],
            |x| t(x[0].add(&x[1])),
        ),
        case(
            "sub",
            |r| vec![avoiding(r, &[2, 1, 3], &[]), avoiding(r, &[4, 1], &[])],
            |x| t(x[0].sub(&x[1])),
        ),
        case(
            "mul",
            |r| vec![avoiding(r, &[2, 3], &[]), avoiding(r, &[2, 3], &[])],
            |x| t(x[0].mul(&x[1])),
        ),
        case(
            "mul_broadcast",
            |r| vec![avoiding(r, &[2, 3, 2], &[]), avoiding(r, &[3, 1], &[])],
            |x| t(x[0].mul(&x[1])),
        ),
        case(
            "div",
            |r| {
                let b = uniform(r, &[2, 3], 0.5, 2.0).map(|v| if r_sign(v) { v } else { -v });
                vec![avoiding(r, &[2, 3], &[]), b]
            },
            |x| t(x[0].div(&x[1])),
        ),
        case(
            "matmul",
            |r| vec![avoiding(r, &[3, 4], &[]), avoiding(r, &[4, 2], &[])],
            |x| t(x[0].matmul(&x[1])),
        ),
        case("transpose", smooth(&[3, 2]), |x| t(x[0].transpose())),
        case(
            "conv2d",
            |r| {
                vec![
                    avoiding(r, &[2, 2, 4, 5], &[]),
                    avoiding(r, &[3, 2, 3, 3], &[]),
                ]
            },
            |x| t(x[0].conv2d(&x[1])),
        ),
        case(
            "relu",
            |r| vec![avoiding(r, &[3, 4], &[0.0])],
            |x| t(x[0].relu()),
        ),
        case(
            "leaky_relu",
            |r| vec![avoiding(r, &[3, 4], &[0.0])],
            |x| t(x[0].leaky_relu(0.2)),
        ),
        case("tanh", smooth(&[3, 4]), |x| t(x[0].tanh())),
        case("sigmoid", smooth(&[3, 4]), |x| t(x[0].sigmoid())),
        case(
            "log",
            |r| vec![uniform(r, &[3, 4], 0.1, 2.0)],
            |x| t(x[0].log()),
        ),
        case("exp", smooth(&[3, 4]), |x| t(x[0].exp())),
        case("sin", smooth(&[3, 4]), |x| t(x[0].sin())),
        case("cos", smooth(&[3, 4]), |x| t(x[0].cos())),
        case(
            "clamp",
            |r| vec![avoiding(r, &[3, 4], &[-0.5, 1.0])],
            |x| t(x[0].clamp(-0.5, 1.0)),
        ),
        case("sum", smooth(&[3, 4]), |x| t(x[0].sum())),
        case("mean", smooth(&[3, 4]), |x| t(x[0].mean())),
        case("sum_to", smooth(&[2, 3, 4]), |x| t(x[0].sum_to(&[3, 1]))),
        case("broadcast_to", smooth(&[3, 1]), |x| {
            t(x[0].broadcast_to(&[2, 3, 4]))
        }),
        case("reshape", smooth(&[3, 4]), |x| t(x[0].reshape(&[2, 6]))),
        case(
            "concat",
            |r| vec![avoiding(r, &[2, 3], &[]), avoiding(r, &[2, 2], &[])],
            |x| t(Tensor::concat(&[&x[0], &x[1]], 1)),
        ),
        case("slice", smooth(&[3, 5]), |x| t(x[0].slice(1, 1, 4))),
        case(
            "dropout",
            |r| {
                let mask = uniform(r, &[3, 4], 0.0, 1.0).map(|u| if u < 0.2 { 0.0 } else { 1.25 });
                vec![avoiding(r, &[3, 4], &[]), mask]
            },
            |x| t(x[0].dropout(x[1].value())),
        )
        .data_after(1),
        case("softmax", smooth(&[3, 4]), |x| t(x[0].softmax())),
        case(
            "softmax_cross_entropy",
            |r| {
                let labels = (0..4).map(|_| r.gen_range(0..3) as f64).collect();
                vec![avoiding(r, &[4, 3], &[]), Array::from_vec(labels)]
            },
            |x| {
                let labels: Vec<usize> = x[1].data().iter().map(|v| *v as usize).collect();
                t(x[0].softmax_cross_entropy(&labels))
            },
        )
        .data_after(1),
    ]
}

fn r_sign(v: f64) -> bool {
    // Deterministic sign from the sample's low mantissa bits.
    v.to_bits() & 1 == 0
}

/// Affine matrices near identity whose sample points stay clear of pixel boundaries.
fn safe_affine(rng: &mut ExpRng, n: usize, h: usize, w: usize) -> Array {
    loop {
        let mut data = Vec::with_capacity(n * 6);
        for _ in 0..n {
            let d: Vec<f64> = rng::uniform_vec(rng, 6, -0.2, 0.2);
            data.extend_from_slice(&[1.0 + d[0], d[1], d[2], d[3], 1.0 + d[4], d[5]]);
        }
        let mats = Array::new(vec![n, 6], data).expect("sized");
        if sample_points_clear(&mats, h, w) {
            return mats;
        }
    }
}

fn sample_points_clear(mats: &Array, h: usize, w: usize) -> bool {
    let g = match vision::affine_grid(&Tensor::constant(mats.clone()), h, w) {
        Ok(g) => g,
        Err(_) => return false,
    };
    g.data().chunks(2).all(|xy| {
        let px = (xy[0] + 1.0) * 0.5 * (w - 1) as f64;
        let py = (xy[1] + 1.0) * 0.5 * (h - 1) as f64;
        let clear = |p: f64| (p - p.round()).abs() > 1e-3;
        clear(px) && clear(py)
    })
}

fn color_params(rng: &mut ExpRng, n: usize) -> Array {
    let mut data = Vec::with_capacity(n * 4);
    for _ in 0..n {
        data.push(rng.gen_range(-0.1..0.1));
        data.push(rng.gen_range(0.0..0.3));
        data.push(rng.gen_range(-0.3..0.3));
        data.push(rng.gen_range(0.0..0.1));
    }
    Array::new(vec![n, 4], data).expect("sized")
}

/// True when no pixel of the unclamped color output leaves [0, 1].
fn unsaturated(img: &Array, params: &Array) -> bool {
    let Ok(img) = ImageBatch::from_array(img.clone()) else {
        return false;
    };
    match vision::apply_color_unclamped(&img, &Tensor::constant(params.clone())) {
        Ok(out) => out
            .tensor()
            .data()
            .iter()
            .all(|v| *v > 1e-3 && *v < 1.0 - 1e-3),
        Err(_) => false,
    }
}

fn image_arg(x: &Tensor) -> Result<ImageBatch, VisionError> {
    ImageBatch::new(x.clone())
}

fn vision_cases() -> Vec<OpCase> {
    vec![
        case(
            "affine_grid",
            |r| vec![uniform(r, &[2, 6], -1.0, 1.0)],
            |x| vision::affine_grid(&x[0], 4, 5),
        ),
        case(
            "grid_sample_bilinear",
            |r| {
                let img = uniform(r, &[2, 1, 5, 6], 0.0, 1.0);
                let mats = safe_affine(r, 2, 5, 6);
                let grid = vision::affine_grid(&Tensor::constant(mats), 5, 6).expect("valid");
                vec![img, grid.value().clone()]
            },
            |x| Ok(vision::grid_sample_bilinear(&image_arg(&x[0])?, &x[1])?.into_tensor()),
        ),
        case(
            "apply_affine",
            |r| vec![uniform(r, &[2, 3, 5, 5], 0.0, 1.0), safe_affine(r, 2, 5, 5)],
            |x| Ok(vision::apply_affine(&image_arg(&x[0])?, &x[1])?.into_tensor()),
        ),
        case(
            "apply_color",
            |r| loop {
                let img = uniform(r, &[2, 3, 4, 4], 0.3, 0.7);
                let p = color_params(r, 2);
                if unsaturated(&img, &p) {
                    break vec![img, p];
                }
            },
            |x| Ok(vision::apply_color(&image_arg(&x[0])?, &x[1])?.into_tensor()),
        ),
        case(
            "apply_augment",
            |r| loop {
                let img = uniform(r, &[2, 3, 5, 5], 0.3, 0.7);
                let p = color_params(r, 2);
                if unsaturated(&img, &p) {
                    break vec![img, safe_affine(r, 2, 5, 5), p];
                }
            },
            |x| {
                Ok(vision::apply_augment(
                    &image_arg(&x[0])?,
                    Some(&x[1]),
                    Some(&x[2]),
                    TransformSet::BOTH,
                )?
                .into_tensor())
            },
        ),
    ]
}

fn run_cases(cases: Vec<OpCase>, n: usize, seed: u64) -> Vec<CheckReport> {
    let mut rng = rng::derive(seed, 0x6772_6164);
    cases
        .into_iter()
        .map(|c| {
            let mut worst: f64 = 0.0;
            let mut error = None;
            for _ in 0..n {
                let inputs = (c.gen)(&mut rng);
                match check_op(
                    &inputs,
                    c.differentiable.min(inputs.len()),
                    c.op.as_ref(),
                    &mut rng,
                ) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            CheckReport::new(c.name, n, worst, FIRST_ORDER_TOL, error)
        })
        .collect()
}

/// First-order checks over every tensor primitive.
pub fn primitive_suite(cases: usize, seed: u64) -> Vec<CheckReport> {
    run_cases(primitive_cases(), cases, seed)
}

/// First-order checks over every image transform, gradients to image and parameters.
pub fn vision_suite(cases: usize, seed: u64) -> Vec<CheckReport> {
    run_cases(vision_cases(), cases, seed)
}

/// Double-backward checks on composed twice-differentiable scalars.
pub fn second_order_suite(cases: usize, seed: u64) -> Vec<CheckReport> {
    type F = Box<dyn Fn(&Tensor) -> Result<Tensor, VisionError>>;
    let mut rng = rng::derive(seed, 0x6865_7373);
    let w1 = Tensor::constant(uniform(&mut rng, &[4, 3], -1.0, 1.0));
    let kern = Tensor::constant(uniform(&mut rng, &[2, 1, 3, 3], -1.0, 1.0));
    let img = Tensor::constant(uniform(&mut rng, &[1, 3, 4, 4], 0.3, 0.7));
    let gray = Tensor::constant(uniform(&mut rng, &[1, 1, 4, 4], 0.0, 1.0));
    let probe = Tensor::constant(uniform(&mut rng, &[1, 3, 4, 4], -1.0, 1.0));

    let families: Vec<(&'static str, Box<dyn Fn(&mut ExpRng) -> Array>, F)> = vec![
        (
            "mlp_tanh_sigmoid",
            Box::new(|r| avoiding(r, &[2, 4], &[])),
            Box::new(move |x| {
                Ok(x.matmul(&w1)?
                    .tanh()?
                    .sigmoid()?
                    .mul(&x.slice(1, 0, 3)?)?
                    .sum()?)
            }),
        ),
        (
            "softmax_cross_entropy",
            Box::new(|r| avoiding(r, &[3, 4], &[])),
            Box::new(|x| Ok(x.exp()?.sin()?.softmax_cross_entropy(&[0, 2, 3])?)),
        ),
        (
            "conv2d_leaky",
            Box::new(|r| avoiding(r, &[1, 1, 4, 4], &[])),
            Box::new(move |x| Ok(x.mul(&x)?.conv2d(&kern)?.tanh()?.mean()?)),
        ),
        (
            "grid_sample_wrt_affine",
            Box::new(|r| safe_affine(r, 1, 4, 4)),
            Box::new(move |m| {
                let out = vision::apply_affine(&ImageBatch::new(gray.clone())?, m)?;
                Ok(out.tensor().mul(out.tensor())?.sum()?)
            }),
        ),
        (
            "color_wrt_params",
            Box::new(|r| color_params(r, 1)),
            Box::new(move |p| {
                let out = vision::apply_color_unclamped(&ImageBatch::new(img.clone())?, p)?;
                Ok(out.tensor().mul(&probe)?.sum()?.tanh()?)
            }),
        ),
    ];

    families
        .into_iter()
        .map(|(name, gen, f)| {
            let mut worst: f64 = 0.0;
            let mut error = None;
            for _ in 0..cases {
                let x = gen(&mut rng);
                match check_hvp(&x, f.as_ref(), &mut rng) {
                    Ok(e) => worst = worst.max(e),
                    Err(e) => {
                        error = Some(e.to_string());
                        break;
                    }
                }
            }
            CheckReport::new(name, cases, worst, SECOND_ORDER_TOL, error)
        })
        .collect()
}

/// Everything above at the default case count.
pub fn full_suite(seed: u64) -> Vec<CheckReport> {
    let mut all = primitive_suite(CASES_PER_OP, seed);
    all.extend(vision_suite(CASES_PER_OP, seed));
    all.extend(second_order_suite(20, seed));
    all
}
