use rand::Rng;

use super::augmenter::AugmenterSpec;
use super::classifier::{ClassifierArch, ClassifierSpec};
use super::params::ParamSet;
use crate::tensor::{Array, Tensor};

/// Glorot uniform half-width.
pub fn glorot_limit(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn uniform<R: Rng + ?Sized>(shape: &[usize], limit: f64, rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-limit..=limit)).collect();
    Tensor::constant(Array::new(shape.to_vec(), data).expect("sized"))
}

fn zeros(shape: &[usize]) -> Tensor {
    Tensor::constant(Array::zeros(shape))
}

/// Hidden layers Glorot uniform; the output layer is all zeros so a fresh
/// augmenter emits the identity transformation.
pub fn init_augmenter<R: Rng + ?Sized>(spec: &AugmenterSpec, rng: &mut R) -> ParamSet {
    let widths = spec.widths();
    let layers = widths.len() - 1;
    let mut ps = ParamSet::new();
    for l in 0..layers {
        let (fi, fo) = (widths[l], widths[l + 1]);
        let w = if l + 1 == layers {
            zeros(&[fi, fo])
        } else {
            uniform(&[fi, fo], glorot_limit(fi, fo), rng)
        };
        ps.push(format!("augmenter.{l}.weight"), w);
        ps.push(format!("augmenter.{l}.bias"), zeros(&[1, fo]));
    }
    ps
}

pub fn init_classifier<R: Rng + ?Sized>(spec: &ClassifierSpec, rng: &mut R) -> ParamSet {
    let mut ps = ParamSet::new();
    match &spec.arch {
        ClassifierArch::Mlp { hidden } => {
            let mut widths = vec![spec.input_dim()];
            widths.extend(hidden);
            widths.push(spec.num_classes);
            for (l, w) in widths.windows(2).enumerate() {
                ps.push(
                    format!("classifier.{l}.weight"),
                    uniform(&[w[0], w[1]], glorot_limit(w[0], w[1]), rng),
                );
                ps.push(format!("classifier.{l}.bias"), zeros(&[1, w[1]]));
            }
        }
        ClassifierArch::SmallCnn { channels } => {
            let mut cin = spec.in_channels;
            for (l, &cout) in channels.iter().enumerate() {
                let lim = glorot_limit(cin * 9, cout * 9);
                ps.push(
                    format!("classifier.conv{l}.weight"),
                    uniform(&[cout, cin, 3, 3], lim, rng),
                );
                ps.push(format!("classifier.conv{l}.bias"), zeros(&[1, cout, 1, 1]));
                cin = cout;
            }
            let k = spec.num_classes;
            ps.push(
                "classifier.head.weight",
                uniform(&[cin, k], glorot_limit(cin, k), rng),
            );
            ps.push("classifier.head.bias", zeros(&[1, k]));
        }
    }
    ps
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{AugmentKind, AugmenterSize};
    use crate::rng::seeded;

    #[test]
    fn hidden_weights_inside_glorot_range() {
        let spec = AugmenterSpec::new(AugmenterSize::Medium, AugmentKind::Affine);
        let ps = init_augmenter(&spec, &mut seeded(11));
        let widths = spec.widths();
        for (l, w) in widths.windows(2).enumerate() {
            let lim = glorot_limit(w[0], w[1]);
            let vals = ps.get(2 * l).data();
            assert!(vals.iter().all(|v| v.abs() <= lim));
            if l + 2 < widths.len() {
                // Sampled values should spread across most of the range.
                let max = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                assert!(max > 0.9 * lim);
            } else {
                assert!(vals.iter().all(|v| *v == 0.0));
            }
        }
        assert_eq!(ps.numel(), spec.param_count());
    }

    #[test]
    fn same_seed_same_init() {
        let spec = AugmenterSpec::new(AugmenterSize::Small, AugmentKind::Color);
        let a = init_augmenter(&spec, &mut seeded(5));
        let b = init_augmenter(&spec, &mut seeded(5));
        assert!(a.bitwise_eq(&b));
        let c = init_augmenter(&spec, &mut seeded(6));
        assert!(!a.bitwise_eq(&c));
    }
}
