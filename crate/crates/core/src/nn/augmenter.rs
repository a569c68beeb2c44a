use rand::Rng;
use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::{NnError, Result};
use crate::rng::normal_vec;
use crate::tensor::{Array, Tensor};
use crate::vision::TransformSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmenterSize {
    Small,
    Medium,
    Large,
}

/// What the augmenter emits per image.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    /// Two translation offsets; the linear part stays at identity.
    Translation,
    Affine,
    Color,
    AffineColor,
}

impl AugmentKind {
    pub fn n_params(self) -> usize {
        match self {
            AugmentKind::Translation => 2,
            AugmentKind::Affine => 6,
            AugmentKind::Color => 4,
            AugmentKind::AffineColor => 10,
        }
    }

    pub fn transforms(self) -> TransformSet {
        match self {
            AugmentKind::Translation | AugmentKind::Affine => TransformSet::AFFINE,
            AugmentKind::Color => TransformSet::COLOR,
            AugmentKind::AffineColor => TransformSet::BOTH,
        }
    }
}

/// Half-widths of the box around identity that affine outputs can reach,
/// in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub affine_linear: f64,
    pub affine_translation: f64,
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            affine_linear: 0.25,
            affine_translation: 0.30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmenterSpec {
    pub size: AugmenterSize,
    pub kind: AugmentKind,
    #[serde(default = "default_dropout")]
    pub dropout_rate: f64,
    #[serde(default)]
    pub bounds: ParamBounds,
}

fn default_dropout() -> f64 {
    0.2
}

impl AugmenterSpec {
    pub fn new(size: AugmenterSize, kind: AugmentKind) -> Self {
        AugmenterSpec {
            size,
            kind,
            dropout_rate: default_dropout(),
            bounds: ParamBounds::default(),
        }
    }

    pub fn n_params(&self) -> usize {
        self.kind.n_params()
    }

    pub fn noise_dim(&self) -> usize {
        match self.size {
            AugmenterSize::Small => self.n_params(),
            AugmenterSize::Medium | AugmenterSize::Large => 100,
        }
    }

    /// Layer widths from input to output.
    pub fn widths(&self) -> Vec<usize> {
        let n = self.n_params();
        match self.size {
            AugmenterSize::Small => vec![n, n, 10 * n, n],
            AugmenterSize::Medium => vec![100, 64, 32, n],
            AugmenterSize::Large => vec![100, 512, 1024, 1024, 512, n],
        }
    }

    /// Closed-form count of weights plus biases.
    pub fn param_count(&self) -> usize {
        self.widths().windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(NnError::Spec(format!(
                "dropout rate {} not in [0, 1)",
                self.dropout_rate
            )));
        }
        let b = self.bounds;
        if !(b.affine_linear > 0.0 && b.affine_translation > 0.0) {
            return Err(NnError::Spec("affine bounds must be positive".into()));
        }
        Ok(())
    }
}

/// Per-image transformation parameters: affine (N, 6) and color (N, 4),
/// present according to the augmenter kind.
#[derive(Clone, Debug)]
pub struct AugmenterOutput {
    pub affine: Option<Tensor>,
    pub color: Option<Tensor>,
}

impl AugmenterOutput {
    /// Mean absolute deviation of the affine entries from identity.
    pub fn mean_abs_affine_delta(&self) -> f64 {
        let Some(a) = &self.affine else { return 0.0 };
        let ident = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0];
        let d = a.data();
        d.iter()
            .enumerate()
            .map(|(k, v)| (v - ident[k % 6]).abs())
            .sum::<f64>()
            / d.len().max(1) as f64
    }

    pub fn mean_abs_color(&self) -> f64 {
        let Some(c) = &self.color else { return 0.0 };
        let d = c.data();
        d.iter().map(|v| v.abs()).sum::<f64>() / d.len().max(1) as f64
    }
}

/// Standard normal noise of shape (batch, dim).
pub fn sample_noise<R: Rng + ?Sized>(batch: usize, dim: usize, rng: &mut R) -> Tensor {
    let data = normal_vec(rng, batch * dim);
    Tensor::constant(Array::new(vec![batch, dim], data).expect("sized"))
}

fn row(v: Vec<f64>) -> Tensor {
    let n = v.len();
    Tensor::constant(Array::new(vec![1, n], v).expect("sized"))
}

pub fn augmenter_forward<R: Rng + ?Sized>(
    spec: &AugmenterSpec,
    noise: &Tensor,
    params: &ParamSet,
    train_mode: bool,
    rng: &mut R,
) -> Result<AugmenterOutput> {
    let widths = spec.widths();
    let s = noise.shape();
    if s.len() != 2 || s[1] != spec.noise_dim() {
        return Err(NnError::Shape(format!(
            "noise must be (batch, {}), got {:?}",
            spec.noise_dim(),
            s
        )));
    }
    let layers = widths.len() - 1;
    if params.len() != 2 * layers {
        return Err(NnError::Shape(format!(
            "augmenter expects {} parameter tensors, got {}",
            2 * layers,
            params.len()
        )));
    }
    let keep = 1.0 - spec.dropout_rate;
    let mut h = noise.clone();
    for l in 0..layers {
        h = h.matmul(params.get(2 * l))?.add(params.get(2 * l + 1))?;
        if l + 1 < layers {
            h = h.relu()?;
            if train_mode && spec.dropout_rate > 0.0 {
                let mask: Vec<f64> = (0..h.numel())
                    .map(|_| {
                        if rng.gen::<f64>() < keep {
                            1.0 / keep
                        } else {
                            0.0
                        }
                    })
                    .collect();
                h = h.dropout(&Array::new(h.shape().to_vec(), mask)?)?;
            }
        }
    }
    let u = h.tanh()?;

    let (bl, bt) = (spec.bounds.affine_linear, spec.bounds.affine_translation);
    let ident = row(vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    let affine_from = |u6: &Tensor| -> Result<Tensor> {
        Ok(u6.mul(&row(vec![bl, bl, bt, bl, bl, bt]))?.add(&ident)?)
    };
    let color_from = |u4: &Tensor| -> Result<Tensor> {
        Ok(u4
            .mul(&row(vec![0.5, 0.5, 1.0, 0.5]))?
            .add(&row(vec![0.0, 0.5, 0.0, 0.5]))?)
    };
    let out = match spec.kind {
        AugmentKind::Translation => {
            let mut p = vec![0.0; 12];
            p[2] = bt;
            p[6 + 5] = bt;
            let proj = Tensor::constant(Array::new(vec![2, 6], p)?);
            AugmenterOutput {
                affine: Some(u.matmul(&proj)?.add(&ident)?),
                color: None,
            }
        }
        AugmentKind::Affine => AugmenterOutput {
            affine: Some(affine_from(&u)?),
            color: None,
        },
        AugmentKind::Color => AugmenterOutput {
            affine: None,
            color: Some(color_from(&u)?),
        },
        AugmentKind::AffineColor => AugmenterOutput {
            affine: Some(affine_from(&u.slice(1, 0, 6)?)?),
            color: Some(color_from(&u.slice(1, 6, 10)?)?),
        },
    };
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_augmenter;
    use crate::rng::seeded;
    use crate::tensor::Tape;

    #[test]
    fn widths_follow_layer_table() {
        let s = AugmenterSpec::new(AugmenterSize::Small, AugmentKind::Affine);
        assert_eq!(s.widths(), vec![6, 6, 60, 6]);
        assert_eq!(s.param_count(), 6 * 6 + 6 + 6 * 60 + 60 + 60 * 6 + 6);
        let m = AugmenterSpec::new(AugmenterSize::Medium, AugmentKind::AffineColor);
        assert_eq!(m.widths(), vec![100, 64, 32, 10]);
        let l = AugmenterSpec::new(AugmenterSize::Large, AugmentKind::Color);
        assert_eq!(l.widths(), vec![100, 512, 1024, 1024, 512, 4]);
        assert_eq!(AugmentKind::Translation.n_params(), 2);
    }

    #[test]
    fn zero_final_layer_gives_identity_and_midrange_color() {
        let spec = AugmenterSpec::new(AugmenterSize::Small, AugmentKind::AffineColor);
        let mut rng = seeded(3);
        let params = init_augmenter(&spec, &mut rng);
        let noise = sample_noise(5, spec.noise_dim(), &mut rng);
        let out = augmenter_forward(&spec, &noise, &params, true, &mut rng).unwrap();
        let a = out.affine.unwrap();
        for r in 0..5 {
            assert_eq!(&a.data()[r * 6..r * 6 + 6], &[1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        }
        let c = out.color.unwrap();
        for r in 0..5 {
            assert_eq!(&c.data()[r * 4..r * 4 + 4], &[0.0, 0.5, 0.0, 0.5]);
        }
    }

    #[test]
    fn wrong_noise_dim_rejected() {
        let spec = AugmenterSpec::new(AugmenterSize::Medium, AugmentKind::Color);
        let mut rng = seeded(0);
        let params = init_augmenter(&spec, &mut rng);
        let noise = sample_noise(2, 4, &mut rng);
        assert!(matches!(
            augmenter_forward(&spec, &noise, &params, false, &mut rng),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn gradient_reaches_every_parameter_tensor() {
        let spec = AugmenterSpec::new(AugmenterSize::Small, AugmentKind::Affine);
        let mut rng = seeded(1);
        let tape = Tape::new();
        let params = init_augmenter(&spec, &mut rng).to_leaves(&tape);
        let noise = sample_noise(4, 6, &mut rng);
        let out = augmenter_forward(&spec, &noise, &params, false, &mut rng).unwrap();
        let loss = out.affine.unwrap().sum().unwrap();
        let g = crate::tensor::backward(&loss, &params.refs(), false).unwrap();
        // The last layer receives gradient even though it starts at zero.
        let last_w = g.get(params.get(4)).unwrap();
        assert!(last_w.data().iter().any(|v| *v != 0.0));
    }
}
