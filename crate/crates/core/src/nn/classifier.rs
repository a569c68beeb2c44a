use serde::{Deserialize, Serialize};

use super::params::ParamSet;
use super::{NnError, Result};
use crate::tensor::Tensor;
use crate::vision::ImageBatch;

const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierArch {
    /// Fully connected on flattened pixels.
    Mlp { hidden: Vec<usize> },
    /// Two 3x3 conv layers, global average pool, linear head.
    SmallCnn { channels: [usize; 2] },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub arch: ClassifierArch,
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
}

impl ClassifierSpec {
    pub fn input_dim(&self) -> usize {
        self.in_channels * self.height * self.width
    }

    pub fn param_count(&self) -> usize {
        match &self.arch {
            ClassifierArch::Mlp { hidden } => {
                let mut widths = vec![self.input_dim()];
                widths.extend(hidden);
                widths.push(self.num_classes);
                widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
            }
            ClassifierArch::SmallCnn { channels } => {
                let [c1, c2] = *channels;
                c1 * self.in_channels * 9
                    + c1
                    + c2 * c1 * 9
                    + c2
                    + c2 * self.num_classes
                    + self.num_classes
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(NnError::Spec("need at least two classes".into()));
        }
        if self.in_channels == 0 || self.height == 0 || self.width == 0 {
            return Err(NnError::Spec("image dimensions must be positive".into()));
        }
        match &self.arch {
            ClassifierArch::Mlp { hidden } if hidden.contains(&0) => {
                Err(NnError::Spec("zero-width hidden layer".into()))
            }
            ClassifierArch::SmallCnn { channels } if channels.contains(&0) => {
                Err(NnError::Spec("zero conv channels".into()))
            }
            _ => Ok(()),
        }
    }
}

fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    Ok(x.matmul(w)?.add(b)?)
}

/// Logits (N, num_classes), differentiable in both weights and pixels.
pub fn classifier_forward(
    spec: &ClassifierSpec,
    img: &ImageBatch,
    params: &ParamSet,
) -> Result<Tensor> {
    if img.channels() != spec.in_channels
        || img.height() != spec.height
        || img.width() != spec.width
    {
        return Err(NnError::Shape(format!(
            "classifier expects {}x{}x{} images, got {}x{}x{}",
            spec.in_channels,
            spec.height,
            spec.width,
            img.channels(),
            img.height(),
            img.width()
        )));
    }
    let n = img.batch();
    match &spec.arch {
        ClassifierArch::Mlp { hidden } => {
            let layers = hidden.len() + 1;
            if params.len() != 2 * layers {
                return Err(NnError::Shape(format!(
                    "mlp expects {} tensors, got {}",
                    2 * layers,
                    params.len()
                )));
            }
            let mut h = img.tensor().reshape(&[n, spec.input_dim()])?;
            for l in 0..layers {
                h = linear(&h, params.get(2 * l), params.get(2 * l + 1))?;
                if l + 1 < layers {
                    h = h.leaky_relu(LEAKY_SLOPE)?;
                }
            }
            Ok(h)
        }
        ClassifierArch::SmallCnn { channels } => {
            if params.len() != 6 {
                return Err(NnError::Shape(format!(
                    "small cnn expects 6 tensors, got {}",
                    params.len()
                )));
            }
            let mut h = img.tensor().clone();
            for l in 0..2 {
                h = h
                    .conv2d(params.get(2 * l))?
                    .add(params.get(2 * l + 1))?
                    .leaky_relu(LEAKY_SLOPE)?;
            }
            let c = channels[1];
            let hw = (spec.height * spec.width) as f64;
            let pooled = h.sum_to(&[n, c, 1, 1])?.scale(1.0 / hw)?.reshape(&[n, c])?;
            linear(&pooled, params.get(4), params.get(5))
        }
    }
}
