use rand::Rng;
use serde::{Deserialize, Serialize};

use super::color::apply_color;
use super::types::{ImageBatch, Result, VisionError};
use super::warp::{affine_pixel_coords, sample_pixels};
use crate::tensor::{Array, Tensor};

/// Which learned stages are active.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformSet {
    pub affine: bool,
    pub color: bool,
}

impl TransformSet {
    pub const NONE: TransformSet = TransformSet {
        affine: false,
        color: false,
    };
    pub const AFFINE: TransformSet = TransformSet {
        affine: true,
        color: false,
    };
    pub const COLOR: TransformSet = TransformSet {
        affine: false,
        color: true,
    };
    pub const BOTH: TransformSet = TransformSet {
        affine: true,
        color: true,
    };

    pub fn is_empty(&self) -> bool {
        !self.affine && !self.color
    }
}

/// Warps every image by its own (N, 6) affine matrix.
pub fn apply_affine(img: &ImageBatch, mats: &Tensor) -> Result<ImageBatch> {
    let (h, w) = (img.height(), img.width());
    if mats.shape().first() != Some(&img.batch()) {
        return Err(VisionError::Shape(format!(
            "{} affine matrices for {} images",
            mats.shape().first().unwrap_or(&0),
            img.batch()
        )));
    }
    let (px, py) = affine_pixel_coords(mats, h, w)?;
    sample_pixels(img, &px, &py, h, w)
}

/// Color stage first, then the affine warp; disabled stages pass through.
/// Color runs first so zero-padded warp borders do not skew per-image contrast.
pub fn apply_augment(
    img: &ImageBatch,
    affine: Option<&Tensor>,
    color: Option<&Tensor>,
    flags: TransformSet,
) -> Result<ImageBatch> {
    let mut x = img.clone();
    if flags.color {
        let p = color
            .ok_or_else(|| VisionError::Shape("color stage enabled without parameters".into()))?;
        x = apply_color(&x, p)?;
    }
    if flags.affine {
        let m = affine
            .ok_or_else(|| VisionError::Shape("affine stage enabled without parameters".into()))?;
        x = apply_affine(&x, m)?;
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlipAxis {
    Horizontal,
    Vertical,
}

/// Flips the images whose mask entry is set. Operates on values only.
pub fn flip_with_mask(img: &ImageBatch, axis: FlipAxis, mask: &[bool]) -> Result<ImageBatch> {
    if mask.len() != img.batch() {
        return Err(VisionError::Shape(format!(
            "flip mask has {} entries for {} images",
            mask.len(),
            img.batch()
        )));
    }
    let (c, h, w) = (img.channels(), img.height(), img.width());
    let src = img.tensor().data();
    let mut out = src.to_vec();
    let per = c * h * w;
    for (b, &flip) in mask.iter().enumerate() {
        if !flip {
            continue;
        }
        for ch in 0..c {
            let base = b * per + ch * h * w;
            for i in 0..h {
                for j in 0..w {
                    let (si, sj) = match axis {
                        FlipAxis::Horizontal => (i, w - 1 - j),
                        FlipAxis::Vertical => (h - 1 - i, j),
                    };
                    out[base + i * w + j] = src[base + si * w + sj];
                }
            }
        }
    }
    ImageBatch::new(Tensor::constant(Array::new(
        img.tensor().shape().to_vec(),
        out,
    )?))
}

/// Flips each image independently with probability `prob`. Not differentiable.
pub fn random_flip<R: Rng + ?Sized>(
    img: &ImageBatch,
    axis: FlipAxis,
    prob: f64,
    rng: &mut R,
) -> Result<(ImageBatch, Vec<bool>)> {
    let mask: Vec<bool> = (0..img.batch()).map(|_| rng.gen::<f64>() < prob).collect();
    Ok((flip_with_mask(img, axis, &mask)?, mask))
}
