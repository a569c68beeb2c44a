//! Differentiable image transformations: affine warping through grid
//! generation and bilinear sampling, and hue/saturation/contrast/brightness.

mod augment;
mod color;
mod types;
mod warp;

pub use augment::{
    apply_affine, apply_augment, flip_with_mask, random_flip, FlipAxis, TransformSet,
};
pub use color::{apply_color, apply_color_params, apply_color_unclamped, rotate_hue};
pub use types::{
    AffineMatrix, ColorParams, ImageBatch, Result, VisionError, BRIGHTNESS_RANGE, CONTRAST_RANGE,
    HUE_RANGE, SATURATION_RANGE,
};
pub use warp::{affine_grid, grid_sample_bilinear};
