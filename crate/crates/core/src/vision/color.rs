//! Differentiable color operators on (N, 3, H, W) batches.
//!
//! Per-image parameters come as an (N, 4) tensor with columns
//! `[hue, saturation, contrast, brightness]`; all zeros is the identity.
//! Ops run in the order hue, saturation, contrast, brightness, then clamp to [0, 1].

use super::types::{ColorParams, ImageBatch, Result, VisionError};
use crate::tensor::Tensor;

const RGB_TO_YIQ: [[f64; 3]; 3] = [
    [0.299, 0.587, 0.114],
    [0.596, -0.274, -0.322],
    [0.211, -0.523, 0.312],
];

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (r0, r1) = ((j + 1) % 3, (j + 2) % 3);
            let (c0, c1) = ((i + 1) % 3, (i + 2) % 3);
            *v = (m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]) / det;
        }
    }
    inv
}

fn channels(img: &Tensor) -> Result<[Tensor; 3]> {
    Ok([
        img.slice(1, 0, 1)?,
        img.slice(1, 1, 2)?,
        img.slice(1, 2, 3)?,
    ])
}

fn mix(ch: &[Tensor; 3], row: &[f64; 3]) -> Result<Tensor> {
    Ok(ch[0]
        .scale(row[0])?
        .add(&ch[1].scale(row[1])?)?
        .add(&ch[2].scale(row[2])?)?)
}

/// Per-pixel luma, shape (N, 1, H, W).
fn luma(img: &Tensor) -> Result<Tensor> {
    mix(&channels(img)?, &RGB_TO_YIQ[0])
}

fn require_color(img: &ImageBatch) -> Result<()> {
    if img.channels() != 3 {
        return Err(VisionError::NotColor(img.channels()));
    }
    Ok(())
}

/// Rotates the I/Q chroma plane by `2*pi*hue`; `hue` is (N, 1, 1, 1). No clamping.
pub fn rotate_hue(img: &ImageBatch, hue: &Tensor) -> Result<ImageBatch> {
    require_color(img)?;
    let rgb = channels(img.tensor())?;
    let y = mix(&rgb, &RGB_TO_YIQ[0])?;
    let i = mix(&rgb, &RGB_TO_YIQ[1])?;
    let q = mix(&rgb, &RGB_TO_YIQ[2])?;
    let angle = hue.scale(2.0 * std::f64::consts::PI)?;
    let (c, s) = (angle.cos()?, angle.sin()?);
    let i2 = i.mul(&c)?.sub(&q.mul(&s)?)?;
    let q2 = i.mul(&s)?.add(&q.mul(&c)?)?;
    let inv = invert3(&RGB_TO_YIQ);
    let yiq = [y, i2, q2];
    let out = [
        mix(&yiq, &inv[0])?,
        mix(&yiq, &inv[1])?,
        mix(&yiq, &inv[2])?,
    ];
    ImageBatch::new(Tensor::concat(&[&out[0], &out[1], &out[2]], 1)?)
}

fn column(params: &Tensor, k: usize) -> Result<Tensor> {
    let n = params.shape()[0];
    Ok(params.slice(1, k, k + 1)?.reshape(&[n, 1, 1, 1])?)
}

/// The four color ops without the final clamp.
pub fn apply_color_unclamped(img: &ImageBatch, params: &Tensor) -> Result<ImageBatch> {
    require_color(img)?;
    let s = params.shape();
    if s.len() != 2 || s[1] != 4 || s[0] != img.batch() {
        return Err(VisionError::Shape(format!(
            "color parameters must be (N={}, 4), got {:?}",
            img.batch(),
            s
        )));
    }
    let n = img.batch();
    let hw = (img.height() * img.width()) as f64;

    let x = rotate_hue(img, &column(params, 0)?)?.into_tensor();

    let gray = luma(&x)?;
    let sat = column(params, 1)?.add_scalar(1.0)?;
    let x = gray.add(&x.sub(&gray)?.mul(&sat)?)?;

    let mean = luma(&x)?.sum_to(&[n, 1, 1, 1])?.scale(1.0 / hw)?;
    let con = column(params, 2)?.add_scalar(1.0)?;
    let x = mean.add(&x.sub(&mean)?.mul(&con)?)?;

    let x = x.add(&column(params, 3)?)?;
    ImageBatch::new(x)
}

/// Applies hue, saturation, contrast and brightness, then clamps to [0, 1].
pub fn apply_color(img: &ImageBatch, params: &Tensor) -> Result<ImageBatch> {
    let x = apply_color_unclamped(img, params)?;
    ImageBatch::new(x.tensor().clamp(0.0, 1.0)?)
}

/// Convenience form applying the same [`ColorParams`] to every image.
pub fn apply_color_params(img: &ImageBatch, p: &ColorParams) -> Result<ImageBatch> {
    let row = p.to_tensor();
    let params = row.broadcast_to(&[img.batch(), 4])?;
    apply_color(img, &params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Array;

    fn image(n: usize, h: usize, w: usize, seed: u64) -> ImageBatch {
        let mut state = seed;
        let data = (0..n * 3 * h * w)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                0.2 + 0.6 * ((state >> 11) as f64 / (1u64 << 53) as f64)
            })
            .collect();
        ImageBatch::from_array(Array::new(vec![n, 3, h, w], data).unwrap()).unwrap()
    }

    #[test]
    fn yiq_inverse_is_inverse() {
        let inv = invert3(&RGB_TO_YIQ);
        for i in 0..3 {
            for j in 0..3 {
                let v: f64 = (0..3).map(|k| inv[i][k] * RGB_TO_YIQ[k][j]).sum();
                assert!((v - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn zero_params_are_identity() {
        let img = image(2, 4, 5, 3);
        let out = apply_color_params(&img, &ColorParams::identity()).unwrap();
        assert!(out.tensor().value().max_abs_diff(img.tensor().value()) < 1e-12);
    }

    #[test]
    fn brightness_is_additive() {
        let img = ImageBatch::from_array(Array::full(&[1, 3, 2, 2], 0.25)).unwrap();
        let p = ColorParams::new(0.0, 0.0, 0.0, 0.5).unwrap();
        let out = apply_color_params(&img, &p).unwrap();
        assert!(out.tensor().data().iter().all(|v| (v - 0.75).abs() < 1e-12));
    }

    #[test]
    fn hue_round_trip() {
        let img = image(1, 3, 3, 11);
        let h = Tensor::constant(Array::full(&[1, 1, 1, 1], 0.17));
        let back = rotate_hue(&rotate_hue(&img, &h).unwrap(), &h.neg().unwrap()).unwrap();
        assert!(back.tensor().value().max_abs_diff(img.tensor().value()) < 1e-10);
    }

    #[test]
    fn gray_is_hue_invariant() {
        let img = ImageBatch::from_array(Array::full(&[1, 3, 2, 2], 0.4)).unwrap();
        let h = Tensor::constant(Array::full(&[1, 1, 1, 1], 0.3));
        let out = rotate_hue(&img, &h).unwrap();
        assert!(out.tensor().value().max_abs_diff(img.tensor().value()) < 1e-12);
    }

    #[test]
    fn rejects_gray_images() {
        let img = ImageBatch::from_array(Array::zeros(&[1, 1, 2, 2])).unwrap();
        assert!(matches!(
            apply_color_params(&img, &ColorParams::identity()),
            Err(VisionError::NotColor(1))
        ));
    }
}
