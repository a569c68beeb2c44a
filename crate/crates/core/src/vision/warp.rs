//! Affine grid generation and bilinear sampling.
//!
//! Coordinates are corner-aligned: normalized `-1` and `+1` land exactly on
//! the centers of the first and last pixels, so pixel `p = (c + 1) / 2 * (size - 1)`.
//! Samples that fall outside the image read zeros.

use std::rc::Rc;

use super::types::{ImageBatch, Result, VisionError};
use crate::tensor::{Array, Tensor};

fn normalized_axis(n: usize) -> impl Iterator<Item = f64> {
    let denom = (n - 1) as f64;
    (0..n).map(move |k| 2.0 * k as f64 / denom - 1.0)
}

/// Base coordinates as (1, H*W) rows: x, y.
fn base_rows(height: usize, width: usize) -> (Tensor, Tensor) {
    let xs: Vec<f64> = normalized_axis(width).collect();
    let ys: Vec<f64> = normalized_axis(height).collect();
    let mut x = Vec::with_capacity(height * width);
    let mut y = Vec::with_capacity(height * width);
    for &yv in &ys {
        for &xv in &xs {
            x.push(xv);
            y.push(yv);
        }
    }
    let n = height * width;
    (
        Tensor::constant(Array::new(vec![1, n], x).expect("sized")),
        Tensor::constant(Array::new(vec![1, n], y).expect("sized")),
    )
}

/// Per-image transformed coordinates, each (N, H*W).
pub(crate) fn affine_coords(
    mats: &Tensor,
    height: usize,
    width: usize,
) -> Result<(Tensor, Tensor)> {
    if height < 2 || width < 2 {
        return Err(VisionError::DegenerateSize { height, width });
    }
    let s = mats.shape();
    if s.len() != 2 || s[1] != 6 {
        return Err(VisionError::Shape(format!(
            "affine parameters must be (N, 6), got {:?}",
            s
        )));
    }
    let (bx, by) = base_rows(height, width);
    let col = |k: usize| mats.slice(1, k, k + 1);
    let gx = col(0)?.mul(&bx)?.add(&col(1)?.mul(&by)?)?.add(&col(2)?)?;
    let gy = col(3)?.mul(&bx)?.add(&col(4)?.mul(&by)?)?.add(&col(5)?)?;
    Ok((gx, gy))
}

/// Sampling grid of shape (N, H, W, 2) for a batch of (N, 6) affine matrices.
/// `grid[n, i, j] = M_n . (x_j, y_i, 1)`, differentiable with respect to `mats`.
pub fn affine_grid(mats: &Tensor, height: usize, width: usize) -> Result<Tensor> {
    let (gx, gy) = affine_coords(mats, height, width)?;
    let n = mats.shape()[0];
    let hw = height * width;
    let grid = Tensor::concat(&[&gx.reshape(&[n, hw, 1])?, &gy.reshape(&[n, hw, 1])?], 2)?;
    Ok(grid.reshape(&[n, height, width, 2])?)
}

/// Bilinear sampling of `img` at the normalized locations in `grid` (N, Ho, Wo, 2).
/// Gradients flow to both the image and the grid.
pub fn grid_sample_bilinear(img: &ImageBatch, grid: &Tensor) -> Result<ImageBatch> {
    let s = grid.shape();
    if s.len() != 4 || s[3] != 2 || s[0] != img.batch() {
        return Err(VisionError::Shape(format!(
            "grid must be (N={}, H, W, 2), got {:?}",
            img.batch(),
            s
        )));
    }
    if s[1] != img.height() || s[2] != img.width() {
        return Err(VisionError::Shape(format!(
            "grid spatial size {}x{} does not match image {}x{}",
            s[1],
            s[2],
            img.height(),
            img.width()
        )));
    }
    let (n, ho, wo) = (s[0], s[1], s[2]);
    let gx = grid.slice(3, 0, 1)?.reshape(&[n, ho * wo])?;
    let gy = grid.slice(3, 1, 2)?.reshape(&[n, ho * wo])?;
    sample_coords(img, &gx, &gy, ho, wo)
}

/// Core sampler over separate (N, Ho*Wo) normalized coordinate tensors.
pub(crate) fn sample_coords(
    img: &ImageBatch,
    gx: &Tensor,
    gy: &Tensor,
    ho: usize,
    wo: usize,
) -> Result<ImageBatch> {
    let (h, w) = (img.height(), img.width());
    let px = gx.add_scalar(1.0)?.scale(0.5 * (w - 1) as f64)?;
    let py = gy.add_scalar(1.0)?.scale(0.5 * (h - 1) as f64)?;
    sample_pixels(img, &px, &py, ho, wo)
}

/// Pixel-space sampling coordinates for an (N, 6) affine batch, each (N, H*W).
///
/// Written as the output pixel index plus an offset driven by `mats - I`, so an
/// exact identity matrix lands exactly on pixel centers and reproduces the
/// input bit for bit.
pub(crate) fn affine_pixel_coords(
    mats: &Tensor,
    height: usize,
    width: usize,
) -> Result<(Tensor, Tensor)> {
    if height < 2 || width < 2 {
        return Err(VisionError::DegenerateSize { height, width });
    }
    let s = mats.shape();
    if s.len() != 2 || s[1] != 6 {
        return Err(VisionError::Shape(format!(
            "affine parameters must be (N, 6), got {:?}",
            s
        )));
    }
    let ident = Tensor::constant(Array::new(vec![1, 6], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0])?);
    let delta = mats.sub(&ident)?;
    let (bx, by) = base_rows(height, width);
    let n = height * width;
    let cols: Vec<f64> = (0..n).map(|k| (k % width) as f64).collect();
    let rows: Vec<f64> = (0..n).map(|k| (k / width) as f64).collect();
    let cols = Tensor::constant(Array::new(vec![1, n], cols)?);
    let rows = Tensor::constant(Array::new(vec![1, n], rows)?);
    let d = |k: usize| delta.slice(1, k, k + 1);
    let ox = d(0)?.mul(&bx)?.add(&d(1)?.mul(&by)?)?.add(&d(2)?)?;
    let oy = d(3)?.mul(&bx)?.add(&d(4)?.mul(&by)?)?.add(&d(5)?)?;
    let px = ox.scale(0.5 * (width - 1) as f64)?.add(&cols)?;
    let py = oy.scale(0.5 * (height - 1) as f64)?.add(&rows)?;
    Ok((px, py))
}

/// Bilinear gather at pixel coordinates (N, Ho*Wo); outside reads zero.
pub(crate) fn sample_pixels(
    img: &ImageBatch,
    px: &Tensor,
    py: &Tensor,
    ho: usize,
    wo: usize,
) -> Result<ImageBatch> {
    let (n, c, h, w) = (img.batch(), img.channels(), img.height(), img.width());
    let x0: Vec<f64> = px.data().iter().map(|v| v.floor()).collect();
    let y0: Vec<f64> = py.data().iter().map(|v| v.floor()).collect();
    let floor_x = Tensor::constant(Array::new(px.shape().to_vec(), x0.clone())?);
    let floor_y = Tensor::constant(Array::new(py.shape().to_vec(), y0.clone())?);
    let fx = px.sub(&floor_x)?.reshape(&[n, 1, ho, wo])?;
    let fy = py.sub(&floor_y)?.reshape(&[n, 1, ho, wo])?;
    let one_minus = |t: &Tensor| t.neg().and_then(|v| v.add_scalar(1.0));
    let wx = [one_minus(&fx)?, fx.clone()];
    let wy = [one_minus(&fy)?, fy.clone()];

    let out_shape = [n, c, ho, wo];
    let mut out: Option<Tensor> = None;
    for dy in 0..2 {
        for dx in 0..2 {
            let mut idx: Vec<Option<usize>> = Vec::with_capacity(n * c * ho * wo);
            for b in 0..n {
                for ch in 0..c {
                    for p in 0..ho * wo {
                        let xi = x0[b * ho * wo + p] + dx as f64;
                        let yi = y0[b * ho * wo + p] + dy as f64;
                        let inside = xi >= 0.0 && yi >= 0.0 && xi < w as f64 && yi < h as f64;
                        idx.push(
                            inside.then(|| ((b * c + ch) * h + yi as usize) * w + xi as usize),
                        );
                    }
                }
            }
            let idx: Rc<[Option<usize>]> = idx.into();
            let corner = img.tensor().gather(idx, &out_shape)?;
            let term = corner.mul(&wx[dx].mul(&wy[dy])?)?;
            out = Some(match out {
                None => term,
                Some(acc) => acc.add(&term)?,
            });
        }
    }
    ImageBatch::new(out.expect("four corners"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{backward, finite_diff_gradient, Tape};
    use crate::vision::AffineMatrix;

    fn ramp(h: usize, w: usize) -> Array {
        let data = (0..h * w)
            .map(|k| (k % w) as f64 / (w - 1) as f64)
            .collect();
        Array::new(vec![1, 1, h, w], data).unwrap()
    }

    #[test]
    fn identity_grid_corners() {
        let g = affine_grid(&AffineMatrix::identity().to_tensor(), 3, 3).unwrap();
        assert_eq!(g.shape(), &[1, 3, 3, 2]);
        let d = g.data();
        assert_eq!(&d[0..2], &[-1.0, -1.0]);
        assert_eq!(&d[16..18], &[1.0, 1.0]);
        assert_eq!(&d[8..10], &[0.0, 0.0]);
    }

    #[test]
    fn translation_shifts_x() {
        let id = affine_grid(&AffineMatrix::identity().to_tensor(), 4, 5).unwrap();
        let tr = affine_grid(&AffineMatrix::translation(0.5, 0.0).to_tensor(), 4, 5).unwrap();
        for (k, (a, b)) in id.data().iter().zip(tr.data()).enumerate() {
            let want = if k % 2 == 0 { a + 0.5 } else { *a };
            assert!((b - want).abs() < 1e-15);
        }
    }

    #[test]
    fn grid_sum_gradient_wrt_tx() {
        let tape = Tape::new();
        let m = tape.param(AffineMatrix::identity().to_tensor().value().clone());
        let loss = affine_grid(&m, 4, 4).unwrap().sum().unwrap();
        let g = backward(&loss, &[&m], false).unwrap();
        let g = g.get(&m).unwrap();
        assert!((g.data()[2] - 16.0).abs() < 1e-12);
        let fd = finite_diff_gradient(
            |a| {
                Ok::<_, VisionError>(
                    affine_grid(&Tensor::constant(a.clone()), 4, 4)?
                        .sum()?
                        .item(),
                )
            },
            m.value(),
            1e-5,
        )
        .unwrap();
        assert!((fd.data()[2] - 16.0).abs() < 1e-6);
    }

    #[test]
    fn degenerate_sizes_rejected() {
        let m = AffineMatrix::identity().to_tensor();
        assert!(matches!(
            affine_grid(&m, 1, 5),
            Err(VisionError::DegenerateSize { .. })
        ));
    }

    #[test]
    fn identity_sampling_reproduces_input() {
        let img = ImageBatch::from_array(ramp(6, 7)).unwrap();
        let g = affine_grid(&AffineMatrix::identity().to_tensor(), 6, 7).unwrap();
        let out = grid_sample_bilinear(&img, &g).unwrap();
        assert!(out.tensor().value().max_abs_diff(img.tensor().value()) < 1e-12);
    }

    #[test]
    fn one_pixel_translation_shifts_ramp() {
        let (h, w) = (4, 6);
        let img = ImageBatch::from_array(ramp(h, w)).unwrap();
        let tx = 2.0 / (w - 1) as f64;
        let g = affine_grid(&AffineMatrix::translation(tx, 0.0).to_tensor(), h, w).unwrap();
        let out = grid_sample_bilinear(&img, &g).unwrap();
        // Index-arithmetic oracle: out[i, j] = in[i, j + 1], zero past the edge.
        for i in 0..h {
            for j in 0..w {
                let want = if j + 1 < w {
                    img.tensor().data()[i * w + j + 1]
                } else {
                    0.0
                };
                assert!((out.tensor().data()[i * w + j] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn shape_mismatch_rejected() {
        let img = ImageBatch::from_array(ramp(4, 4)).unwrap();
        let g = affine_grid(&AffineMatrix::identity().to_tensor(), 5, 4).unwrap();
        assert!(grid_sample_bilinear(&img, &g).is_err());
    }
}
