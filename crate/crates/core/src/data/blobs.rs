use rand::Rng;

use super::task::{Dataset, SampleMeta, SyntheticTaskSpec};
use super::{DataError, Result};
use crate::rng::{derive, normal_vec, ExpRng};
use crate::tensor::{Array, Tensor};
use crate::vision::{apply_color, ImageBatch};

/// Fixed base color of every blob before any hue shift.
const BASE_RGB: [f64; 3] = [0.85, 0.35, 0.1];
const JITTER: i32 = 2;
const MAX_SHAPES: usize = 6;

fn inside(class: usize, y: f64, x: f64) -> bool {
    let r2 = x * x + y * y;
    match class {
        0 => r2 <= 3.5 * 3.5,
        1 => x.abs() <= 3.0 && y.abs() <= 3.0,
        2 => x.abs() <= 5.0 && y.abs() <= 1.0,
        3 => x.abs() <= 1.0 && y.abs() <= 5.0,
        4 => (2.0 * 2.0..=4.2 * 4.2).contains(&r2),
        _ => (x.abs() <= 1.0 && y.abs() <= 4.0) || (y.abs() <= 1.0 && x.abs() <= 4.0),
    }
}

/// Noise-free (3, H, W) blob of `class` centered at the canvas middle plus
/// (dx, dy), painted in the base color on black.
pub fn render_blob(spec: &SyntheticTaskSpec, class: usize, dx: i32, dy: i32) -> Vec<f64> {
    let (h, w) = (spec.height, spec.width);
    let cy = (h as f64 - 1.0) / 2.0 + dy as f64;
    let cx = (w as f64 - 1.0) / 2.0 + dx as f64;
    let mut out = vec![0.0; 3 * h * w];
    for i in 0..h {
        for j in 0..w {
            if inside(class, i as f64 - cy, j as f64 - cx) {
                for (c, v) in BASE_RGB.iter().enumerate() {
                    out[c * h * w + i * w + j] = *v;
                }
            }
        }
    }
    out
}

fn make_split(
    spec: &SyntheticTaskSpec,
    per_class: usize,
    range: f64,
    rng: &mut ExpRng,
) -> Result<Dataset> {
    let k = spec.num_classes;
    let n = per_class * k;
    let per = 3 * spec.height * spec.width;
    let mut data = Vec::with_capacity(n * per);
    let mut labels = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % k;
        let dx = rng.gen_range(-JITTER..=JITTER);
        let dy = rng.gen_range(-JITTER..=JITTER);
        let hue = if range > 0.0 {
            rng.gen_range(-range..=range)
        } else {
            0.0
        };
        let img = render_blob(spec, class, dx, dy);
        let noise = normal_vec(rng, per);
        data.extend(
            img.iter()
                .zip(noise)
                .map(|(p, z)| (p + spec.noise_std * z).clamp(0.0, 1.0)),
        );
        labels.push(class);
        meta.push(SampleMeta { dx, dy, hue });
    }
    let mut images = Array::new(vec![n, 3, spec.height, spec.width], data)?;
    if range > 0.0 {
        let mut params = vec![0.0; n * 4];
        for (s, m) in meta.iter().enumerate() {
            params[s * 4] = m.hue;
        }
        let p = Tensor::constant(Array::new(vec![n, 4], params)?);
        let shifted = apply_color(&ImageBatch::new(Tensor::constant(images))?, &p)?;
        images = shifted.tensor().value().clone();
    }
    Dataset::new(images, labels, meta, k)
}

/// Class is the blob shape. Train images keep the base hue (within the train
/// range); test images are hue-rotated uniformly within the test range.
pub fn gen_hue_shifted_blobs(spec: &SyntheticTaskSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if spec.num_classes > MAX_SHAPES {
        return Err(DataError::Spec(format!(
            "{} classes requested, only {MAX_SHAPES} blob shapes exist",
            spec.num_classes
        )));
    }
    if spec.height < 12 || spec.width < 12 {
        return Err(DataError::Spec("blob canvas must be at least 12x12".into()));
    }
    let train = make_split(
        spec,
        spec.train_per_class,
        spec.train_range,
        &mut derive(seed, 3),
    )?;
    let test = make_split(
        spec,
        spec.test_per_class,
        spec.test_range,
        &mut derive(seed, 4),
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_are_distinct() {
        let spec = SyntheticTaskSpec::hue_shifted_blobs();
        let imgs: Vec<Vec<f64>> = (0..MAX_SHAPES)
            .map(|c| render_blob(&spec, c, 0, 0))
            .collect();
        for a in 0..imgs.len() {
            for b in a + 1..imgs.len() {
                assert_ne!(imgs[a], imgs[b]);
            }
        }
    }

    #[test]
    fn shapes_stay_on_canvas_under_jitter() {
        let spec = SyntheticTaskSpec::hue_shifted_blobs();
        for c in 0..MAX_SHAPES {
            let lit = |dx, dy| {
                render_blob(&spec, c, dx, dy)
                    .iter()
                    .filter(|v| **v > 0.0)
                    .count()
            };
            assert_eq!(lit(0, 0), lit(JITTER, JITTER));
            assert_eq!(lit(0, 0), lit(-JITTER, -JITTER));
        }
    }
}
