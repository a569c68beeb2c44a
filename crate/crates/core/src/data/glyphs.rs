use rand::Rng;

use super::task::{Dataset, SampleMeta, SyntheticTaskSpec};
use super::{DataError, Result};
use crate::rng::{derive, normal_vec, ExpRng};
use crate::tensor::Array;

/// Side of the square box each glyph is drawn in.
const GLYPH: usize = 8;
const MAX_GLYPHS: usize = 7;

fn glyph_pixel(class: usize, i: usize, j: usize) -> bool {
    let last = GLYPH - 1;
    let mid = |k: usize| k == GLYPH / 2 - 1 || k == GLYPH / 2;
    match class {
        // cross
        0 => mid(i) || mid(j),
        // hollow square
        1 => i == 0 || i == last || j == 0 || j == last,
        // thick diagonal
        2 => i.abs_diff(j) <= 1,
        // T
        3 => i <= 1 || mid(j),
        // X
        4 => i == j || i + j == last,
        // L
        5 => j <= 1 || i >= last - 1,
        // H
        _ => j == 0 || j == last || mid(i),
    }
}

/// Noise-free glyph of `class` shifted by (dx, dy) pixels, row-major (H, W).
pub fn render_glyph(spec: &SyntheticTaskSpec, class: usize, dx: i32, dy: i32) -> Result<Vec<f64>> {
    let (h, w) = (spec.height, spec.width);
    if h < GLYPH || w < GLYPH {
        return Err(DataError::GlyphOutOfBounds(format!(
            "{h}x{w} canvas smaller than the {GLYPH}px glyph"
        )));
    }
    let (oy, ox) = (((h - GLYPH) / 2) as i32, ((w - GLYPH) / 2) as i32);
    let fits = |o: i32, d: i32, size: usize| o + d >= 0 && o + d + GLYPH as i32 <= size as i32;
    if !fits(ox, dx, w) || !fits(oy, dy, h) {
        return Err(DataError::GlyphOutOfBounds(format!(
            "shift ({dx}, {dy}) leaves the {h}x{w} canvas"
        )));
    }
    let mut out = vec![0.0; h * w];
    for i in 0..GLYPH {
        for j in 0..GLYPH {
            if glyph_pixel(class, i, j) {
                let r = (oy + dy) as usize + i;
                let c = (ox + dx) as usize + j;
                out[r * w + c] = 1.0;
            }
        }
    }
    Ok(out)
}

/// Integer translation with zero fill: `out[i, j] = img[i - dy, j - dx]`.
pub fn shift_image(img: &[f64], h: usize, w: usize, dx: i32, dy: i32) -> Vec<f64> {
    let mut out = vec![0.0; h * w];
    for i in 0..h as i32 {
        for j in 0..w as i32 {
            let (si, sj) = (i - dy, j - dx);
            if si >= 0 && sj >= 0 && si < h as i32 && sj < w as i32 {
                out[(i as usize) * w + j as usize] = img[si as usize * w + sj as usize];
            }
        }
    }
    out
}

fn draw_offset(rng: &mut ExpRng, range: i32) -> i32 {
    if range == 0 {
        0
    } else {
        rng.gen_range(-range..=range)
    }
}

fn make_split(
    spec: &SyntheticTaskSpec,
    per_class: usize,
    range: f64,
    rng: &mut ExpRng,
) -> Result<Dataset> {
    let k = spec.num_classes;
    let n = per_class * k;
    let hw = spec.height * spec.width;
    let r = range as i32;
    let mut data = Vec::with_capacity(n * hw);
    let mut labels = Vec::with_capacity(n);
    let mut meta = Vec::with_capacity(n);
    for s in 0..n {
        let class = s % k;
        let dx = draw_offset(rng, r);
        let dy = draw_offset(rng, r);
        let img = render_glyph(spec, class, dx, dy)?;
        let noise = normal_vec(rng, hw);
        data.extend(
            img.iter()
                .zip(noise)
                .map(|(p, z)| (p + spec.noise_std * z).clamp(0.0, 1.0)),
        );
        labels.push(class);
        meta.push(SampleMeta { dx, dy, hue: 0.0 });
    }
    let images = Array::new(vec![n, 1, spec.height, spec.width], data)?;
    Dataset::new(images, labels, meta, k)
}

/// One binary glyph per class; train images shifted within the train range,
/// test images within the (wider) test range; Gaussian pixel noise, clamped.
pub fn gen_translated_glyphs(spec: &SyntheticTaskSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    if spec.num_classes > MAX_GLYPHS {
        return Err(DataError::Spec(format!(
            "{} classes requested, only {MAX_GLYPHS} glyphs exist",
            spec.num_classes
        )));
    }
    let r = spec.test_range as i32;
    render_glyph(spec, 0, r, r)?;
    render_glyph(spec, 0, -r, -r)?;
    let train = make_split(
        spec,
        spec.train_per_class,
        spec.train_range,
        &mut derive(seed, 1),
    )?;
    let test = make_split(
        spec,
        spec.test_per_class,
        spec.test_range,
        &mut derive(seed, 2),
    )?;
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn glyphs_are_distinct() {
        let spec = SyntheticTaskSpec::translated_glyphs();
        let imgs: Vec<Vec<f64>> = (0..MAX_GLYPHS)
            .map(|c| render_glyph(&spec, c, 0, 0).unwrap())
            .collect();
        for a in 0..imgs.len() {
            for b in a + 1..imgs.len() {
                assert_ne!(imgs[a], imgs[b], "glyphs {a} and {b}");
            }
        }
    }

    #[test]
    fn shift_matches_render_offset() {
        let spec = SyntheticTaskSpec::translated_glyphs();
        let base = render_glyph(&spec, 3, 0, 0).unwrap();
        let moved = render_glyph(&spec, 3, -2, 3).unwrap();
        assert_eq!(shift_image(&base, 16, 16, -2, 3), moved);
    }

    #[test]
    fn oversized_range_rejected() {
        let spec = SyntheticTaskSpec {
            test_range: 5.0,
            ..SyntheticTaskSpec::translated_glyphs()
        };
        assert!(matches!(
            gen_translated_glyphs(&spec, 0),
            Err(DataError::GlyphOutOfBounds(_))
        ));
    }
}
