use std::cell::Cell;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::Rng;

use super::config::{ExperimentConfig, Mode, PredefinedRanges};
use super::metrics::MetricsRecord;
use super::{ExperimentError, Result};
use crate::bilevel::{hypergrad_truncated, inner_step, BilevelError, TrainState, UnrollWindow};
use crate::data::Dataset;
use crate::nn::{
    augmenter_forward, classifier_forward, init_augmenter, init_classifier, sample_noise,
    AugmenterOutput, AugmenterSpec, ClassifierSpec, ParamSet,
};
use crate::rng::{derive, ExpRng};
use crate::tensor::{Array, Tensor};
use crate::vision::{apply_augment, random_flip, ImageBatch, TransformSet};

// Child stream tags. Each consumer draws from its own stream so enabling one
// feature never perturbs another's randomness.
const STREAM_SHUFFLE: u64 = 10;
const STREAM_INIT_CLASSIFIER: u64 = 11;
const STREAM_INIT_AUGMENTER: u64 = 12;
const STREAM_AUGMENTER: u64 = 13;
const STREAM_PREDEFINED: u64 = 14;
const STREAM_FLIP: u64 = 15;
const STREAM_TEST_AUGMENT: u64 = 16;

const EVAL_CHUNK: usize = 256;

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<MetricsRecord>,
    pub final_test_accuracy: f64,
    pub final_val_accuracy: f64,
    pub final_val_loss: f64,
    pub omega: ParamSet,
    pub theta: ParamSet,
    pub inner_steps: usize,
    pub outer_steps: usize,
    pub wall_time_ms: f64,
}

/// Accuracy and mean cross-entropy of the classifier on `data`, optionally
/// passing every image through the augmenter first (eval mode, no dropout).
pub fn evaluate(
    spec: &ClassifierSpec,
    omega: &ParamSet,
    data: &Dataset,
    idx: &[usize],
    augment: Option<(&AugmenterSpec, &ParamSet, &mut ExpRng)>,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(BilevelError::EmptyValidation.into());
    }
    let omega = omega.detached();
    let mut augment = augment.map(|(s, t, r)| (s, t.detached(), r));
    let (mut correct, mut loss_sum) = (0usize, 0.0);
    for chunk in idx.chunks(EVAL_CHUNK) {
        let (mut img, labels) = data.batch(chunk);
        if let Some((spec_a, theta, rng)) = augment.as_mut() {
            let noise = sample_noise(chunk.len(), spec_a.noise_dim(), *rng);
            let out = augmenter_forward(spec_a, &noise, theta, false, *rng)?;
            img = apply_augment(
                &img,
                out.affine.as_ref(),
                out.color.as_ref(),
                spec_a.kind.transforms(),
            )?;
        }
        let logits = classifier_forward(spec, &img, &omega)?;
        loss_sum += logits.softmax_cross_entropy(&labels)?.item() * chunk.len() as f64;
        let k = logits.shape()[1];
        for (row, &y) in logits.data().chunks(k).zip(&labels) {
            let arg = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &v)| {
                    if v > best.1 {
                        (i, v)
                    } else {
                        best
                    }
                })
                .0;
            correct += usize::from(arg == y);
        }
    }
    Ok((
        correct as f64 / idx.len() as f64,
        loss_sum / idx.len() as f64,
    ))
}

/// Fixed-range random translation and hue, values only.
fn predefined_augment(
    img: &ImageBatch,
    ranges: PredefinedRanges,
    rng: &mut ExpRng,
) -> Result<ImageBatch> {
    let n = img.batch();
    let (h, w) = (img.height(), img.width());
    let mut flags = TransformSet::NONE;
    let mut mats = Vec::with_capacity(n * 6);
    let mut color = Vec::with_capacity(n * 4);
    for _ in 0..n {
        let (mut tx, mut ty, mut hue) = (0.0, 0.0, 0.0);
        if ranges.translate_px > 0.0 {
            let r = ranges.translate_px;
            tx = rng.gen_range(-r..=r) * 2.0 / (w - 1) as f64;
            ty = rng.gen_range(-r..=r) * 2.0 / (h - 1) as f64;
        }
        if ranges.hue > 0.0 {
            hue = rng.gen_range(-ranges.hue..=ranges.hue);
        }
        mats.extend_from_slice(&[1.0, 0.0, tx, 0.0, 1.0, ty]);
        color.extend_from_slice(&[hue, 0.0, 0.0, 0.0]);
    }
    flags.affine = ranges.translate_px > 0.0;
    flags.color = ranges.hue > 0.0;
    let mats = Tensor::constant(Array::new(vec![n, 6], mats)?);
    let color = Tensor::constant(Array::new(vec![n, 4], color)?);
    Ok(apply_augment(img, Some(&mats), Some(&color), flags)?)
}

fn cross_entropy(
    spec: &ClassifierSpec,
    img: &ImageBatch,
    labels: &[usize],
    omega: &ParamSet,
) -> Result<Tensor> {
    Ok(classifier_forward(spec, img, omega)?.softmax_cross_entropy(labels)?)
}

fn zero_output_layer(theta: &ParamSet) -> Vec<Array> {
    let mut vals = theta.values();
    let n = vals.len();
    for v in &mut vals[n - 2..] {
        *v = Array::zeros(v.shape());
    }
    vals
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len().max(1) as f64
}

/// Trains one classifier under `cfg.mode` (any mode except validated
/// magnitude, which repeats this with predefined ranges). `ranges` overrides
/// the config's predefined ranges. Each record is handed to `sink` as soon as
/// it is complete.
pub fn train(
    cfg: &ExperimentConfig,
    ranges: PredefinedRanges,
    train_set: &Dataset,
    test_set: &Dataset,
    sink: &mut dyn FnMut(&MetricsRecord),
) -> Result<TrainOutcome> {
    if cfg.mode == Mode::ValidatedMagnitude {
        return Err(ExperimentError::Config(
            "validated magnitude runs through run_experiment".into(),
        ));
    }
    let start = Instant::now();
    let seed = cfg.seed;
    let spec = cfg.classifier_spec();
    let hg = &cfg.hypergrad;
    let aug_spec = if cfg.mode.uses_augmenter() {
        cfg.augmenter
    } else {
        None
    };

    let omega0 = init_classifier(&spec, &mut derive(seed, STREAM_INIT_CLASSIFIER));
    let theta0 = match &aug_spec {
        Some(a) => init_augmenter(a, &mut derive(seed, STREAM_INIT_AUGMENTER)),
        None => ParamSet::new(),
    };
    let learned = cfg.mode == Mode::Learned;
    let mut state = TrainState::new(&omega0, &theta0, hg, learned);
    if learned && cfg.freeze_augmenter_output {
        state.set_theta(zero_output_layer(state.theta()));
    }
    let mut window = UnrollWindow::new(hg.k);

    let mut shuffle_rng = derive(seed, STREAM_SHUFFLE);
    let mut aug_rng = derive(seed, STREAM_AUGMENTER);
    let mut pre_rng = derive(seed, STREAM_PREDEFINED);
    let mut flip_rng = derive(seed, STREAM_FLIP);

    let n = train_set.len();
    let n_val = (n as f64 * cfg.val_fraction).round() as usize;
    let n_tr = n - n_val;
    let bs = cfg.batch_size;
    let mut records = Vec::new();
    let mut iteration = 0usize;
    let mut last_val_idx: Vec<usize> = Vec::new();
    let mut final_test_accuracy = f64::NAN;

    for epoch in 0..cfg.epochs {
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut shuffle_rng);
        let (tr_idx, val_idx) = perm.split_at(n_tr);
        let tr_batches: Vec<&[usize]> = tr_idx.chunks(bs).collect();
        let val_batches: Vec<&[usize]> = val_idx.chunks(bs).collect();
        if val_batches.is_empty() {
            return Err(BilevelError::EmptyValidation.into());
        }
        let iters = tr_batches.len().div_ceil(hg.j);
        for it in 0..iters {
            let mut losses = Vec::with_capacity(hg.j);
            let mut stats: Option<AugmenterOutput> = None;
            let mut ti_grads: Vec<Vec<Array>> = Vec::new();
            for batch in &tr_batches[it * hg.j..((it + 1) * hg.j).min(tr_batches.len())] {
                let (mut img, labels) = train_set.batch(batch);
                if let Some(f) = cfg.flip {
                    img = random_flip(&img, f.axis, f.prob, &mut flip_rng)?.0;
                }
                let mode = cfg.mode;
                let loss = inner_step(&mut state, &mut window, |omega, theta| {
                    let img = match (mode, &aug_spec) {
                        (Mode::Predefined, _) if !ranges.is_zero() => {
                            predefined_augment(&img, ranges, &mut pre_rng).map_err(to_bilevel)?
                        }
                        (Mode::Learned | Mode::TransformInvariant, Some(a)) => {
                            let noise = sample_noise(img.batch(), a.noise_dim(), &mut aug_rng);
                            let out = augmenter_forward(a, &noise, theta, true, &mut aug_rng)?;
                            let x = apply_augment(
                                &img,
                                out.affine.as_ref(),
                                out.color.as_ref(),
                                a.kind.transforms(),
                            )?;
                            stats = Some(out);
                            x
                        }
                        _ => img,
                    };
                    cross_entropy(&spec, &img, &labels, omega).map_err(to_bilevel)
                })?;
                losses.push(loss);
                if let Some(g) = state.take_theta_grad() {
                    ti_grads.push(g);
                }
            }

            let (val_img, val_labels) = train_set.batch(val_batches[it % val_batches.len()]);
            let val_loss = match cfg.mode {
                Mode::Learned => {
                    let seen = Cell::new(f64::NAN);
                    let grads = hypergrad_truncated(&state, &window, |omega| {
                        let l = cross_entropy(&spec, &val_img, &val_labels, omega)
                            .map_err(to_bilevel)?;
                        seen.set(l.item());
                        Ok(l)
                    })?;
                    window.clear();
                    state.outer_step(&grads);
                    if cfg.freeze_augmenter_output {
                        state.set_theta(zero_output_layer(state.theta()));
                    }
                    seen.get()
                }
                _ => {
                    if cfg.mode == Mode::TransformInvariant && !ti_grads.is_empty() {
                        let k = ti_grads.len() as f64;
                        let mut avg = ti_grads[0].clone();
                        for g in &ti_grads[1..] {
                            for (a, b) in avg.iter_mut().zip(g) {
                                a.data_mut()
                                    .iter_mut()
                                    .zip(b.data())
                                    .for_each(|(x, y)| *x += y);
                            }
                        }
                        for a in &mut avg {
                            a.data_mut().iter_mut().for_each(|x| *x /= k);
                        }
                        state.outer_step(&avg);
                    }
                    cross_entropy(&spec, &val_img, &val_labels, &state.omega().detached())?.item()
                }
            };

            let last = it + 1 == iters;
            let test_accuracy = if last {
                let idx: Vec<usize> = (0..test_set.len()).collect();
                let mut test_rng = derive(seed, STREAM_TEST_AUGMENT);
                let aug = match (&aug_spec, cfg.mode) {
                    (Some(a), Mode::TransformInvariant) => Some((a, state.theta(), &mut test_rng)),
                    _ => None,
                };
                let (acc, _) = evaluate(&spec, state.omega(), test_set, &idx, aug)?;
                final_test_accuracy = acc;
                Some(acc)
            } else {
                None
            };
            let rec = MetricsRecord {
                epoch,
                iteration,
                train_loss: mean(&losses),
                val_loss,
                test_accuracy,
                mean_abs_affine_delta: stats.as_ref().map_or(0.0, |s| s.mean_abs_affine_delta()),
                mean_abs_color: stats.as_ref().map_or(0.0, |s| s.mean_abs_color()),
                wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
            };
            sink(&rec);
            records.push(rec);
            iteration += 1;
        }
        last_val_idx = val_idx.to_vec();
    }

    let (final_val_accuracy, final_val_loss) =
        evaluate(&spec, state.omega(), train_set, &last_val_idx, None)?;
    Ok(TrainOutcome {
        records,
        final_test_accuracy,
        final_val_accuracy,
        final_val_loss,
        omega: state.omega().detached(),
        theta: state.theta().detached(),
        inner_steps: state.step(),
        outer_steps: state.outer_steps() as usize,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

fn to_bilevel(e: ExperimentError) -> BilevelError {
    match e {
        ExperimentError::Bilevel(b) => b,
        ExperimentError::Nn(n) => n.into(),
        ExperimentError::Vision(v) => v.into(),
        ExperimentError::Tensor(t) => t.into(),
        other => BilevelError::Config(other.to_string()),
    }
}
