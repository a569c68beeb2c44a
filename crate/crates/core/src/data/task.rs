use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{gen_hue_shifted_blobs, gen_translated_glyphs, DataError, Result};
use crate::tensor::{Array, Tensor};
use crate::vision::ImageBatch;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    TranslatedGlyphs,
    HueShiftedBlobs,
}

/// Ranges are pixels for glyphs (whole numbers) and hue turns for blobs.
/// Fields omitted from JSON take the defaults of the named task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PartialSpec")]
pub struct SyntheticTaskSpec {
    pub task: TaskKind,
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub train_range: f64,
    pub test_range: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub noise_std: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSpec {
    task: Option<TaskKind>,
    height: Option<usize>,
    width: Option<usize>,
    num_classes: Option<usize>,
    train_range: Option<f64>,
    test_range: Option<f64>,
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
    noise_std: Option<f64>,
}

impl TryFrom<PartialSpec> for SyntheticTaskSpec {
    type Error = String;

    fn try_from(p: PartialSpec) -> std::result::Result<Self, String> {
        let base = match p.task.unwrap_or(TaskKind::TranslatedGlyphs) {
            TaskKind::TranslatedGlyphs => SyntheticTaskSpec::translated_glyphs(),
            TaskKind::HueShiftedBlobs => SyntheticTaskSpec::hue_shifted_blobs(),
        };
        Ok(SyntheticTaskSpec {
            task: base.task,
            height: p.height.unwrap_or(base.height),
            width: p.width.unwrap_or(base.width),
            num_classes: p.num_classes.unwrap_or(base.num_classes),
            train_range: p.train_range.unwrap_or(base.train_range),
            test_range: p.test_range.unwrap_or(base.test_range),
            train_per_class: p.train_per_class.unwrap_or(base.train_per_class),
            test_per_class: p.test_per_class.unwrap_or(base.test_per_class),
            noise_std: p.noise_std.unwrap_or(base.noise_std),
        })
    }
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec::translated_glyphs()
    }
}

impl SyntheticTaskSpec {
    pub fn translated_glyphs() -> Self {
        SyntheticTaskSpec {
            task: TaskKind::TranslatedGlyphs,
            height: 16,
            width: 16,
            num_classes: 4,
            train_range: 0.0,
            test_range: 3.0,
            train_per_class: 64,
            test_per_class: 64,
            noise_std: 0.05,
        }
    }

    pub fn hue_shifted_blobs() -> Self {
        SyntheticTaskSpec {
            task: TaskKind::HueShiftedBlobs,
            test_range: 0.25,
            ..Self::translated_glyphs()
        }
    }

    pub fn channels(&self) -> usize {
        match self.task {
            TaskKind::TranslatedGlyphs => 1,
            TaskKind::HueShiftedBlobs => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(DataError::Spec(m));
        if self.num_classes < 2 {
            return bad("need at least two classes".into());
        }
        if self.height < 2 || self.width < 2 {
            return bad(format!(
                "image size {}x{} too small",
                self.height, self.width
            ));
        }
        if self.train_per_class == 0 || self.test_per_class == 0 {
            return bad("per-class sample counts must be positive".into());
        }
        if !(self.train_range >= 0.0 && self.test_range >= self.train_range) {
            return bad(format!(
                "test range {} must contain train range {}",
                self.test_range, self.train_range
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise std must be finite and non-negative".into());
        }
        match self.task {
            TaskKind::TranslatedGlyphs
                if self.train_range.fract() != 0.0 || self.test_range.fract() != 0.0 =>
            {
                return bad("glyph translation ranges must be whole pixels".into());
            }
            TaskKind::HueShiftedBlobs if self.test_range > 0.5 => {
                return bad(format!("hue range {} exceeds half a turn", self.test_range));
            }
            _ => {}
        }
        Ok(())
    }
}

/// Ground-truth nuisance applied to one sample.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SampleMeta {
    pub dx: i32,
    pub dy: i32,
    pub hue: f64,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    images: Array,
    labels: Vec<usize>,
    meta: Vec<SampleMeta>,
    num_classes: usize,
}

impl Dataset {
    pub fn new(
        images: Array,
        labels: Vec<usize>,
        meta: Vec<SampleMeta>,
        num_classes: usize,
    ) -> Result<Self> {
        let s = images.shape();
        if s.len() != 4 || s[0] != labels.len() || meta.len() != labels.len() {
            return Err(DataError::Spec(format!(
                "{} labels and {} meta entries for images {:?}",
                labels.len(),
                meta.len(),
                s
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(DataError::Spec(format!(
                "label {l} outside {num_classes} classes"
            )));
        }
        if images.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(DataError::Spec("pixel values must lie in [0, 1]".into()));
        }
        Ok(Dataset {
            images,
            labels,
            meta,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn images(&self) -> &Array {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn meta(&self) -> &[SampleMeta] {
        &self.meta
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.num_classes];
        for &l in &self.labels {
            c[l] += 1;
        }
        c
    }

    /// Images and labels at `idx`, in that order, as a constant batch.
    pub fn batch(&self, idx: &[usize]) -> (ImageBatch, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let src = self.images.data();
        let mut data = Vec::with_capacity(idx.len() * per);
        for &i in idx {
            data.extend_from_slice(&src[i * per..(i + 1) * per]);
        }
        let arr = Array::new(vec![idx.len(), c, h, w], data).expect("sized");
        let img = ImageBatch::new(Tensor::constant(arr)).expect("validated on construction");
        (img, idx.iter().map(|&i| self.labels[i]).collect())
    }

    pub fn all(&self) -> (ImageBatch, Vec<usize>) {
        let idx: Vec<usize> = (0..self.len()).collect();
        self.batch(&idx)
    }
}

/// Dispatches on the task kind. Returns (train, test).
pub fn generate(spec: &SyntheticTaskSpec, seed: u64) -> Result<(Dataset, Dataset)> {
    match spec.task {
        TaskKind::TranslatedGlyphs => gen_translated_glyphs(spec, seed),
        TaskKind::HueShiftedBlobs => gen_hue_shifted_blobs(spec, seed),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub spec: SyntheticTaskSpec,
    pub seed: u64,
    pub train_samples: usize,
    pub test_samples: usize,
    pub blvt_version: u32,
}

pub fn write_manifest(path: &Path, spec: &SyntheticTaskSpec, seed: u64) -> Result<Manifest> {
    let m = Manifest {
        spec: spec.clone(),
        seed,
        train_samples: spec.train_per_class * spec.num_classes,
        test_samples: spec.test_per_class * spec.num_classes,
        blvt_version: super::BLVT_VERSION,
    };
    std::fs::write(path, serde_json::to_string_pretty(&m)?)?;
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_json_uses_task_defaults() {
        let s: SyntheticTaskSpec =
            serde_json::from_str(r#"{"task": "hue_shifted_blobs", "noise_std": 0.0}"#).unwrap();
        assert_eq!(s.test_range, 0.25);
        assert_eq!(s.noise_std, 0.0);
        let g: SyntheticTaskSpec = serde_json::from_str("{}").unwrap();
        assert_eq!(g, SyntheticTaskSpec::translated_glyphs());
        assert!(serde_json::from_str::<SyntheticTaskSpec>(r#"{"tsk": 1}"#).is_err());
    }
}
