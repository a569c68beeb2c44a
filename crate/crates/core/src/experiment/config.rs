use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{ExperimentError, Result};
use crate::bilevel::HypergradConfig;
use crate::data::{SyntheticTaskSpec, TaskKind};
use crate::nn::{AugmentKind, AugmenterSpec, ClassifierArch, ClassifierSpec};
use crate::vision::FlipAxis;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    None,
    Predefined,
    TransformInvariant,
    ValidatedMagnitude,
    Learned,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::None => "none",
            Mode::Predefined => "predefined",
            Mode::TransformInvariant => "transform_invariant",
            Mode::ValidatedMagnitude => "validated_magnitude",
            Mode::Learned => "learned",
        }
    }

    pub fn uses_augmenter(self) -> bool {
        matches!(self, Mode::TransformInvariant | Mode::Learned)
    }
}

/// Fixed random transformation ranges: translation in pixels, hue in turns.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PredefinedRanges {
    pub translate_px: f64,
    pub hue: f64,
}

impl PredefinedRanges {
    pub fn is_zero(&self) -> bool {
        self.translate_px == 0.0 && self.hue == 0.0
    }
}

/// Which predefined range the magnitude grid sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MagnitudeTarget {
    TranslatePx,
    Hue,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlipConfig {
    pub axis: FlipAxis,
    pub prob: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub mode: Mode,
    #[serde(default)]
    pub task: SyntheticTaskSpec,
    #[serde(default = "default_arch")]
    pub classifier: ClassifierArch,
    #[serde(default)]
    pub augmenter: Option<AugmenterSpec>,
    #[serde(default)]
    pub hypergrad: HypergradConfig,
    #[serde(default)]
    pub predefined: PredefinedRanges,
    #[serde(default = "default_grid")]
    pub magnitude_grid: Vec<f64>,
    #[serde(default)]
    pub magnitude_target: Option<MagnitudeTarget>,
    #[serde(default)]
    pub flip: Option<FlipConfig>,
    /// Keeps the augmenter's output layer at zero throughout training.
    #[serde(default)]
    pub freeze_augmenter_output: bool,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_val_fraction")]
    pub val_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub out_dir: Option<PathBuf>,
}

fn default_arch() -> ClassifierArch {
    ClassifierArch::Mlp { hidden: vec![32] }
}

fn default_grid() -> Vec<f64> {
    vec![0.0, 1.0, 2.0, 3.0, 4.0]
}

fn default_epochs() -> usize {
    30
}

fn default_batch() -> usize {
    32
}

fn default_val_fraction() -> f64 {
    0.2
}

impl ExperimentConfig {
    /// A config with every default filled in for `mode`.
    pub fn new(mode: Mode) -> Self {
        serde_json::from_value(serde_json::json!({ "mode": mode })).expect("defaults deserialize")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn classifier_spec(&self) -> ClassifierSpec {
        ClassifierSpec {
            arch: self.classifier.clone(),
            in_channels: self.task.channels(),
            height: self.task.height,
            width: self.task.width,
            num_classes: self.task.num_classes,
        }
    }

    pub fn magnitude_target(&self) -> MagnitudeTarget {
        self.magnitude_target.unwrap_or(match self.task.task {
            TaskKind::TranslatedGlyphs => MagnitudeTarget::TranslatePx,
            TaskKind::HueShiftedBlobs => MagnitudeTarget::Hue,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        self.task
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.classifier_spec()
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        self.hypergrad
            .validate()
            .map_err(|e| ExperimentError::Config(e.to_string()))?;
        if self.epochs == 0 || self.batch_size == 0 {
            return bad("epochs and batch_size must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} not in (0, 1)", self.val_fraction));
        }
        let p = self.predefined;
        if !(p.translate_px >= 0.0 && p.translate_px.is_finite() && (0.0..=0.5).contains(&p.hue)) {
            return bad("predefined ranges must be non-negative, hue at most 0.5".into());
        }
        if let Some(f) = self.flip {
            if !(0.0..=1.0).contains(&f.prob) {
                return bad(format!("flip probability {} not in [0, 1]", f.prob));
            }
        }
        if self.mode.uses_augmenter() {
            let Some(a) = &self.augmenter else {
                return bad(format!("mode {} requires an augmenter", self.mode.as_str()));
            };
            a.validate()
                .map_err(|e| ExperimentError::Config(e.to_string()))?;
            let color = matches!(a.kind, AugmentKind::Color | AugmentKind::AffineColor);
            if color && self.task.channels() != 3 {
                return bad("color augmentation needs a 3-channel task".into());
            }
            if (self.task.width < 2 || self.task.height < 2) && a.kind != AugmentKind::Color {
                return bad("affine augmentation needs images of at least 2x2".into());
            }
        }
        if p.hue > 0.0 && self.task.channels() != 3 {
            return bad("predefined hue needs a 3-channel task".into());
        }
        if self.mode == Mode::ValidatedMagnitude {
            if self.magnitude_grid.is_empty() {
                return bad("magnitude grid is empty".into());
            }
            if self
                .magnitude_grid
                .iter()
                .any(|m| !(*m >= 0.0 && m.is_finite()))
            {
                return bad("magnitudes must be finite and non-negative".into());
            }
            if self.magnitude_target() == MagnitudeTarget::Hue && self.task.channels() != 3 {
                return bad("hue magnitude needs a 3-channel task".into());
            }
        }
        let n_train = self.task.train_per_class * self.task.num_classes;
        let n_val = (n_train as f64 * self.val_fraction).round() as usize;
        if n_val == 0 || n_val >= n_train {
            return bad(format!(
                "{n_train} training samples cannot be split with fraction {}",
                self.val_fraction
            ));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c = ExperimentConfig::from_json(r#"{"mode": "none"}"#).unwrap();
        assert_eq!(c.epochs, 30);
        assert_eq!(c.task.test_range, 3.0);
        assert_eq!(c.magnitude_grid, vec![0.0, 1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn learned_requires_augmenter() {
        let e = ExperimentConfig::from_json(r#"{"mode": "learned"}"#).unwrap_err();
        assert!(e.is_config());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"mode": "none", "epoch": 3}"#).is_err());
    }

    #[test]
    fn empty_grid_rejected() {
        let e =
            ExperimentConfig::from_json(r#"{"mode": "validated_magnitude", "magnitude_grid": []}"#)
                .unwrap_err();
        assert!(e.to_string().contains("grid"));
    }

    #[test]
    fn round_trips_through_json() {
        let c = ExperimentConfig::new(Mode::Predefined);
        let back: ExperimentConfig =
            serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, back);
    }
}
