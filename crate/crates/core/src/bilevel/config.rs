use serde::{Deserialize, Serialize};

use super::{BilevelError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterOptimizerKind {
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HypergradConfig {
    /// Inner steps retained for the hypergradient.
    pub k: usize,
    /// Inner steps between augmenter updates.
    pub j: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub outer_optimizer: OuterOptimizerKind,
    pub weight_decay: f64,
    /// Global-norm clip applied to both inner and outer updates.
    pub clip_norm: Option<f64>,
}

impl Default for HypergradConfig {
    fn default() -> Self {
        HypergradConfig {
            k: 1,
            j: 1,
            inner_lr: 0.05,
            outer_lr: 1e-3,
            outer_optimizer: OuterOptimizerKind::Adam,
            weight_decay: 0.01,
            clip_norm: Some(10.0),
        }
    }
}

impl HypergradConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.j == 0 {
            return Err(BilevelError::Config("k and j must be at least 1".into()));
        }
        if self.k > self.j {
            return Err(BilevelError::Config(format!(
                "k = {} exceeds j = {}; windows may not straddle an augmenter update",
                self.k, self.j
            )));
        }
        if !(self.inner_lr > 0.0 && self.inner_lr.is_finite())
            || !(self.outer_lr >= 0.0 && self.outer_lr.is_finite())
        {
            return Err(BilevelError::Config(
                "learning rates must be finite and positive".into(),
            ));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(BilevelError::Config(
                "weight decay must be non-negative".into(),
            ));
        }
        if let Some(c) = self.clip_norm {
            if !(c > 0.0) {
                return Err(BilevelError::Config("clip norm must be positive".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        assert!(HypergradConfig::default().validate().is_ok());
    }

    #[test]
    fn k_above_j_rejected() {
        let c = HypergradConfig {
            k: 3,
            j: 2,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(BilevelError::Config(_))));
        let c = HypergradConfig {
            k: 0,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c: HypergradConfig = serde_json::from_str(r#"{"k": 2, "j": 4}"#).unwrap();
        assert_eq!((c.k, c.j, c.inner_lr), (2, 4, 0.05));
    }
}
