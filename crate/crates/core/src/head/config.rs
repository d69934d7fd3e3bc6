use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Validation metric used for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValMetric {
    /// Balanced accuracy for multiclass tasks, positive-class F1 for binary tasks.
    #[default]
    Auto,
    BalancedAccuracy,
    F1,
}

fn default_gamma() -> f64 {
    2.0
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_sigma() -> f64 {
    0.1
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    200
}
fn default_patience() -> usize {
    20
}
fn default_true() -> bool {
    true
}

/// Head architecture and training hyperparameters.
///
/// `input_dim` and `num_classes` may be left at 0 in config files and are then filled
/// from the training store by [`HeadConfig::resolve`]. `alpha: None` selects
/// inverse-frequency class weights computed on the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dim: Option<usize>,
    #[serde(default)]
    pub num_classes: usize,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default)]
    pub alpha: Option<Vec<f64>>,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default = "default_sigma")]
    pub noise_sigma: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub val_metric: ValMetric,
    #[serde(default = "default_true")]
    pub shuffle: bool,
}

impl Default for HeadConfig {
    fn default() -> Self {
        Self {
            input_dim: 0,
            hidden_dim: None,
            num_classes: 0,
            gamma: default_gamma(),
            alpha: None,
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_epsilon(),
            noise_sigma: default_sigma(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            patience: default_patience(),
            seed: 0,
            val_metric: ValMetric::Auto,
            shuffle: true,
        }
    }
}

impl HeadConfig {
    /// Linear probe: a single dense softmax layer.
    pub fn linear(input_dim: usize, num_classes: usize) -> Self {
        Self {
            input_dim,
            num_classes,
            ..Self::default()
        }
    }

    /// One ReLU hidden layer of 256 units before the classification layer.
    pub fn biomarker(input_dim: usize, num_classes: usize) -> Self {
        Self {
            hidden_dim: Some(256),
            ..Self::linear(input_dim, num_classes)
        }
    }

    /// Like [`HeadConfig::validate`] but accepts unset (zero) dimensions, for config
    /// files whose dimensions are filled from the data later.
    pub fn validate_template(&self) -> Result<()> {
        let classes = match (self.num_classes, &self.alpha) {
            (0, Some(a)) => a.len().max(2),
            (0, None) => 2,
            (c, _) => c,
        };
        HeadConfig {
            input_dim: self.input_dim.max(1),
            num_classes: classes,
            ..self.clone()
        }
        .validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        if self.hidden_dim == Some(0) {
            return bad("hidden_dim must be positive when present".into());
        }
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma must be >= 0, got {}", self.gamma));
        }
        if let Some(alpha) = &self.alpha {
            if alpha.len() != self.num_classes {
                return bad(format!(
                    "alpha has {} entries for {} classes",
                    alpha.len(),
                    self.num_classes
                ));
            }
            if alpha.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
                return bad("alpha entries must be positive".into());
            }
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must be in [0, 1), got {b}"));
            }
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad(format!("epsilon must be > 0, got {}", self.epsilon));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return bad(format!("noise_sigma must be >= 0, got {}", self.noise_sigma));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be >= 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be >= 1".into());
        }
        Ok(())
    }

    /// Fills unset (zero) dimensions from the data and rejects explicit mismatches.
    pub fn resolve(&self, input_dim: usize, num_classes: usize) -> Result<HeadConfig> {
        let mut cfg = self.clone();
        if cfg.input_dim == 0 {
            cfg.input_dim = input_dim;
        } else if cfg.input_dim != input_dim {
            return Err(Error::DimensionMismatch {
                what: "head input_dim vs embedding dim".into(),
                expected: cfg.input_dim,
                actual: input_dim,
            });
        }
        if cfg.num_classes == 0 {
            cfg.num_classes = num_classes;
        } else if cfg.num_classes != num_classes {
            return Err(Error::DimensionMismatch {
                what: "head num_classes vs store classes".into(),
                expected: cfg.num_classes,
                actual: num_classes,
            });
        }
        Ok(cfg)
    }

    pub fn metric(&self) -> ValMetric {
        match self.val_metric {
            ValMetric::Auto if self.num_classes == 2 => ValMetric::F1,
            ValMetric::Auto => ValMetric::BalancedAccuracy,
            m => m,
        }
    }

    /// SHA-256 of the canonical JSON form; identifies the config in reports.
    pub fn hash(&self) -> String {
        crate::sha256_hex(&serde_json::to_vec(self).expect("config serializes"))
    }

    pub fn parameter_count(&self) -> usize {
        match self.hidden_dim {
            Some(h) => self.input_dim * h + h + h * self.num_classes + self.num_classes,
            None => self.input_dim * self.num_classes + self.num_classes,
        }
    }
}
