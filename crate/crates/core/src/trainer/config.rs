use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::AdamConfig;

/// Prediction head used for both training and test-time prediction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    #[default]
    Attention,
    Softmax,
}

impl Head {
    pub fn default_iterations(self) -> usize {
        match self {
            Head::Attention => 100,
            Head::Softmax => 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub head: Head,
    /// Weight of the side-information terms.
    pub alpha: f64,
    pub batch_size: usize,
    /// Labelled samples per data-poor class.
    pub shots: usize,
    /// Training iterations; the head's default budget when absent.
    pub iterations: Option<usize>,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Names of the side-information sources to use; all when absent.
    pub sources: Option<Vec<String>>,
    pub finetune_iters: usize,
    pub finetune_lr: f64,
    pub trials: usize,
    /// Include the HSIC term.
    pub hsic_term: bool,
    /// Include the quasi-sample term.
    pub quasi_term: bool,
    pub embed_hidden: usize,
    pub embed_dim: usize,
    /// Hidden width of the class mapping networks; derived from the input
    /// width when absent.
    pub mapping_hidden: Option<usize>,
    pub mapping_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            head: Head::Attention,
            alpha: 0.1,
            batch_size: 64,
            shots: 1,
            iterations: None,
            adam: AdamConfig::default(),
            seed: 0,
            sources: None,
            finetune_iters: 10,
            finetune_lr: 1e-3,
            trials: 40,
            hsic_term: true,
            quasi_term: true,
            embed_hidden: 32,
            embed_dim: 16,
            mapping_hidden: None,
            mapping_dim: crate::affinity::MAPPING_OUTPUT,
        }
    }
}

impl TrainConfig {
    pub fn iterations(&self) -> usize {
        self.iterations.unwrap_or_else(|| self.head.default_iterations())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be a finite value >= 0, got {}", self.alpha));
        }
        for (name, v) in [
            ("batch_size", self.batch_size),
            ("shots", self.shots),
            ("trials", self.trials),
            ("embed_hidden", self.embed_hidden),
            ("embed_dim", self.embed_dim),
            ("mapping_dim", self.mapping_dim),
        ] {
            if v == 0 {
                return bad(format!("{name} must be >= 1"));
            }
        }
        if self.iterations == Some(0) {
            return bad("iterations must be >= 1".into());
        }
        if self.mapping_hidden == Some(0) {
            return bad("mapping_hidden must be >= 1".into());
        }
        for (name, v) in [("adam.lr", self.adam.lr), ("finetune_lr", self.finetune_lr)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be > 0, got {v}"));
            }
        }
        Ok(())
    }
}
