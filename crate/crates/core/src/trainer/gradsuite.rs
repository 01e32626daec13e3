//! Finite-difference checks of every training objective.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Head, TrainConfig};
use super::episode::{sample_episode, sample_support};
use super::model::Architecture;
use super::objectives::{
    finetune_on_tape, o1_on_tape, o2_on_tape, o3_on_tape, objective_vars_with_quasi, quasi_labels, Terms,
};
use crate::data::{generate_synthetic, SynthSpec};
use crate::error::Result;
use crate::numgrad::gradcheck;

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteEntry {
    pub objective: String,
    pub points: usize,
    pub checked: usize,
    pub max_rel_err: f64,
    /// Point, parameter and flat index of the worst entry.
    pub worst: Option<(usize, String, usize)>,
}

impl SuiteEntry {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

pub const SUITE_OBJECTIVES: [&str; 9] = [
    "o1/attention",
    "o1/softmax",
    "o2",
    "o3/attention",
    "o3/softmax",
    "combined/attention",
    "combined/softmax",
    "finetune/attention",
    "finetune/softmax",
];

fn head_of(name: &str) -> Head {
    if name.ends_with("softmax") {
        Head::Softmax
    } else {
        Head::Attention
    }
}

/// Checks each objective in [`SUITE_OBJECTIVES`] at `points` random
/// parameter points on a small synthetic problem. Quasi-labels are frozen at
/// each point's base parameters.
pub fn gradient_suite(points: usize, seed: u64) -> Result<Vec<SuiteEntry>> {
    let spec = SynthSpec {
        lots_classes: 6,
        one_example_classes: 3,
        samples_per_class: 6,
        feature_dim: 5,
        seed,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec)?;
    let bundle = &data.bundle;
    let cfg = TrainConfig {
        embed_hidden: 4,
        embed_dim: 3,
        mapping_hidden: Some(4),
        mapping_dim: 3,
        batch_size: 6,
        ..TrainConfig::default()
    };
    let arch = Architecture::new(bundle, &data.sources, &cfg)?;
    let terms = Terms {
        alpha: 0.7,
        hsic: true,
        quasi: true,
    };

    let mut entries: Vec<SuiteEntry> = SUITE_OBJECTIVES
        .iter()
        .map(|name| SuiteEntry {
            objective: name.to_string(),
            points,
            checked: 0,
            max_rel_err: 0.0,
            worst: None,
        })
        .collect();
    for p in 0..points {
        let point_seed = seed.wrapping_mul(1_000_003).wrapping_add(p as u64);
        let store = arch.init(point_seed);
        let mut rng = ChaCha8Rng::seed_from_u64(point_seed);
        let support = sample_support(bundle, 1, &mut rng)?;
        let ep = sample_episode(bundle, &support, cfg.batch_size, &mut rng)?;
        let soft = quasi_labels(&arch, &store, &ep)?;
        let x = &bundle.features;
        for entry in entries.iter_mut() {
            let name = entry.objective.as_str();
            let head = head_of(name);
            let report = match name.split('/').next().unwrap_or_default() {
                "o1" => gradcheck::check(&store, &[], GRADCHECK_STEP, |s, t| o1_on_tape(t, &arch, s, x, &ep, head)),
                "o2" => gradcheck::check(&store, &[], GRADCHECK_STEP, |s, t| o2_on_tape(t, &arch, s, x, &ep)),
                "o3" => gradcheck::check(&store, &[], GRADCHECK_STEP, |s, t| {
                    o3_on_tape(t, &arch, s, x, &ep, head, &soft)
                }),
                "combined" => gradcheck::check(&store, &[], GRADCHECK_STEP, |s, t| {
                    objective_vars_with_quasi(t, &arch, s, x, &ep, head, terms, Some(soft.clone())).map(|v| v.total)
                }),
                _ => gradcheck::check(&store, &[], GRADCHECK_STEP, |s, t| {
                    finetune_on_tape(t, &arch, s, x, &support, head)
                }),
            }?;
            entry.checked += report.checked;
            if report.max_rel_err >= entry.max_rel_err {
                entry.max_rel_err = report.max_rel_err;
                entry.worst = report.worst.map(|(n, k)| (p, n, k));
            }
        }
    }
    Ok(entries)
}
