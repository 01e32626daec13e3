//! Dataset files, synthetic data and experiment configuration.

mod config;
mod dataset;
mod synth;

pub use config::ExperimentConfig;
pub use dataset::*;
pub use synth::{agglomerative_tree, class_names, generate_synthetic, SynthSpec, SyntheticData};
