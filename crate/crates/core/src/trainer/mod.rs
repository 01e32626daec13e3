//! Episodic training, fine-tuning, prediction and evaluation.

mod config;
pub mod episode;
mod eval;
pub mod gradsuite;
mod model;
pub mod objectives;
mod train;

pub use config::{Head, TrainConfig};
pub use episode::{sample_episode, sample_per_class, sample_support, Episode, Support};
pub use eval::{
    evaluate, evaluate_generalized, evaluate_with_search_space, mean_std, run_trial, sweep_alpha,
    sweep_shots, trial_seeds, write_labelled_matrix, write_sweep_csv, EvalReport, SweepRow, TrialResult,
};
pub use model::{Architecture, Model};
pub use objectives::{
    finetune_objective, objective_o1, objective_o2, objective_o3, objective_vars, objective_vars_with_quasi, quasi_labels,
    Terms,
};
pub use train::{finetune, finetune_gradients, predict_classes, predict_probs, predict_test, train, LogRecord, SearchSpace};
pub use gradsuite::{gradient_suite, SuiteEntry, GRADCHECK_STEP, GRADCHECK_TOL};
