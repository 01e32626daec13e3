use std::path::Path;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{Head, TrainConfig};
use super::episode::{sample_per_class, sample_support, Support};
use super::model::{Architecture, Model};
use super::objectives::Terms;
use super::train::{finetune, predict_test, train, LogRecord, SearchSpace};
use crate::affinity::SideInfoSource;
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::numgrad::Matrix;

/// Per-trial seeds derived from the configured seed.
pub fn trial_seeds(seed: u64, trials: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials).map(|_| rng.next_u64()).collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialResult {
    pub seed: u64,
    pub accuracy: f64,
    /// Row-normalized, one row per data-poor class.
    pub confusion: Matrix,
    /// Learned kernel over the data-poor classes.
    pub kernel: Option<Matrix>,
    pub log: Vec<LogRecord>,
    pub finetune: Vec<f64>,
}

/// Trains, fine-tunes and tests one trial. `space` lists the data-rich
/// classes admitted to the prediction label space; the attention head sees
/// `shots` labelled samples of each.
pub fn run_trial(
    bundle: &DatasetBundle,
    arch: &Architecture,
    cfg: &TrainConfig,
    seed: u64,
    space: &[usize],
) -> Result<(TrialResult, Model, Support)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let support = sample_support(bundle, cfg.shots, &mut rng)?;
    let mut model = Model::new(arch.clone(), seed);
    let terms = Terms {
        quasi: cfg.quasi_term && space.is_empty(),
        ..Terms::from_config(cfg)
    };
    let log = train(&mut model, bundle, &support, cfg, terms, &mut rng)?;
    let ft = finetune(&mut model, bundle, &support, cfg)?;
    let space = SearchSpace {
        classes: space.to_vec(),
        samples: sample_per_class(bundle, space, cfg.shots, &mut rng)?,
    };
    let predicted = predict_test(&model, bundle, &support, cfg.head, &space)?;

    let c = arch.num_one_example;
    let mut confusion = Matrix::zeros(c, space.len() + c);
    let mut correct = 0;
    for (&p, &t) in predicted.iter().zip(&support.test_labels) {
        let truth = t + space.len();
        correct += usize::from(p == truth);
        confusion[(t, p)] += 1.0;
    }
    for r in 0..c {
        let row = confusion.row_mut(r);
        let n: f64 = row.iter().sum();
        if n > 0.0 {
            row.iter_mut().for_each(|v| *v /= n);
        }
    }
    let kernel = if arch.has_side_info() {
        Some(arch.side.build_label_kernel(&model.store, &bundle.one_example())?.kernel)
    } else {
        None
    };
    let result = TrialResult {
        seed,
        accuracy: correct as f64 / predicted.len().max(1) as f64,
        confusion,
        kernel,
        log,
        finetune: ft,
    };
    Ok((result, model, support))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub head: Head,
    pub alpha: f64,
    pub shots: usize,
    pub generalized: bool,
    pub trials: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub accuracies: Vec<f64>,
    pub seeds: Vec<u64>,
    pub sources: Vec<String>,
    pub confusion_rows: Vec<String>,
    pub confusion_cols: Vec<String>,
    pub confusion: Vec<Vec<f64>>,
    pub kernel_classes: Vec<String>,
    pub kernel: Option<Vec<Vec<f64>>>,
}

/// Mean and sample standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn average(mats: &[&Matrix]) -> Matrix {
    let (r, c) = mats[0].shape();
    let mut out = Matrix::zeros(r, c);
    for m in mats {
        out.add_assign(m).expect("trial matrices share a shape");
    }
    out.scale(1.0 / mats.len() as f64)
}

/// `evaluate` with the prediction label space widened by the data-rich
/// classes in `space`. The quasi-sample term is dropped whenever `space` is
/// non-empty.
pub fn evaluate_with_search_space(
    bundle: &DatasetBundle,
    sources: &[SideInfoSource],
    cfg: &TrainConfig,
    space: &[usize],
) -> Result<EvalReport> {
    cfg.validate()?;
    let lots = bundle.num_lots();
    let mut seen = vec![false; lots];
    for &c in space {
        if c >= lots || std::mem::replace(&mut seen[c], true) {
            return Err(Error::Config(format!("invalid search-space class id {c}")));
        }
    }
    let arch = Architecture::new(bundle, sources, cfg)?;
    let seeds = trial_seeds(cfg.seed, cfg.trials);
    let results: Vec<TrialResult> = seeds
        .par_iter()
        .map(|&s| run_trial(bundle, &arch, cfg, s, space).map(|r| r.0))
        .collect::<Result<_>>()?;

    let accuracies: Vec<f64> = results.iter().map(|r| r.accuracy).collect();
    let (accuracy_mean, accuracy_std) = mean_std(&accuracies);
    let confusion = average(&results.iter().map(|r| &r.confusion).collect::<Vec<_>>());
    let kernels: Vec<&Matrix> = results.iter().filter_map(|r| r.kernel.as_ref()).collect();
    let kernel = (!kernels.is_empty()).then(|| average(&kernels).to_rows());
    let one_names: Vec<String> = bundle
        .one_example()
        .into_iter()
        .map(|c| bundle.class_names[c].clone())
        .collect();
    let cols = space
        .iter()
        .map(|&c| bundle.class_names[c].clone())
        .chain(one_names.iter().cloned())
        .collect();
    Ok(EvalReport {
        head: cfg.head,
        alpha: cfg.alpha,
        shots: cfg.shots,
        generalized: !space.is_empty(),
        trials: cfg.trials,
        accuracy_mean,
        accuracy_std,
        accuracies,
        seeds,
        sources: arch.side.sources.iter().map(|s| s.name.clone()).collect(),
        confusion_rows: one_names.clone(),
        confusion_cols: cols,
        confusion: confusion.to_rows(),
        kernel_classes: if kernel.is_some() { one_names } else { Vec::new() },
        kernel,
    })
}

/// Standard protocol: predictions over the data-poor classes only.
pub fn evaluate(bundle: &DatasetBundle, sources: &[SideInfoSource], cfg: &TrainConfig) -> Result<EvalReport> {
    evaluate_with_search_space(bundle, sources, cfg, &[])
}

/// Predictions over every class of both pools.
pub fn evaluate_generalized(
    bundle: &DatasetBundle,
    sources: &[SideInfoSource],
    cfg: &TrainConfig,
) -> Result<EvalReport> {
    evaluate_with_search_space(bundle, sources, cfg, &bundle.lots())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub accuracies: Vec<f64>,
}

impl From<(f64, &EvalReport)> for SweepRow {
    fn from((value, r): (f64, &EvalReport)) -> Self {
        SweepRow {
            value,
            accuracy_mean: r.accuracy_mean,
            accuracy_std: r.accuracy_std,
            accuracies: r.accuracies.clone(),
        }
    }
}

/// Evaluates at each `alpha` (ascending, duplicates removed) on the same
/// trial seeds.
pub fn sweep_alpha(
    bundle: &DatasetBundle,
    sources: &[SideInfoSource],
    cfg: &TrainConfig,
    grid: &[f64],
) -> Result<Vec<SweepRow>> {
    if grid.is_empty() {
        return Err(Error::Config("alpha grid is empty".into()));
    }
    let mut grid = grid.to_vec();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid.into_iter()
        .map(|a| {
            let cfg = TrainConfig { alpha: a, ..cfg.clone() };
            evaluate(bundle, sources, &cfg).map(|r| SweepRow::from((a, &r)))
        })
        .collect()
}

/// Evaluates at each number of shots (ascending, duplicates removed).
pub fn sweep_shots(
    bundle: &DatasetBundle,
    sources: &[SideInfoSource],
    cfg: &TrainConfig,
    grid: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut grid = grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let Some(&max) = grid.last() else {
        return Err(Error::Config("shots grid is empty".into()));
    };
    let smallest = bundle
        .one_example()
        .into_iter()
        .map(|c| (bundle.samples_of(c).len(), c))
        .min();
    if let Some((n, c)) = smallest {
        if max >= n {
            return Err(Error::Config(format!(
                "{max} shots leave no test samples in class `{}` ({n} samples)",
                bundle.class_names[c]
            )));
        }
    }
    grid.into_iter()
        .map(|k| {
            let cfg = TrainConfig { shots: k, ..cfg.clone() };
            evaluate(bundle, sources, &cfg).map(|r| SweepRow::from((k as f64, &r)))
        })
        .collect()
}

/// Writes `name,accuracy_mean,accuracy_std` rows.
pub fn write_sweep_csv(path: &Path, name: &str, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([name, "accuracy_mean", "accuracy_std"])?;
    for r in rows {
        w.write_record([r.value.to_string(), r.accuracy_mean.to_string(), r.accuracy_std.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes a matrix with a header of column names and a leading name column.
pub fn write_labelled_matrix(path: &Path, rows: &[String], cols: &[String], data: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(std::iter::once("class").chain(cols.iter().map(String::as_str)))?;
    for (name, row) in rows.iter().zip(data) {
        w.write_record(std::iter::once(name.clone()).chain(row.iter().map(f64::to_string)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
