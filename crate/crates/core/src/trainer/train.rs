use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::config::{Head, TrainConfig};
use super::episode::{sample_episode, Support};
use super::model::{Architecture, Model};
use super::objectives::{finetune_objective, finetune_on_tape, objective_vars, Terms};
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::numgrad::{argmax, softmax_rows, AdamConfig, Matrix, ParamStore, Tape};
use crate::regression::{embed, PHI, PHI_PRIME};

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iter: usize,
    pub o1: f64,
    pub o2: Option<f64>,
    pub o3: Option<f64>,
    pub total: f64,
}

fn non_finite(tape: &Tape, what: String) -> Error {
    match tape.first_non_finite() {
        Some((idx, op)) => Error::NonFinite(format!("{what}; first non-finite node is #{idx} ({op})")),
        None => Error::NonFinite(what),
    }
}

fn ascend(store: &mut ParamStore, grads: BTreeMap<String, Matrix>, adam: &AdamConfig) -> Result<()> {
    let negated = grads.into_iter().map(|(k, g)| (k, g.scale(-1.0))).collect();
    store.adam_step(&negated, adam)
}

/// Maximizes the combined objective with Adam for the configured number of
/// iterations, sampling a fresh episode each step.
pub fn train<R: Rng + ?Sized>(
    model: &mut Model,
    bundle: &DatasetBundle,
    support: &Support,
    cfg: &TrainConfig,
    terms: Terms,
    rng: &mut R,
) -> Result<Vec<LogRecord>> {
    let mut log = Vec::with_capacity(cfg.iterations());
    for iter in 0..cfg.iterations() {
        let ep = sample_episode(bundle, support, cfg.batch_size, rng)?;
        let mut tape = Tape::new();
        let vars = objective_vars(&mut tape, &model.arch, &model.store, &bundle.features, &ep, cfg.head, terms)?;
        let value = |v| tape.value(v).scalar();
        let record = LogRecord {
            iter,
            o1: value(vars.o1)?,
            o2: vars.o2.map(value).transpose()?,
            o3: vars.o3.map(value).transpose()?,
            total: value(vars.total)?,
        };
        if !record.total.is_finite() {
            return Err(non_finite(&tape, format!("objective is {} at iteration {iter}", record.total)));
        }
        let grads = tape.backward(vars.total)?.into_params();
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(non_finite(&tape, format!("gradient of `{name}` is not finite at iteration {iter}")));
        }
        ascend(&mut model.store, grads, &cfg.adam)?;
        log.push(record);
    }
    Ok(log)
}

/// Adapts the embedding network and `phi'` to the support set. Returns the
/// support objective before the first step and after every step.
pub fn finetune(model: &mut Model, bundle: &DatasetBundle, support: &Support, cfg: &TrainConfig) -> Result<Vec<f64>> {
    let adam = AdamConfig {
        lr: cfg.finetune_lr,
        ..cfg.adam
    };
    let mut trace = vec![finetune_objective(&model.arch, &model.store, &bundle.features, support, cfg.head)?];
    if cfg.finetune_iters == 0 {
        return Ok(trace);
    }
    model.store.reset_optimizer();
    for step in 0..cfg.finetune_iters {
        let mut tape = Tape::new();
        let out = finetune_on_tape(&mut tape, &model.arch, &model.store, &bundle.features, support, cfg.head)?;
        let grads = finetune_gradients(&model.arch, &tape, out)?;
        if let Some((name, _)) = grads.iter().find(|(_, g)| !g.all_finite()) {
            return Err(non_finite(&tape, format!("fine-tune gradient of `{name}` is not finite at step {step}")));
        }
        ascend(&mut model.store, grads, &adam)?;
        trace.push(finetune_objective(&model.arch, &model.store, &bundle.features, support, cfg.head)?);
    }
    Ok(trace)
}

/// Gradients of the fine-tune objective restricted to the parameters that
/// fine-tuning may move.
pub fn finetune_gradients(arch: &Architecture, tape: &Tape, out: crate::numgrad::Var) -> Result<BTreeMap<String, Matrix>> {
    Ok(tape
        .backward(out)?
        .into_params()
        .into_iter()
        .filter(|(name, _)| arch.is_finetuned(name))
        .collect())
}

/// Data-rich classes admitted to the prediction label space, with the
/// labelled samples the attention head may attend to.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SearchSpace {
    pub classes: Vec<usize>,
    pub samples: Vec<usize>,
}

impl SearchSpace {
    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }
}

/// Class probabilities for the rows of `x` over the label space
/// `space ++ L'` (just `L'` for an empty search space).
pub fn predict_probs(
    model: &Model,
    bundle: &DatasetBundle,
    support: &Support,
    head: Head,
    space: &SearchSpace,
    x: &Matrix,
) -> Result<Matrix> {
    let arch = &model.arch;
    let store = &model.store;
    let c = arch.num_one_example;
    let width = space.len() + c;
    let q = embed(x, &arch.embed, store)?;
    match head {
        Head::Attention => {
            let mut samples = space.samples.clone();
            let mut labels = Vec::with_capacity(samples.len() + support.len());
            for &s in &space.samples {
                let pos = space.classes.iter().position(|&c| c == bundle.labels[s]).ok_or_else(|| {
                    Error::Contract(format!("search-space sample {s} is outside the search space"))
                })?;
                labels.push(pos);
            }
            samples.extend(&support.samples);
            labels.extend(support.labels.iter().map(|l| l + space.len()));
            let s = embed(&bundle.features.select_rows(&samples), &arch.embed, store)?;
            let weights = softmax_rows(&q.matmul_transposed(&s)?);
            weights.matmul(&Matrix::one_hot(&labels, width)?)
        }
        Head::Softmax => {
            let phi = store.require(PHI)?;
            let phi_prime = store.require(PHI_PRIME)?;
            let table = Matrix::from_fn(q.cols(), width, |i, j| {
                if j < space.len() {
                    phi[(i, space.classes[j])]
                } else {
                    phi_prime[(i, j - space.len())]
                }
            });
            Ok(softmax_rows(&q.matmul(&table)?))
        }
    }
}

/// Most probable column for each row of `probs`; ties go to the lowest
/// index.
pub fn predict_classes(probs: &Matrix) -> Vec<usize> {
    probs.row_iter().map(argmax).collect()
}

/// Predicted column for each held-out test sample.
pub fn predict_test(
    model: &Model,
    bundle: &DatasetBundle,
    support: &Support,
    head: Head,
    space: &SearchSpace,
) -> Result<Vec<usize>> {
    let x = bundle.features.select_rows(&support.test);
    Ok(predict_classes(&predict_probs(model, bundle, support, head, space, &x)?))
}
