//! Training objectives on the tape.

use super::config::{Head, TrainConfig};
use super::episode::{Episode, Support};
use super::model::Architecture;
use crate::affinity::quasi_label;
use crate::error::{Error, Result};
use crate::kernels::{hsic_var, linear_gram_var};
use crate::numgrad::{Matrix, ParamStore, Tape, Var};
use crate::regression::{attention_probs_var, softmax_probs_var, PHI, PHI_PRIME};

/// Which terms enter the combined objective.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Terms {
    pub alpha: f64,
    pub hsic: bool,
    pub quasi: bool,
}

impl Terms {
    pub fn from_config(cfg: &TrainConfig) -> Self {
        Terms {
            alpha: cfg.alpha,
            hsic: cfg.hsic_term,
            quasi: cfg.quasi_term,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ObjectiveVars {
    pub o1: Var,
    pub o2: Option<Var>,
    pub o3: Option<Var>,
    pub total: Var,
}

/// `sum(targets * log(probs)) / rows`.
pub fn mean_log_likelihood(tape: &mut Tape, probs: Var, targets: Matrix) -> Result<Var> {
    let n = targets.rows().max(1) as f64;
    let t = tape.constant(targets);
    let logp = tape.log_clamped(probs);
    let h = tape.hadamard(t, logp)?;
    let s = tape.sum(h);
    Ok(tape.scale(s, 1.0 / n))
}

struct EpisodeEmbeddings {
    all: Var,
    train: Var,
    batch: Var,
    support: Var,
}

fn range(start: usize, len: usize) -> Vec<usize> {
    (start..start + len).collect()
}

fn embed_episode(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    ep: &Episode,
) -> Result<EpisodeEmbeddings> {
    let vars = arch.embed.register(tape, store)?;
    let x = tape.constant(features.select_rows(&ep.all_samples()));
    let all = arch.embed.apply(tape, &vars, x)?;
    let (nt, nb, ns) = (ep.train.len(), ep.batch.len(), ep.support.len());
    Ok(EpisodeEmbeddings {
        all,
        train: tape.select_rows(all, &range(0, nt))?,
        batch: tape.select_rows(all, &range(nt, nb))?,
        support: tape.select_rows(all, &range(nt + nb, ns))?,
    })
}

fn param(tape: &mut Tape, store: &ParamStore, name: &str) -> Result<Var> {
    Ok(tape.param(name, store.require(name)?.clone()))
}

fn o1_var(
    tape: &mut Tape,
    store: &ParamStore,
    emb: &EpisodeEmbeddings,
    ep: &Episode,
    head: Head,
) -> Result<Var> {
    let probs = match head {
        Head::Attention => attention_probs_var(tape, emb.batch, emb.train, &ep.train_labels, ep.lots.len())?,
        Head::Softmax => {
            let phi = param(tape, store, PHI)?;
            softmax_probs_var(tape, emb.batch, phi, &ep.lots)?
        }
    };
    let targets = Matrix::one_hot(&ep.batch_labels, ep.lots.len())?;
    mean_log_likelihood(tape, probs, targets)
}

fn o2_var(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    emb: &EpisodeEmbeddings,
    ep: &Episode,
) -> Result<Var> {
    let kc = arch.side.label_kernel_var(tape, store, &ep.kernel_classes())?;
    let idx = ep.kernel_index();
    let rows = tape.select_rows(kc, &idx)?;
    let kr = tape.select_cols(rows, &idx)?;
    let kg = linear_gram_var(tape, emb.all)?;
    hsic_var(tape, kg, kr)
}

/// Soft labels over `L'` for every batch sample, from the current label
/// kernel. They enter the tape as constants.
pub fn quasi_labels(arch: &Architecture, store: &ParamStore, ep: &Episode) -> Result<Matrix> {
    let kernel = arch.side.build_label_kernel(store, &ep.kernel_classes())?.kernel;
    let off = ep.lots.len();
    let support: Vec<usize> = ep.support_labels.iter().map(|l| l + off).collect();
    let targets = range(off, ep.one_example.len());
    let mut out = Matrix::zeros(ep.batch.len(), targets.len());
    for (i, &l) in ep.batch_labels.iter().enumerate() {
        let q = quasi_label(&kernel, l, &support, &targets)?;
        out.row_mut(i).copy_from_slice(&q);
    }
    Ok(out)
}

fn o3_var(
    tape: &mut Tape,
    store: &ParamStore,
    emb: &EpisodeEmbeddings,
    ep: &Episode,
    head: Head,
    soft: Matrix,
) -> Result<Var> {
    if soft.shape() != (ep.batch.len(), ep.one_example.len()) {
        return Err(Error::shape(
            "objective_o3",
            format!("quasi-labels are {:?} for a {}-sample batch", soft.shape(), ep.batch.len()),
        ));
    }
    let c = ep.one_example.len();
    let probs = match head {
        Head::Attention => attention_probs_var(tape, emb.batch, emb.support, &ep.support_labels, c)?,
        Head::Softmax => {
            let phi = param(tape, store, PHI_PRIME)?;
            softmax_probs_var(tape, emb.batch, phi, &range(0, c))?
        }
    };
    mean_log_likelihood(tape, probs, soft)
}

/// Builds `O1 + alpha (O2 + O3)`. The side-information terms are recorded
/// whenever sources are present and the term is enabled; when `alpha` is 0
/// the total is `O1` itself.
pub fn objective_vars(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    ep: &Episode,
    head: Head,
    terms: Terms,
) -> Result<ObjectiveVars> {
    let soft = if arch.has_side_info() && terms.quasi {
        Some(quasi_labels(arch, store, ep)?)
    } else {
        None
    };
    objective_vars_with_quasi(tape, arch, store, features, ep, head, terms, soft)
}

/// [`objective_vars`] with the quasi-labels supplied by the caller.
#[allow(clippy::too_many_arguments)]
pub fn objective_vars_with_quasi(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    ep: &Episode,
    head: Head,
    terms: Terms,
    soft: Option<Matrix>,
) -> Result<ObjectiveVars> {
    let emb = embed_episode(tape, arch, store, features, ep)?;
    let o1 = o1_var(tape, store, &emb, ep, head)?;
    let side = arch.has_side_info();
    let o2 = if side && terms.hsic {
        Some(o2_var(tape, arch, store, &emb, ep)?)
    } else {
        None
    };
    let o3 = match soft {
        Some(soft) if side && terms.quasi => Some(o3_var(tape, store, &emb, ep, head, soft)?),
        _ if side && terms.quasi => {
            return Err(Error::Contract("quasi-label term enabled without quasi-labels".into()))
        }
        _ => None,
    };
    let extra = match (o2, o3) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    };
    let total = match extra {
        Some(e) if terms.alpha != 0.0 => {
            let scaled = tape.scale(e, terms.alpha);
            tape.add(o1, scaled)?
        }
        _ => o1,
    };
    Ok(ObjectiveVars { o1, o2, o3, total })
}

fn require_side(arch: &Architecture) -> Result<()> {
    if arch.has_side_info() {
        Ok(())
    } else {
        Err(Error::Contract("objective needs at least one side-information source".into()))
    }
}

pub fn o1_on_tape(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    ep: &Episode,
    head: Head,
) -> Result<Var> {
    let emb = embed_episode(tape, arch, store, features, ep)?;
    o1_var(tape, store, &emb, ep, head)
}

pub fn o2_on_tape(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    ep: &Episode,
) -> Result<Var> {
    require_side(arch)?;
    let emb = embed_episode(tape, arch, store, features, ep)?;
    o2_var(tape, arch, store, &emb, ep)
}

/// `O3` against the given quasi-labels.
pub fn o3_on_tape(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    ep: &Episode,
    head: Head,
    soft: &Matrix,
) -> Result<Var> {
    let emb = embed_episode(tape, arch, store, features, ep)?;
    o3_var(tape, store, &emb, ep, head, soft.clone())
}

fn evaluate<F>(f: F) -> Result<f64>
where
    F: FnOnce(&mut Tape) -> Result<Var>,
{
    let mut tape = Tape::new();
    let v = f(&mut tape)?;
    tape.value(v).scalar()
}

/// Mean log-likelihood of the batch labels given the training set.
pub fn objective_o1(arch: &Architecture, store: &ParamStore, features: &Matrix, ep: &Episode, head: Head) -> Result<f64> {
    evaluate(|t| o1_on_tape(t, arch, store, features, ep, head))
}

/// HSIC between the episode's embedding Gram matrix and the expanded label
/// kernel.
pub fn objective_o2(arch: &Architecture, store: &ParamStore, features: &Matrix, ep: &Episode) -> Result<f64> {
    evaluate(|t| o2_on_tape(t, arch, store, features, ep))
}

/// Mean log-likelihood of the batch quasi-labels given the support set.
pub fn objective_o3(arch: &Architecture, store: &ParamStore, features: &Matrix, ep: &Episode, head: Head) -> Result<f64> {
    require_side(arch)?;
    let soft = quasi_labels(arch, store, ep)?;
    evaluate(|t| o3_on_tape(t, arch, store, features, ep, head, &soft))
}

/// Mean log-likelihood of the support labels given the support set itself.
pub fn finetune_on_tape(
    tape: &mut Tape,
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    support: &Support,
    head: Head,
) -> Result<Var> {
    let vars = arch.embed.register(tape, store)?;
    let x = tape.constant(features.select_rows(&support.samples));
    let e = arch.embed.apply(tape, &vars, x)?;
    let c = arch.num_one_example;
    let probs = match head {
        Head::Attention => attention_probs_var(tape, e, e, &support.labels, c)?,
        Head::Softmax => {
            let phi = param(tape, store, PHI_PRIME)?;
            softmax_probs_var(tape, e, phi, &range(0, c))?
        }
    };
    mean_log_likelihood(tape, probs, Matrix::one_hot(&support.labels, c)?)
}

pub fn finetune_objective(
    arch: &Architecture,
    store: &ParamStore,
    features: &Matrix,
    support: &Support,
    head: Head,
) -> Result<f64> {
    evaluate(|t| finetune_on_tape(t, arch, store, features, support, head))
}
