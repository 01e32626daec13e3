//! The data embedding network and the two prediction heads.
//!
//! * softmax head: `softmax(phi^T g(x))`, restricted to the columns of the
//!   episode's label subset;
//! * attention head: `sum_i a(x, x_i) y_i` with `a` the softmax of cosine
//!   similarities between unit-norm embeddings.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numgrad::{Matrix, ParamStore, Tape, Var};

/// Two tanh layers followed by row-wise l2 normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedForward {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
}

/// Tape handles for the four tensors of a [`FeedForward`].
#[derive(Clone, Copy, Debug)]
pub struct FeedForwardVars {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

/// Glorot-uniform sample for a `fan_in x fan_out` weight.
pub fn glorot<R: Rng + ?Sized>(rng: &mut R, fan_in: usize, fan_out: usize) -> Matrix {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(fan_in, fan_out, |_, _| rng.random_range(-a..=a))
}

impl FeedForward {
    pub fn new(prefix: impl Into<String>, input: usize, hidden: usize, output: usize) -> Self {
        FeedForward {
            prefix: prefix.into(),
            input,
            hidden,
            output,
        }
    }

    pub fn param_names(&self) -> [String; 4] {
        ["w1", "b1", "w2", "b2"].map(|p| format!("{}.{p}", self.prefix))
    }

    /// Glorot-uniform weights and zero biases.
    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        let [w1, b1, w2, b2] = self.param_names();
        store.insert(w1, glorot(rng, self.input, self.hidden));
        store.insert(b1, Matrix::zeros(1, self.hidden));
        store.insert(w2, glorot(rng, self.hidden, self.output));
        store.insert(b2, Matrix::zeros(1, self.output));
    }

    fn check_shapes(&self, store: &ParamStore) -> Result<()> {
        let [w1, b1, w2, b2] = self.param_names();
        let expected = [
            (w1, (self.input, self.hidden)),
            (b1, (1, self.hidden)),
            (w2, (self.hidden, self.output)),
            (b2, (1, self.output)),
        ];
        for (name, shape) in expected {
            let got = store.require(&name)?.shape();
            if got != shape {
                return Err(Error::shape(
                    "feed_forward",
                    format!("`{name}` is {got:?}, expected {shape:?}"),
                ));
            }
        }
        Ok(())
    }

    /// Puts the network's parameters on the tape as differentiable leaves.
    pub fn register(&self, tape: &mut Tape, store: &ParamStore) -> Result<FeedForwardVars> {
        self.check_shapes(store)?;
        let [w1, b1, w2, b2] = self.param_names();
        Ok(FeedForwardVars {
            w1: tape.param(w1.clone(), store.require(&w1)?.clone()),
            b1: tape.param(b1.clone(), store.require(&b1)?.clone()),
            w2: tape.param(w2.clone(), store.require(&w2)?.clone()),
            b2: tape.param(b2.clone(), store.require(&b2)?.clone()),
        })
    }

    pub fn apply(&self, tape: &mut Tape, vars: &FeedForwardVars, x: Var) -> Result<Var> {
        let cols = tape.value(x).cols();
        if cols != self.input {
            return Err(Error::shape(
                "feed_forward",
                format!("input has {cols} columns, `{}` expects {}", self.prefix, self.input),
            ));
        }
        let h = tape.matmul(x, vars.w1)?;
        let h = tape.add_row_bias(h, vars.b1)?;
        let h = tape.tanh(h);
        let o = tape.matmul(h, vars.w2)?;
        let o = tape.add_row_bias(o, vars.b2)?;
        let o = tape.tanh(o);
        Ok(tape.l2_normalize_rows(o))
    }

    /// Forward pass without keeping the tape.
    pub fn forward(&self, store: &ParamStore, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.register(&mut tape, store)?;
        let input = tape.constant(x.clone());
        let out = self.apply(&mut tape, &vars, input)?;
        Ok(tape.value(out).clone())
    }
}

/// The data embedding network `g`.
pub type EmbeddingNet = FeedForward;

pub const EMBED_PREFIX: &str = "embed";
pub const PHI: &str = "phi";
pub const PHI_PRIME: &str = "phi_prime";

/// Which softmax matrix a head reads from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SoftmaxTable {
    /// `phi`, one column per data-rich class.
    Lots,
    /// `phi'`, one column per data-poor class.
    OneShot,
}

impl SoftmaxTable {
    pub fn param_name(self) -> &'static str {
        match self {
            SoftmaxTable::Lots => PHI,
            SoftmaxTable::OneShot => PHI_PRIME,
        }
    }
}

/// Unit-norm embeddings of the rows of `x`.
pub fn embed(x: &Matrix, net: &EmbeddingNet, store: &ParamStore) -> Result<Matrix> {
    net.forward(store, x)
}

/// Softmax over the `subset` columns of `phi` on the tape. `embeddings` is
/// `n x d`, `phi` is `d x C`; the result is `n x subset.len()`.
pub fn softmax_probs_var(tape: &mut Tape, embeddings: Var, phi: Var, subset: &[usize]) -> Result<Var> {
    if subset.is_empty() {
        return Err(Error::Contract("softmax prediction over an empty label subset".into()));
    }
    let cols = tape.select_cols(phi, subset)?;
    let logits = tape.matmul(embeddings, cols)?;
    Ok(tape.softmax_rows(logits))
}

/// Attentional prediction on the tape: `softmax(Q S^T) Y`. `support_labels`
/// index into a label space of `num_classes`.
pub fn attention_probs_var(
    tape: &mut Tape,
    queries: Var,
    support: Var,
    support_labels: &[usize],
    num_classes: usize,
) -> Result<Var> {
    if support_labels.is_empty() {
        return Err(Error::Contract("attention prediction with an empty support set".into()));
    }
    if tape.value(support).rows() != support_labels.len() {
        return Err(Error::shape(
            "attention_predict",
            format!(
                "{} support embeddings for {} labels",
                tape.value(support).rows(),
                support_labels.len()
            ),
        ));
    }
    let sims = tape.matmul_t(queries, support)?;
    let weights = tape.softmax_rows(sims);
    let y = tape.constant(Matrix::one_hot(support_labels, num_classes)?);
    tape.matmul(weights, y)
}

/// Softmax-head predictions (one row per row of `x`).
pub fn softmax_predict(
    x: &Matrix,
    net: &EmbeddingNet,
    store: &ParamStore,
    table: SoftmaxTable,
    subset: &[usize],
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, store)?;
    let input = tape.constant(x.clone());
    let e = net.apply(&mut tape, &vars, input)?;
    let phi = tape.constant(store.require(table.param_name())?.clone());
    let p = softmax_probs_var(&mut tape, e, phi, subset)?;
    Ok(tape.value(p).clone())
}

/// Attention-head predictions for the rows of `x` given a labelled support.
pub fn attention_predict(
    x: &Matrix,
    support_x: &Matrix,
    support_labels: &[usize],
    num_classes: usize,
    net: &EmbeddingNet,
    store: &ParamStore,
) -> Result<Matrix> {
    let mut tape = Tape::new();
    let vars = net.register(&mut tape, store)?;
    let q = tape.constant(x.clone());
    let q = net.apply(&mut tape, &vars, q)?;
    let s = tape.constant(support_x.clone());
    let s = net.apply(&mut tape, &vars, s)?;
    let p = attention_probs_var(&mut tape, q, s, support_labels, num_classes)?;
    Ok(tape.value(p).clone())
}
