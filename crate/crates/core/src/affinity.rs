//! Label-affinity kernels built from side information, and quasi-labels.
//!
//! Each source yields a class-by-class kernel: embedding tables go through a
//! learned [`MappingNet`] and a linear kernel on its unit-norm codes, trees
//! contribute their correlation-normalized covariance. The label kernel is
//! the uniform average over sources.

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{average_kernels_var, linear_gram_var};
use crate::numgrad::{softmax_in_place, Matrix, ParamStore, Tape, Var};
use crate::regression::FeedForward;
use crate::tree_cov::{normalize_covariance, TreeHierarchy};

/// Per-source mapping network `d_m -> d_c -> out` for class embeddings.
pub type MappingNet = FeedForward;

pub const MAPPING_OUTPUT: usize = 50;

/// Hidden width of a mapping network for `d_m`-dimensional embeddings.
pub fn mapping_hidden(input: usize) -> usize {
    if input > 100 {
        100
    } else {
        75
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum SideInfo {
    /// One row per class, rows named by `classes`.
    Embeddings { classes: Vec<String>, table: Matrix },
    Tree(TreeHierarchy),
}

#[derive(Clone, Debug, PartialEq)]
pub struct SideInfoSource {
    pub name: String,
    pub info: SideInfo,
}

impl SideInfoSource {
    pub fn embeddings(name: impl Into<String>, classes: Vec<String>, table: Matrix) -> Result<Self> {
        if classes.len() != table.rows() {
            return Err(Error::shape(
                "side_info",
                format!("{} class names for {} rows", classes.len(), table.rows()),
            ));
        }
        Ok(SideInfoSource {
            name: name.into(),
            info: SideInfo::Embeddings { classes, table },
        })
    }

    pub fn tree(name: impl Into<String>, tree: TreeHierarchy) -> Self {
        SideInfoSource {
            name: name.into(),
            info: SideInfo::Tree(tree),
        }
    }

    /// Re-indexes the source to the global class list. Classes the source
    /// does not mention stay uncovered; using them later is an error.
    pub fn align(&self, classes: &[String]) -> Result<AlignedSource> {
        let kind = match &self.info {
            SideInfo::Embeddings { classes: names, table } => {
                let mut out = Matrix::zeros(classes.len(), table.cols());
                let mut covered = vec![false; classes.len()];
                for (g, class) in classes.iter().enumerate() {
                    if let Some(r) = names.iter().position(|n| n == class) {
                        out.row_mut(g).copy_from_slice(table.row(r));
                        covered[g] = true;
                    }
                }
                (AlignedKind::Embeddings(out), covered)
            }
            SideInfo::Tree(tree) => {
                let b = normalize_covariance(&tree.covariance())?;
                let idx: Vec<Option<usize>> = classes.iter().map(|c| tree.class_index(c)).collect();
                let k = Matrix::from_fn(classes.len(), classes.len(), |i, j| match (idx[i], idx[j]) {
                    (Some(a), Some(b_)) => b[(a, b_)],
                    _ => 0.0,
                });
                (AlignedKind::Tree(k), idx.iter().map(Option::is_some).collect())
            }
        };
        Ok(AlignedSource {
            name: self.name.clone(),
            kind: kind.0,
            covered: kind.1,
            class_names: classes.to_vec(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
enum AlignedKind {
    Embeddings(Matrix),
    /// Normalized tree covariance over the global class list.
    Tree(Matrix),
}

/// A side-information source indexed by global class id.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedSource {
    pub name: String,
    kind: AlignedKind,
    covered: Vec<bool>,
    class_names: Vec<String>,
}

impl AlignedSource {
    pub fn is_tree(&self) -> bool {
        matches!(self.kind, AlignedKind::Tree(_))
    }

    pub fn embedding_dim(&self) -> Option<usize> {
        match &self.kind {
            AlignedKind::Embeddings(t) => Some(t.cols()),
            AlignedKind::Tree(_) => None,
        }
    }

    fn check_covered(&self, subset: &[usize]) -> Result<()> {
        for &c in subset {
            if !self.covered.get(c).copied().unwrap_or(false) {
                let class = self.class_names.get(c).map_or("?", String::as_str);
                return Err(Error::Config(format!(
                    "side-information source `{}` has no entry for class `{class}` (id {c})",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// The active side-information sources with their mapping networks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SideInfoSet {
    pub sources: Vec<AlignedSource>,
    /// One entry per source; `None` for trees.
    pub nets: Vec<Option<MappingNet>>,
}

/// Class kernel over a subset of global classes.
#[derive(Clone, Debug, PartialEq)]
pub struct LabelAffinity {
    /// Global class ids, in kernel order.
    pub classes: Vec<usize>,
    pub kernel: Matrix,
}

impl SideInfoSet {
    /// Builds the set with mapping networks sized by `hidden` (the
    /// `d_c` rule when `None`) and `output`.
    pub fn new(sources: Vec<AlignedSource>, hidden: Option<usize>, output: usize) -> Self {
        let nets = sources
            .iter()
            .map(|s| {
                s.embedding_dim().map(|d| {
                    MappingNet::new(
                        format!("map.{}", s.name),
                        d,
                        hidden.unwrap_or_else(|| mapping_hidden(d)),
                        output,
                    )
                })
            })
            .collect();
        SideInfoSet { sources, nets }
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn init<R: Rng + ?Sized>(&self, store: &mut ParamStore, rng: &mut R) {
        for net in self.nets.iter().flatten() {
            net.init(store, rng);
        }
    }

    pub fn param_names(&self) -> Vec<String> {
        self.nets
            .iter()
            .flatten()
            .flat_map(|n| n.param_names())
            .collect()
    }

    /// Label kernel over `subset` (global ids) on the tape.
    pub fn label_kernel_var(&self, tape: &mut Tape, store: &ParamStore, subset: &[usize]) -> Result<Var> {
        if self.sources.is_empty() {
            return Err(Error::Contract("label kernel needs at least one source".into()));
        }
        let mut per_source = Vec::with_capacity(self.sources.len());
        for (src, net) in self.sources.iter().zip(&self.nets) {
            src.check_covered(subset)?;
            let k = match (&src.kind, net) {
                (AlignedKind::Embeddings(table), Some(net)) => {
                    let vars = net.register(tape, store)?;
                    let rows = tape.constant(table.select_rows(subset));
                    let codes = net.apply(tape, &vars, rows)?;
                    linear_gram_var(tape, codes)?
                }
                (AlignedKind::Tree(b), _) => tape.constant(b.select_rows(subset).select_cols(subset)),
                (AlignedKind::Embeddings(_), None) => {
                    return Err(Error::Contract(format!("source `{}` has no mapping network", src.name)))
                }
            };
            per_source.push(k);
        }
        average_kernels_var(tape, &per_source)
    }

    pub fn build_label_kernel(&self, store: &ParamStore, subset: &[usize]) -> Result<LabelAffinity> {
        let mut tape = Tape::new();
        let k = self.label_kernel_var(&mut tape, store, subset)?;
        Ok(LabelAffinity {
            classes: subset.to_vec(),
            kernel: tape.value(k).clone(),
        })
    }
}

/// Unit-norm class codes `f(r_c)` for every row of an embedding table.
pub fn embed_classes(table: &Matrix, net: &MappingNet, store: &ParamStore) -> Result<Matrix> {
    net.forward(store, table)
}

/// Softmax of `kernel[y][t]` over the target rows `targets`.
pub fn attention_over_labels(kernel: &Matrix, y: usize, targets: &[usize]) -> Result<Vec<f64>> {
    if targets.is_empty() {
        return Err(Error::Contract("attention over an empty target set".into()));
    }
    let n = kernel.rows();
    if y >= n || targets.iter().any(|&t| t >= n) {
        return Err(Error::Contract(format!(
            "label index out of range for a {n}-class kernel"
        )));
    }
    let mut w: Vec<f64> = targets.iter().map(|&t| kernel[(y, t)]).collect();
    softmax_in_place(&mut w);
    Ok(w)
}

/// Soft label of class `y` over the label space `targets`.
///
/// `support` lists, per support sample, its class as a kernel row index.
/// Attention runs over support *samples*, so a class with several samples
/// collects several attention slots.
pub fn quasi_label(kernel: &Matrix, y: usize, support: &[usize], targets: &[usize]) -> Result<Vec<f64>> {
    let weights = attention_over_labels(kernel, y, support)?;
    let mut out = vec![0.0; targets.len()];
    for (&cls, w) in support.iter().zip(weights) {
        let pos = targets.iter().position(|&t| t == cls).ok_or_else(|| {
            Error::Contract(format!("support class {cls} is not in the target label space"))
        })?;
        out[pos] += w;
    }
    Ok(out)
}
