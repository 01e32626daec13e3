//! Label hierarchies and tree-structured covariance matrices.
//!
//! For leaves `i` and `j`, `B[i][j]` is the summed branch length on the path
//! from the root down to their nearest common ancestor, and `B[i][i]` is the
//! full root-to-leaf length. The root's own branch length is ignored.
//!
//! Tree files are tab-separated, one node per line:
//!
//! ```text
//! # node  parent  length  class
//! root    ROOT    0
//! felid   root    1.5
//! cat     felid   1.0     cat
//! ```

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::Rng;

use crate::error::{Error, Result};
use crate::numgrad::Matrix;

pub const ROOT_MARKER: &str = "ROOT";

#[derive(Clone, Debug, PartialEq)]
pub struct TreeNode {
    pub id: String,
    /// Index into [`TreeHierarchy::nodes`]; `None` for the root.
    pub parent: Option<usize>,
    pub branch_length: f64,
    pub class: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeHierarchy {
    nodes: Vec<TreeNode>,
    root: usize,
    /// Class names by class index.
    classes: Vec<String>,
    /// Node index of the leaf for each class.
    leaves: Vec<usize>,
}

/// Tree-structured covariance over the classes of a [`TreeHierarchy`].
#[derive(Clone, Debug, PartialEq)]
pub struct TreeCovariance(pub Matrix);

impl TreeCovariance {
    pub fn matrix(&self) -> &Matrix {
        &self.0
    }
}

impl TreeHierarchy {
    /// Builds and validates a hierarchy from `(id, parent id, length, class)`
    /// rows. `line` numbers are only used in error messages.
    fn from_rows(rows: Vec<(usize, String, Option<String>, f64, Option<String>)>) -> Result<Self> {
        let mut index: HashMap<&str, usize> = HashMap::new();
        for (k, (line, id, ..)) in rows.iter().enumerate() {
            if index.insert(id.as_str(), k).is_some() {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("duplicate node id `{id}`"),
                });
            }
        }

        let mut nodes = Vec::with_capacity(rows.len());
        let mut root = None;
        let mut classes: Vec<String> = Vec::new();
        let mut leaves: Vec<usize> = Vec::new();
        let mut class_seen: HashMap<&str, usize> = HashMap::new();
        for (k, (line, id, parent, length, class)) in rows.iter().enumerate() {
            if !length.is_finite() || *length < 0.0 {
                return Err(Error::Parse {
                    line: *line,
                    msg: format!("branch length {length} of `{id}` must be a finite value >= 0"),
                });
            }
            let parent_idx = match parent {
                None => {
                    if let Some(r) = root {
                        let first: &TreeNode = &nodes[r];
                        return Err(Error::Parse {
                            line: *line,
                            msg: format!("second root `{id}` (first root is `{}`)", first.id),
                        });
                    }
                    root = Some(k);
                    None
                }
                Some(p) => match index.get(p.as_str()) {
                    Some(&pi) => Some(pi),
                    None => {
                        return Err(Error::Parse {
                            line: *line,
                            msg: format!("parent `{p}` of `{id}` is not defined"),
                        })
                    }
                },
            };
            let class_idx = match class {
                None => None,
                Some(name) => {
                    if let Some(&prev) = class_seen.get(name.as_str()) {
                        return Err(Error::Parse {
                            line: *line,
                            msg: format!(
                                "class `{name}` already assigned to leaf `{}`",
                                rows[leaves[prev]].1
                            ),
                        });
                    }
                    class_seen.insert(name.as_str(), classes.len());
                    classes.push(name.clone());
                    leaves.push(k);
                    Some(classes.len() - 1)
                }
            };
            nodes.push(TreeNode {
                id: id.clone(),
                parent: parent_idx,
                branch_length: *length,
                class: class_idx,
            });
        }

        let line_of = |k: usize| rows[k].0;
        let root = root.ok_or_else(|| Error::Parse {
            line: rows.first().map_or(0, |r| r.0),
            msg: "no root node (a node whose parent is ROOT)".into(),
        })?;

        // Every node must reach the root without revisiting a node.
        for start in 0..nodes.len() {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = nodes[cur].parent {
                cur = p;
                steps += 1;
                if steps > nodes.len() {
                    return Err(Error::Parse {
                        line: line_of(start),
                        msg: format!("node `{}` is on a parent cycle", nodes[start].id),
                    });
                }
            }
        }

        let mut child_count = vec![0usize; nodes.len()];
        for n in &nodes {
            if let Some(p) = n.parent {
                child_count[p] += 1;
            }
        }
        for (k, n) in nodes.iter().enumerate() {
            match (child_count[k], n.class) {
                (0, None) => {
                    return Err(Error::Parse {
                        line: line_of(k),
                        msg: format!("leaf `{}` has no class label", n.id),
                    })
                }
                (c, Some(_)) if c > 0 => {
                    return Err(Error::Parse {
                        line: line_of(k),
                        msg: format!("internal node `{}` carries a class label", n.id),
                    })
                }
                _ => {}
            }
        }
        if classes.is_empty() {
            return Err(Error::Parse {
                line: line_of(root),
                msg: "tree has no labelled leaves".into(),
            });
        }

        Ok(TreeHierarchy {
            nodes,
            root,
            classes,
            leaves,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut rows = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = raw.split('\t').map(str::trim).collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(Error::Parse {
                    line,
                    msg: format!("expected 3 or 4 tab-separated fields, got {}", fields.len()),
                });
            }
            let id = fields[0];
            if id.is_empty() || id == ROOT_MARKER {
                return Err(Error::Parse {
                    line,
                    msg: format!("invalid node id `{id}`"),
                });
            }
            let parent = (fields[1] != ROOT_MARKER).then(|| fields[1].to_string());
            if parent.as_deref() == Some(id) {
                return Err(Error::Parse {
                    line,
                    msg: format!("node `{id}` lists itself as parent (cycle)"),
                });
            }
            let length: f64 = fields[2].parse().map_err(|_| Error::Parse {
                line,
                msg: format!("branch length `{}` is not a number", fields[2]),
            })?;
            let class = fields
                .get(3)
                .filter(|c| !c.is_empty())
                .map(|c| c.to_string());
            rows.push((line, id.to_string(), parent, length, class));
        }
        TreeHierarchy::from_rows(rows)
    }

    /// Serializes to the tab-separated node-list format.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# node\tparent\tlength\tclass\n");
        for n in &self.nodes {
            let parent = n.parent.map_or(ROOT_MARKER, |p| self.nodes[p].id.as_str());
            let _ = write!(out, "{}\t{}\t{}", n.id, parent, n.branch_length);
            if let Some(c) = n.class {
                let _ = write!(out, "\t{}", self.classes[c]);
            }
            out.push('\n');
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn class_names(&self) -> &[String] {
        &self.classes
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == name)
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Node indices from the leaf of `class` up to, but excluding, the root.
    fn lineage(&self, class: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut cur = self.leaves[class];
        while let Some(p) = self.nodes[cur].parent {
            out.push(cur);
            cur = p;
        }
        out
    }

    /// Scales every branch length by `factor`.
    pub fn scaled(&self, factor: f64) -> TreeHierarchy {
        let mut t = self.clone();
        for n in &mut t.nodes {
            n.branch_length *= factor;
        }
        t
    }

    /// Covariance via explicit nearest-common-ancestor search.
    pub fn covariance(&self) -> TreeCovariance {
        let c = self.num_classes();
        let lineages: Vec<Vec<usize>> = (0..c).map(|k| self.lineage(k)).collect();
        let mut b = Matrix::zeros(c, c);
        for i in 0..c {
            for j in i..c {
                // Walk i's lineage from the leaf upward; the first node also on
                // j's lineage is the NCA below the root.
                let nca_depth = lineages[i]
                    .iter()
                    .position(|n| lineages[j].contains(n))
                    .map_or(0.0, |pos| {
                        lineages[i][pos..]
                            .iter()
                            .map(|&n| self.nodes[n].branch_length)
                            .sum()
                    });
                b[(i, j)] = nca_depth;
                b[(j, i)] = nca_depth;
            }
        }
        TreeCovariance(b)
    }

    /// Topology indicator `V` (classes x non-root nodes) and branch lengths.
    pub fn topology(&self) -> (Matrix, Vec<f64>) {
        let non_root: Vec<usize> = (0..self.nodes.len()).filter(|&k| k != self.root).collect();
        let column: HashMap<usize, usize> =
            non_root.iter().enumerate().map(|(col, &k)| (k, col)).collect();
        let mut v = Matrix::zeros(self.num_classes(), non_root.len());
        for c in 0..self.num_classes() {
            for n in self.lineage(c) {
                v[(c, column[&n])] = 1.0;
            }
        }
        let lengths = non_root.iter().map(|&k| self.nodes[k].branch_length).collect();
        (v, lengths)
    }

    /// Covariance via `V D V^T`.
    pub fn covariance_vdv(&self) -> TreeCovariance {
        let (v, lengths) = self.topology();
        let mut vd = v.clone();
        for i in 0..vd.rows() {
            for (x, l) in vd.row_mut(i).iter_mut().zip(&lengths) {
                *x *= l;
            }
        }
        TreeCovariance(vd.matmul_transposed(&v).expect("V D and V share columns"))
    }
}

/// Correlation form `B_ij / sqrt(B_ii B_jj)`.
pub fn normalize_covariance(b: &TreeCovariance) -> Result<Matrix> {
    let m = b.matrix();
    let diag: Vec<f64> = (0..m.rows()).map(|i| m[(i, i)]).collect();
    if let Some(i) = diag.iter().position(|&d| d <= 0.0) {
        return Err(Error::Contract(format!(
            "class {i} has zero root-to-leaf length; cannot normalize"
        )));
    }
    Ok(Matrix::from_fn(m.rows(), m.cols(), |i, j| {
        if i == j {
            1.0
        } else {
            m[(i, j)] / (diag[i] * diag[j]).sqrt()
        }
    }))
}

/// Gathers a class-level kernel into a sample-level one: entry `(i, j)` is
/// `class_kernel[labels[i]][labels[j]]`.
pub fn expand_to_samples(class_kernel: &Matrix, labels: &[usize]) -> Result<Matrix> {
    let c = class_kernel.rows();
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Contract(format!(
            "label {bad} out of range for a {c}-class kernel"
        )));
    }
    Ok(Matrix::from_fn(labels.len(), labels.len(), |i, j| {
        class_kernel[(labels[i], labels[j])]
    }))
}

/// Random tree with `leaves` labelled leaves (`c0`, `c1`, ...). Internal
/// nodes get between two and four children; lengths are uniform on
/// `[0, max_len]`.
pub fn random_tree<R: Rng + ?Sized>(rng: &mut R, leaves: usize, max_len: f64) -> TreeHierarchy {
    assert!(leaves >= 1, "a tree needs at least one leaf");
    let mut rows = vec![(0, "n0".to_string(), None, 0.0, None)];
    let mut next_id = 1;
    let mut next_class = 0;
    // (node name, leaves to place below it)
    let mut stack = vec![("n0".to_string(), leaves)];
    while let Some((parent, count)) = stack.pop() {
        if count == 1 && parent != "n0" {
            // the parent itself becomes the leaf; relabel its row
            let row = rows.iter_mut().find(|r| r.1 == parent).unwrap();
            row.4 = Some(format!("c{next_class}"));
            next_class += 1;
            continue;
        }
        let arity = rng.random_range(2..=4usize).min(count);
        let mut sizes = vec![1usize; arity];
        for _ in sizes.len()..count {
            let k = rng.random_range(0..sizes.len());
            sizes[k] += 1;
        }
        for size in sizes {
            let id = format!("n{next_id}");
            next_id += 1;
            rows.push((0, id.clone(), Some(parent.clone()), rng.random_range(0.0..=max_len), None));
            stack.push((id, size));
        }
    }
    TreeHierarchy::from_rows(rows).expect("generated trees are valid")
}
