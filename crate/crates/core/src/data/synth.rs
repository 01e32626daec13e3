//! Synthetic one-shot benchmark with controllable class structure.
//!
//! Class prototypes are unit vectors built from nested group directions
//! (shared by related classes) plus a class-specific direction. Samples add
//! isotropic Gaussian noise. Embedding side information mixes each prototype
//! with independent noise according to `fidelity`; the tree source is an
//! average-linkage agglomeration of the prototypes with unit branches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{DatasetBundle, SplitManifest};
use crate::affinity::SideInfoSource;
use crate::error::{Error, Result};
use crate::numgrad::{dot, Matrix};
use crate::tree_cov::TreeHierarchy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub lots_classes: usize,
    pub one_example_classes: usize,
    pub samples_per_class: usize,
    pub feature_dim: usize,
    /// Weight of the class-specific direction relative to each shared group
    /// direction. Large values make prototypes nearly independent.
    pub separation: f64,
    /// Expected Euclidean norm of the per-sample noise.
    pub noise: f64,
    /// Mixing weight of the prototype in each class embedding.
    pub fidelity: f64,
    /// Number of nested group levels shared between classes.
    pub tree_depth: usize,
    pub embedding_sources: usize,
    pub tree_source: bool,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            lots_classes: 10,
            one_example_classes: 5,
            samples_per_class: 50,
            feature_dim: 64,
            separation: 1.0,
            noise: 1.5,
            fidelity: 0.9,
            tree_depth: 3,
            embedding_sources: 2,
            tree_source: true,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("lots_classes", self.lots_classes),
            ("one_example_classes", self.one_example_classes),
            ("samples_per_class", self.samples_per_class),
            ("feature_dim", self.feature_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("synth: {name} must be >= 1")));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(Error::Config(format!("synth: noise {} must be >= 0", self.noise)));
        }
        if !(0.0..=1.0).contains(&self.fidelity) {
            return Err(Error::Config(format!(
                "synth: fidelity {} must lie in [0, 1]",
                self.fidelity
            )));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::Config(format!(
                "synth: separation {} must be > 0",
                self.separation
            )));
        }
        Ok(())
    }
}

/// Generated data together with its side-information sources and the
/// ground-truth prototypes.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticData {
    pub bundle: DatasetBundle,
    pub sources: Vec<SideInfoSource>,
    pub prototypes: Matrix,
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
    let n = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    v
}

pub fn class_names(spec: &SynthSpec) -> (Vec<String>, Vec<String>) {
    let lots = (0..spec.lots_classes).map(|i| format!("lots{i:02}")).collect();
    let novel = (0..spec.one_example_classes)
        .map(|i| format!("novel{i:02}"))
        .collect();
    (lots, novel)
}

pub fn generate_synthetic(spec: &SynthSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c = spec.lots_classes + spec.one_example_classes;
    let d = spec.feature_dim;

    // Nested groups over a random class order so both pools share groups.
    let mut order: Vec<usize> = (0..c).collect();
    order.shuffle(&mut rng);
    let mut position = vec![0; c];
    for (p, &cls) in order.iter().enumerate() {
        position[cls] = p;
    }
    let mut protos = Matrix::zeros(c, d);
    for level in 1..=spec.tree_depth {
        let groups = (1usize << level.min(20)).min(c);
        let dirs: Vec<Vec<f64>> = (0..groups).map(|_| unit_gaussian(&mut rng, d)).collect();
        for cls in 0..c {
            let g = position[cls] * groups / c;
            for (p, v) in protos.row_mut(cls).iter_mut().zip(&dirs[g]) {
                *p += v;
            }
        }
    }
    for cls in 0..c {
        let own = unit_gaussian(&mut rng, d);
        let row = protos.row_mut(cls);
        for (p, v) in row.iter_mut().zip(&own) {
            *p += spec.separation * v;
        }
        let n = dot(row, row).sqrt();
        row.iter_mut().for_each(|x| *x /= n);
    }

    let n = c * spec.samples_per_class;
    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let (lots, novel) = class_names(spec);
    let all_names: Vec<String> = lots.iter().chain(&novel).cloned().collect();
    let noise_scale = spec.noise / (d as f64).sqrt();
    for cls in 0..c {
        for s in 0..spec.samples_per_class {
            let row = features.row_mut(cls * spec.samples_per_class + s);
            for (x, p) in row.iter_mut().zip(protos.row(cls)) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = p + noise_scale * z;
            }
            labels.push(all_names[cls].clone());
        }
    }
    let bundle = DatasetBundle::new(
        features,
        &labels,
        &SplitManifest {
            lots,
            one_example: novel,
        },
    )?;

    let mut sources = Vec::new();
    for m in 0..spec.embedding_sources {
        let mut table = Matrix::zeros(c, d);
        for cls in 0..c {
            let noise = unit_gaussian(&mut rng, d);
            for ((t, p), z) in table.row_mut(cls).iter_mut().zip(protos.row(cls)).zip(&noise) {
                *t = spec.fidelity * p + (1.0 - spec.fidelity) * z;
            }
        }
        sources.push(SideInfoSource::embeddings(
            format!("embed{m}"),
            all_names.clone(),
            table,
        )?);
    }
    if spec.tree_source {
        sources.push(SideInfoSource::tree(
            "hierarchy",
            agglomerative_tree(&protos, &all_names)?,
        ));
    }

    Ok(SyntheticData {
        bundle,
        sources,
        prototypes: protos,
    })
}

/// Average-linkage agglomerative tree on cosine similarity; every branch has
/// unit length.
pub fn agglomerative_tree(points: &Matrix, names: &[String]) -> Result<TreeHierarchy> {
    let c = points.rows();
    let norms: Vec<f64> = points.row_iter().map(|r| dot(r, r).sqrt().max(1e-300)).collect();
    let sim = Matrix::from_fn(c, c, |i, j| {
        dot(points.row(i), points.row(j)) / (norms[i] * norms[j])
    });

    // (node id, member classes)
    let mut clusters: Vec<(String, Vec<usize>)> =
        (0..c).map(|i| (format!("leaf_{}", names[i]), vec![i])).collect();
    let mut lines: Vec<String> = Vec::new();
    let mut parents: Vec<(String, String)> = Vec::new();
    let mut next = 0;
    while clusters.len() > 1 {
        let mut best = (0, 1, f64::NEG_INFINITY);
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let (ma, mb) = (&clusters[a].1, &clusters[b].1);
                let sim = &sim;
                let total: f64 = ma.iter().flat_map(|&i| mb.iter().map(move |&j| sim[(i, j)])).sum();
                let avg = total / (ma.len() * mb.len()) as f64;
                if avg > best.2 {
                    best = (a, b, avg);
                }
            }
        }
        let (a, b, _) = best;
        let cb = clusters.remove(b);
        let ca = clusters.remove(a);
        let id = format!("group{next}");
        next += 1;
        parents.push((ca.0, id.clone()));
        parents.push((cb.0, id.clone()));
        let mut members = ca.1;
        members.extend(cb.1);
        clusters.push((id, members));
    }
    let root = clusters.pop().map(|c| c.0).unwrap_or_default();
    if c == 1 {
        lines.push("root\tROOT\t0".to_string());
        lines.push(format!("leaf_{}\troot\t1\t{}", names[0], names[0]));
    } else {
        lines.push(format!("{root}\tROOT\t0"));
        for (child, parent) in parents.iter().rev() {
            match child.strip_prefix("leaf_") {
                Some(class) => lines.push(format!("{child}\t{parent}\t1\t{class}")),
                None => lines.push(format!("{child}\t{parent}\t1")),
            }
        }
    }
    TreeHierarchy::parse(&lines.join("\n"))
}
