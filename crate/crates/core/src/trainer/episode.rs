//! Support-set and episode sampling.

use rand::seq::index;
use rand::Rng;

use crate::data::DatasetBundle;
use crate::error::{Error, Result};

/// The labelled samples of the data-poor classes for one trial, with the
/// remaining samples held out for testing.
#[derive(Clone, Debug, PartialEq)]
pub struct Support {
    /// Sample indices, `shots` per class in class order.
    pub samples: Vec<usize>,
    /// Position of each sample's class within the data-poor pool.
    pub labels: Vec<usize>,
    pub test: Vec<usize>,
    pub test_labels: Vec<usize>,
}

impl Support {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn choose<R: Rng + ?Sized>(rng: &mut R, pool: &[usize], k: usize) -> Vec<usize> {
    index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect()
}

/// Draws `shots` labelled samples per data-poor class; everything else in
/// those classes becomes test data.
pub fn sample_support<R: Rng + ?Sized>(bundle: &DatasetBundle, shots: usize, rng: &mut R) -> Result<Support> {
    if shots == 0 {
        return Err(Error::Config("shots must be >= 1".into()));
    }
    let mut support = Support {
        samples: Vec::new(),
        labels: Vec::new(),
        test: Vec::new(),
        test_labels: Vec::new(),
    };
    for (pos, class) in bundle.one_example().into_iter().enumerate() {
        let pool = bundle.samples_of(class);
        if pool.len() <= shots {
            return Err(Error::Config(format!(
                "class `{}` has {} samples; {shots}-shot evaluation needs at least {}",
                bundle.class_names[class],
                pool.len(),
                shots + 1
            )));
        }
        let picked = choose(rng, pool, shots);
        support.samples.extend(&picked);
        support.labels.extend(std::iter::repeat_n(pos, shots));
        for &s in pool {
            if !picked.contains(&s) {
                support.test.push(s);
                support.test_labels.push(pos);
            }
        }
    }
    if support.samples.is_empty() {
        return Err(Error::Config("the one-example pool is empty".into()));
    }
    Ok(support)
}

/// `k` samples from each listed class, in class order.
pub fn sample_per_class<R: Rng + ?Sized>(
    bundle: &DatasetBundle,
    classes: &[usize],
    k: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(classes.len() * k);
    for &c in classes {
        let pool = bundle.samples_of(c);
        if pool.len() < k {
            return Err(Error::Config(format!(
                "class `{}` has {} samples, {k} requested",
                bundle.class_names[c],
                pool.len()
            )));
        }
        out.extend(choose(rng, pool, k));
    }
    Ok(out)
}

/// One training task.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    /// Sampled data-rich classes (global ids, ascending).
    pub lots: Vec<usize>,
    /// Data-poor classes (global ids).
    pub one_example: Vec<usize>,
    pub train: Vec<usize>,
    /// Positions within `lots`.
    pub train_labels: Vec<usize>,
    pub batch: Vec<usize>,
    pub batch_labels: Vec<usize>,
    pub support: Vec<usize>,
    /// Positions within `one_example`.
    pub support_labels: Vec<usize>,
}

impl Episode {
    /// Class list `L ++ L'` used by the label kernel.
    pub fn kernel_classes(&self) -> Vec<usize> {
        self.lots.iter().chain(&self.one_example).copied().collect()
    }

    /// Samples `S_train ++ S_batch ++ S'`.
    pub fn all_samples(&self) -> Vec<usize> {
        self.train
            .iter()
            .chain(&self.batch)
            .chain(&self.support)
            .copied()
            .collect()
    }

    /// Kernel row of every sample in [`Episode::all_samples`].
    pub fn kernel_index(&self) -> Vec<usize> {
        let off = self.lots.len();
        self.train_labels
            .iter()
            .chain(&self.batch_labels)
            .copied()
            .chain(self.support_labels.iter().map(|l| l + off))
            .collect()
    }
}

/// Samples `|L'|` data-rich classes, a training set matching the support's
/// per-class counts and a disjoint batch from the rest of those classes.
pub fn sample_episode<R: Rng + ?Sized>(
    bundle: &DatasetBundle,
    support: &Support,
    batch_size: usize,
    rng: &mut R,
) -> Result<Episode> {
    let one_example = bundle.one_example();
    let lots_pool = bundle.lots();
    let need = one_example.len();
    if lots_pool.len() < need {
        return Err(Error::Config(format!(
            "episodes need {need} lots classes, the pool has {}",
            lots_pool.len()
        )));
    }
    let mut per_class = vec![0; need];
    for &l in &support.labels {
        per_class[l] += 1;
    }

    let mut lots = choose(rng, &lots_pool, need);
    lots.sort_unstable();
    let mut episode = Episode {
        lots: lots.clone(),
        one_example,
        train: Vec::new(),
        train_labels: Vec::new(),
        batch: Vec::new(),
        batch_labels: Vec::new(),
        support: support.samples.clone(),
        support_labels: support.labels.clone(),
    };
    let mut rest = Vec::new();
    for (pos, &class) in lots.iter().enumerate() {
        let pool = bundle.samples_of(class);
        let k = per_class[pos];
        if pool.len() < k {
            return Err(Error::Config(format!(
                "class `{}` has {} samples, episodes need {k}",
                bundle.class_names[class],
                pool.len()
            )));
        }
        let picked = choose(rng, pool, k);
        for &s in pool {
            if !picked.contains(&s) {
                rest.push((s, pos));
            }
        }
        episode.train.extend(&picked);
        episode.train_labels.extend(std::iter::repeat_n(pos, k));
    }
    if rest.len() < batch_size {
        return Err(Error::Config(format!(
            "batch of {batch_size} requested but only {} samples remain in the sampled classes",
            rest.len()
        )));
    }
    for i in index::sample(rng, rest.len(), batch_size) {
        episode.batch.push(rest[i].0);
        episode.batch_labels.push(rest[i].1);
    }
    Ok(episode)
}
