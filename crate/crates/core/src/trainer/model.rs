use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::TrainConfig;
use crate::affinity::{SideInfoSet, SideInfoSource};
use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::numgrad::ParamStore;
use crate::regression::{glorot, EmbeddingNet, EMBED_PREFIX, PHI, PHI_PRIME};

/// Network shapes and side information; parameters live in a
/// [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub embed: EmbeddingNet,
    pub side: SideInfoSet,
    pub num_lots: usize,
    pub num_one_example: usize,
}

impl Architecture {
    /// Selects the sources named in `cfg.sources` (all when absent) and
    /// aligns them to the bundle's classes.
    pub fn new(bundle: &DatasetBundle, sources: &[SideInfoSource], cfg: &TrainConfig) -> Result<Self> {
        let selected: Vec<&SideInfoSource> = match &cfg.sources {
            None => sources.iter().collect(),
            Some(names) => names
                .iter()
                .map(|n| {
                    sources.iter().find(|s| &s.name == n).ok_or_else(|| {
                        let known: Vec<&str> = sources.iter().map(|s| s.name.as_str()).collect();
                        Error::Config(format!("unknown side-information source `{n}` (available: {known:?})"))
                    })
                })
                .collect::<Result<_>>()?,
        };
        let aligned = selected
            .into_iter()
            .map(|s| s.align(&bundle.class_names))
            .collect::<Result<Vec<_>>>()?;
        Ok(Architecture {
            embed: EmbeddingNet::new(EMBED_PREFIX, bundle.feature_dim(), cfg.embed_hidden, cfg.embed_dim),
            side: SideInfoSet::new(aligned, cfg.mapping_hidden, cfg.mapping_dim),
            num_lots: bundle.num_lots(),
            num_one_example: bundle.num_one_example(),
        })
    }

    pub fn has_side_info(&self) -> bool {
        !self.side.is_empty()
    }

    /// Fresh parameters. The data-side parameters and the side-information
    /// networks draw from separate streams, so adding or removing sources
    /// leaves the data-side initialization unchanged.
    pub fn init(&self, seed: u64) -> ParamStore {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        self.embed.init(&mut store, &mut rng);
        let d = self.embed.output;
        store.insert(PHI, glorot(&mut rng, d, self.num_lots));
        store.insert(PHI_PRIME, glorot(&mut rng, d, self.num_one_example));
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(2);
        self.side.init(&mut store, &mut rng);
        store
    }

    /// Whether a parameter moves during fine-tuning.
    pub fn is_finetuned(&self, name: &str) -> bool {
        name == PHI_PRIME || self.embed.param_names().iter().any(|n| n == name)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub arch: Architecture,
    pub store: ParamStore,
}

impl Model {
    pub fn new(arch: Architecture, seed: u64) -> Self {
        let store = arch.init(seed);
        Model { arch, store }
    }
}
