//! JSON manifests that address every artifact explicitly. Paths inside a
//! manifest are relative to the directory holding it.

use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use serde::{Deserialize, Serialize};

use crate::context::read_json;

pub const DATASET_FORMAT: &str = "xrecolor-dataset";
pub const SPECTRA_FORMAT: &str = "xrecolor-spectra";
pub const PAIRS_FORMAT: &str = "xrecolor-pairs";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetItem {
    pub name: String,
    pub source: String,
    pub rgb: String,
    pub cube: String,
    pub cube_sha256: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub palette_id: String,
    pub image_height: usize,
    pub image_width: usize,
    pub energy_bins: usize,
    pub items: Vec<DatasetItem>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectraManifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub seed: u64,
    pub energy_bins: usize,
    /// Cube order used by the provenance triples in each set.
    pub cubes: Vec<String>,
    pub train: String,
    pub val: String,
    pub test: String,
    pub sizes: [usize; 3],
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairItem {
    pub name: String,
    pub embedded: String,
    pub rgb: String,
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PairsManifest {
    pub format: String,
    pub version: String,
    pub config_hash: String,
    pub embedder_sha256: String,
    pub latent_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub items: Vec<PairItem>,
}

/// A parsed manifest together with the directory its paths are relative to.
pub struct Loaded<T> {
    pub manifest: T,
    pub base: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base.join(rel)
    }
}

fn load<T: serde::de::DeserializeOwned>(
    path: &Path,
    format: &str,
    found: impl Fn(&T) -> &str,
) -> Result<Loaded<T>> {
    let manifest: T = read_json(path, format)?;
    if found(&manifest) != format {
        bail!(
            "{} has format `{}`, expected `{format}`",
            path.display(),
            found(&manifest)
        );
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { manifest, base })
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Loaded<Self>> {
        load(path, DATASET_FORMAT, |m: &Self| &m.format)
    }
}

impl SpectraManifest {
    pub fn load(path: &Path) -> Result<Loaded<Self>> {
        load(path, SPECTRA_FORMAT, |m: &Self| &m.format)
    }
}

impl PairsManifest {
    pub fn load(path: &Path) -> Result<Loaded<Self>> {
        load(path, PAIRS_FORMAT, |m: &Self| &m.format)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &PairItem> {
        self.items.iter().filter(move |i| i.split == split)
    }
}

/// Splits `n` items with a seeded shuffle: (train, val, test) labels in input order.
pub fn assign_splits(
    n: usize,
    fractions: xrecolor::synth::SplitFractions,
    seed: u64,
) -> Vec<Split> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut xrecolor::rng::stream(seed, &[0x5_91]));
    let (train, val, _) = fractions.sizes(n);
    let mut out = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        out[i] = if rank < train {
            Split::Train
        } else if rank < train + val {
            Split::Val
        } else {
            Split::Test
        };
    }
    out
}
