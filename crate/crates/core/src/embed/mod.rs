//! Variational spectral embedding: a SELU encoder/decoder pair trained with
//! reconstruction, MMD-to-prior and silhouette losses, and the per-pixel
//! embedding of datacubes.

mod image;
pub mod losses;
mod model;
mod train;

pub use image::{EmbedMeta, EmbeddedImage, EMBED_MAGIC, EMBED_VERSION};
pub use losses::{loss_mmd, loss_rec, loss_sil, loss_total, mmd_rbf, EmbedSchedule, LossBreakdown};
pub use model::{EmbedderConfig, EmbedderModel, LatentVars};
pub use train::{train_embedder, EmbedEpoch, EmbedTrainConfig, EmbedTrainOutcome};

use std::path::Path;

use rayon::prelude::*;

use crate::diff::checkpoint;
use crate::error::{Error, Result};
use crate::synth::DataCube;

const EMBED_CHUNK: usize = 4096;

/// Latent means for every pixel of `cube`. Pixels with no counts map to the
/// code of the all-zero input.
pub fn embed_datacube(
    model: &EmbedderModel,
    cube: &DataCube,
    meta: EmbedMeta,
) -> Result<EmbeddedImage> {
    let e = cube.energy_bins();
    if e != model.config.input_dim {
        return Err(Error::Shape(format!(
            "cube has {e} energy bins, embedder expects {}",
            model.config.input_dim
        )));
    }
    let n = cube.pixel_count();
    let c = model.config.latent_dim;
    let chunks: Vec<Vec<f64>> = (0..n.div_ceil(EMBED_CHUNK))
        .into_par_iter()
        .map(|k| {
            let (s, t) = (k * EMBED_CHUNK, ((k + 1) * EMBED_CHUNK).min(n));
            let mut rows = Vec::with_capacity((t - s) * e);
            for i in s..t {
                let sp = cube.spectrum_at(i);
                let total: u64 = sp.iter().map(|&v| v as u64).sum();
                let inv = if total > 0 { 1.0 / total as f64 } else { 0.0 };
                rows.extend(sp.iter().map(|&v| v as f64 * inv));
            }
            model.encode_mu(&rows)
        })
        .collect::<Result<_>>()?;
    let data: Vec<f32> = chunks.into_iter().flatten().map(|v| v as f32).collect();
    EmbeddedImage::new(cube.height(), cube.width(), c, data, meta)
}

pub const EMBEDDER_KIND: &str = "embedder";

pub fn save_embedder(path: &Path, model: &EmbedderModel) -> Result<String> {
    let cfg = serde_json::to_value(&model.config).expect("config serializes");
    checkpoint::save_checkpoint(path, &model.store, EMBEDDER_KIND, cfg)
}

pub fn load_embedder(path: &Path) -> Result<(EmbedderModel, String)> {
    let (store, manifest) = checkpoint::load_checkpoint(path)?;
    if manifest.kind != EMBEDDER_KIND {
        return Err(Error::Format(format!(
            "{} holds a `{}` checkpoint, expected `{EMBEDDER_KIND}`",
            path.display(),
            manifest.kind
        )));
    }
    let cfg: EmbedderConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::json("embedder manifest config", e))?;
    Ok((EmbedderModel::with_params(cfg, &store)?, manifest.sha256))
}
