use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use log::warn;
use serde::Serialize;
use xrecolor::embed::losses::reconstruction_error;
use xrecolor::embed::{
    embed_datacube, load_embedder, save_embedder, train_embedder, EmbedEpoch, EmbedMeta,
};
use xrecolor::synth::{DataCube, SpectrumSet};

use crate::context::{relative_path, write_json, Ctx, VERSION};
use crate::manifest::{DatasetManifest, PairItem, PairsManifest, SpectraManifest, PAIRS_FORMAT};

#[derive(clap::Args)]
pub struct TrainEmbedArgs {
    /// Spectra manifest written by `sample-spectra`.
    #[arg(long)]
    pub spectra: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Serialize)]
struct TrainEmbedReport {
    checkpoint: String,
    checkpoint_sha256: String,
    trainable_parameters: usize,
    train_spectra: usize,
    val_spectra: usize,
    best_epoch: usize,
    best_val_rec: f64,
    test_rec: Option<f64>,
    history: Vec<EmbedEpoch>,
}

fn load_rows(set: &SpectrumSet, input_dim: usize, what: &str) -> Result<Vec<f64>> {
    if !set.is_empty() && set.energy_bins != input_dim {
        bail!(
            "{what} spectra have {} bins but embed.model.input_dim is {input_dim}",
            set.energy_bins
        );
    }
    set.normalized_rows()
        .with_context(|| format!("normalizing {what} spectra"))
}

pub fn train(ctx: &mut Ctx, args: TrainEmbedArgs) -> Result<()> {
    let cfg = &mut ctx.config.embed;
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    let spectra = SpectraManifest::load(&args.spectra)?;
    let dim = ctx.config.embed.model.input_dim;
    let load = |rel: &str, what: &str| -> Result<Vec<f64>> {
        let set = SpectrumSet::load(&spectra.resolve(rel))
            .with_context(|| format!("loading {what} spectra"))?;
        load_rows(&set, dim, what)
    };
    let train = load(&spectra.manifest.train, "train")?;
    if train.is_empty() {
        bail!("the training split of {} is empty", args.spectra.display());
    }
    let mut val = load(&spectra.manifest.val, "validation")?;
    if val.is_empty() {
        warn!("validation split is empty, validating on the training spectra");
        val = train.clone();
    }
    let test = load(&spectra.manifest.test, "test")?;

    let outcome = train_embedder(&train, &val, &ctx.config.embed)?;
    let model = &outcome.model;
    let test_rec = if test.is_empty() {
        None
    } else {
        Some(reconstruction_error(&test, &model.reconstruct(&test)?))
    };
    let ckpt = ctx.ensure_out_dir("")?.join("embedder.xckp");
    let sha = save_embedder(&ckpt, model)?;
    let report = TrainEmbedReport {
        checkpoint: "embedder.xckp".into(),
        checkpoint_sha256: sha,
        trainable_parameters: model.trainable_parameters(),
        train_spectra: train.len() / dim,
        val_spectra: val.len() / dim,
        best_epoch: outcome.best_epoch,
        best_val_rec: outcome.history[outcome.best_epoch].val_rec,
        test_rec,
        history: outcome.history,
    };
    let path = ctx.write_report("train_embed_report.json", "train-embed", &report)?;
    println!(
        "embedder trained: best epoch {} val L_rec {:.6e} -> {}",
        report.best_epoch,
        report.best_val_rec,
        path.display()
    );
    Ok(())
}

#[derive(clap::Args)]
pub struct EmbedArgs {
    /// Dataset manifest written by `gen`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Embedder checkpoint written by `train-embed`.
    #[arg(long)]
    pub checkpoint: PathBuf,
}

pub fn embed(ctx: &mut Ctx, args: EmbedArgs) -> Result<()> {
    let dataset = DatasetManifest::load(&args.manifest)?;
    let (model, sha) = load_embedder(&args.checkpoint)
        .with_context(|| format!("loading embedder checkpoint {}", args.checkpoint.display()))?;
    if model.config.input_dim != dataset.manifest.energy_bins {
        bail!(
            "embedder expects {} energy bins but the dataset has {}",
            model.config.input_dim,
            dataset.manifest.energy_bins
        );
    }
    let dir = ctx.ensure_out_dir("embedded")?;
    let mut items = Vec::with_capacity(dataset.manifest.items.len());
    for item in &dataset.manifest.items {
        let cube = DataCube::load(&dataset.resolve(&item.cube))
            .with_context(|| format!("loading datacube for `{}`", item.name))?;
        let meta = EmbedMeta {
            source_cube: item.cube.clone(),
            checkpoint: sha.clone(),
        };
        let img = embed_datacube(&model, &cube, meta)
            .with_context(|| format!("embedding `{}`", item.name))?;
        img.save(&dir.join(format!("{}.xemb", item.name)))?;
        items.push(PairItem {
            name: item.name.clone(),
            embedded: format!("embedded/{}.xemb", item.name),
            rgb: relative_path(&ctx.out, &dataset.resolve(&item.rgb)),
            split: item.split,
        });
    }
    let manifest = PairsManifest {
        format: PAIRS_FORMAT.into(),
        version: VERSION.into(),
        config_hash: ctx.config.hash(),
        embedder_sha256: sha,
        latent_dim: model.config.latent_dim,
        image_height: dataset.manifest.image_height,
        image_width: dataset.manifest.image_width,
        items,
    };
    let path = ctx.out_path("pairs.json");
    write_json(&path, &manifest)?;
    println!(
        "embedded {} datacubes -> {}",
        manifest.items.len(),
        path.display()
    );
    Ok(())
}
