use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use log::{info, warn};
use serde::Serialize;
use xrecolor::embed::EmbeddedImage;
use xrecolor::raster::RgbImage;
use xrecolor::recolor::{
    infer_recolor, load_recolor, save_recolor, train_recolor, RecolorEpoch, RecolorPair,
    RecolorReport, SmallUViTConfig,
};

use crate::context::{mean, Ctx};
use crate::manifest::{Loaded, PairItem, PairsManifest, Split};

#[derive(clap::Args)]
pub struct TrainRecolorArgs {
    /// Pairs manifest written by `embed`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Use the 64×64 toy model with dropout, stochastic depth and augmentation off.
    #[arg(long)]
    pub toy: bool,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Serialize)]
struct TrainRecolorReport {
    checkpoint: String,
    checkpoint_sha256: String,
    trainable_parameters: usize,
    train_pairs: usize,
    val_pairs: usize,
    steps: usize,
    best_epoch: usize,
    best_val_ms_ssim: f64,
    history: Vec<RecolorEpoch>,
}

fn load_pair(pairs: &Loaded<PairsManifest>, item: &PairItem) -> Result<(EmbeddedImage, RgbImage)> {
    let emb = EmbeddedImage::load(&pairs.resolve(&item.embedded))
        .with_context(|| format!("loading embedded image for `{}`", item.name))?;
    let rgb = RgbImage::load_png(&pairs.resolve(&item.rgb))
        .with_context(|| format!("loading RGB target for `{}`", item.name))?;
    Ok((emb, rgb))
}

fn load_split(pairs: &Loaded<PairsManifest>, split: Split) -> Result<Vec<RecolorPair>> {
    pairs
        .manifest
        .split(split)
        .map(|item| {
            let (emb, rgb) = load_pair(pairs, item)?;
            Ok(RecolorPair::new(&emb, &rgb)?)
        })
        .collect()
}

fn check_model_fits(model: &SmallUViTConfig, pairs: &PairsManifest) -> Result<()> {
    if model.image_height != pairs.image_height || model.image_width != pairs.image_width {
        bail!(
            "embedded images are {}x{} but recolor.model expects {}x{}; set recolor.model.image_height/image_width or regenerate with a matching gen size",
            pairs.image_height,
            pairs.image_width,
            model.image_height,
            model.image_width
        );
    }
    if model.in_channels != pairs.latent_dim {
        bail!(
            "embedded images have {} channels but recolor.model.in_channels is {}",
            pairs.latent_dim,
            model.in_channels
        );
    }
    Ok(())
}

pub fn train(ctx: &mut Ctx, args: TrainRecolorArgs) -> Result<()> {
    let cfg = &mut ctx.config.recolor;
    if args.toy {
        cfg.model = SmallUViTConfig {
            dropout: 0.0,
            stochastic_depth: 0.0,
            ..SmallUViTConfig::toy()
        };
        cfg.augment = xrecolor::recolor::AugmentConfig::none();
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = v;
    }
    let pairs = PairsManifest::load(&args.pairs)?;
    check_model_fits(&ctx.config.recolor.model, &pairs.manifest)?;
    let train = load_split(&pairs, Split::Train)?;
    if train.is_empty() {
        bail!("{} has no training pairs", args.pairs.display());
    }
    let mut val = load_split(&pairs, Split::Val)?;
    if val.is_empty() {
        warn!("no validation pairs, validating on the training pairs");
        val = train.clone();
    }
    info!(
        "training on {} pairs, validating on {}",
        train.len(),
        val.len()
    );
    let outcome = train_recolor(&train, &val, &ctx.config.recolor)?;
    let ckpt = ctx.ensure_out_dir("")?.join("recolor.xckp");
    let sha = save_recolor(&ckpt, &outcome.model)?;
    let report = TrainRecolorReport {
        checkpoint: "recolor.xckp".into(),
        checkpoint_sha256: sha,
        trainable_parameters: outcome.model.trainable_parameters(),
        train_pairs: train.len(),
        val_pairs: val.len(),
        steps: outcome.steps,
        best_epoch: outcome.best_epoch,
        best_val_ms_ssim: outcome.history[outcome.best_epoch].val_ms_ssim,
        history: outcome.history,
    };
    let path = ctx.write_report("train_recolor_report.json", "train-recolor", &report)?;
    println!(
        "recolor model trained for {} steps: best val MS-SSIM {:.4} -> {}",
        report.steps,
        report.best_val_ms_ssim,
        path.display()
    );
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SplitChoice {
    Train,
    Val,
    Test,
    All,
}

#[derive(clap::Args)]
pub struct InferArgs {
    /// Pairs manifest written by `embed`.
    #[arg(long)]
    pub pairs: PathBuf,
    /// Recolor checkpoint written by `train-recolor`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long, value_enum, default_value = "test")]
    pub split: SplitChoice,
    /// Also write embedded | prediction | ground truth montages.
    #[arg(long)]
    pub montage: bool,
}

#[derive(Serialize)]
pub struct ImageScore {
    pub name: String,
    pub srgb_loss: f64,
    pub ms_ssim: f64,
    pub uiqi: f64,
}

#[derive(Serialize)]
pub struct Aggregate {
    pub images: usize,
    pub srgb_loss: f64,
    pub ms_ssim: f64,
    pub uiqi: f64,
}

impl Aggregate {
    pub fn of(scores: &[ImageScore]) -> Self {
        Self {
            images: scores.len(),
            srgb_loss: mean(scores.iter().map(|s| s.srgb_loss)),
            ms_ssim: mean(scores.iter().map(|s| s.ms_ssim)),
            uiqi: mean(scores.iter().map(|s| s.uiqi)),
        }
    }
}

#[derive(Serialize)]
struct InferReport {
    checkpoint_sha256: String,
    split: &'static str,
    per_image: Vec<ImageScore>,
    aggregate: Aggregate,
    details: Vec<RecolorReport>,
}

pub fn infer(ctx: &mut Ctx, args: InferArgs) -> Result<()> {
    let pairs = PairsManifest::load(&args.pairs)?;
    let (model, sha) = load_recolor(&args.checkpoint)
        .with_context(|| format!("loading recolor checkpoint {}", args.checkpoint.display()))?;
    check_model_fits(&model.config, &pairs.manifest)?;
    let (label, items): (&'static str, Vec<&PairItem>) = match args.split {
        SplitChoice::All => ("all", pairs.manifest.items.iter().collect()),
        SplitChoice::Train => ("train", pairs.manifest.split(Split::Train).collect()),
        SplitChoice::Val => ("val", pairs.manifest.split(Split::Val).collect()),
        SplitChoice::Test => ("test", pairs.manifest.split(Split::Test).collect()),
    };
    if items.is_empty() {
        bail!("no `{label}` items in {}", args.pairs.display());
    }
    let pred_dir = ctx.ensure_out_dir("predictions")?;
    let montage_dir = if args.montage {
        Some(ctx.ensure_out_dir("montage")?)
    } else {
        None
    };
    let mut per_image = Vec::with_capacity(items.len());
    let mut details = Vec::with_capacity(items.len());
    for item in items {
        let (emb, truth) = load_pair(&pairs, item)?;
        let out = infer_recolor(
            &model,
            &emb,
            Some(&truth),
            &ctx.config.metrics.ms_ssim,
            ctx.config.metrics.uiqi_window,
        )
        .with_context(|| format!("recolouring `{}`", item.name))?;
        out.rgb
            .save_png(&pred_dir.join(format!("{}.png", item.name)))?;
        if let Some(dir) = &montage_dir {
            let preview = emb.to_planar().false_color()?;
            let strip = RgbImage::hconcat(&[&preview, &out.rgb, &truth])?;
            strip.save_png(&dir.join(format!("{}.png", item.name)))?;
        }
        let report = out.report.expect("truth was supplied");
        per_image.push(ImageScore {
            name: item.name.clone(),
            srgb_loss: report.srgb_loss,
            ms_ssim: report.metrics.ms_ssim,
            uiqi: report.metrics.uiqi,
        });
        details.push(report);
    }
    let report = InferReport {
        checkpoint_sha256: sha,
        split: label,
        aggregate: Aggregate::of(&per_image),
        per_image,
        details,
    };
    let path = ctx.write_report("infer_report.json", "infer", &report)?;
    println!(
        "recoloured {} images: mean sRGB loss {:.4}, MS-SSIM {:.4}, UiQi {:.4} -> {}",
        report.aggregate.images,
        report.aggregate.srgb_loss,
        report.aggregate.ms_ssim,
        report.aggregate.uiqi,
        path.display()
    );
    Ok(())
}
