//! Embedded-image to RGB translation with a small U-shaped vision
//! transformer, trained on the redmean sRGB loss.

pub mod augment;
mod model;
mod train;

pub use augment::AugmentConfig;
pub use model::{shifted_patches, unpatch_index, SkipFusion, SmallUViT, SmallUViTConfig};
pub use train::{evaluate, train_recolor, RecolorEpoch, RecolorTrainConfig, RecolorTrainOutcome};

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diff::{checkpoint, Graph, Var};
use crate::embed::EmbeddedImage;
use crate::error::{Error, Result};
use crate::metrics::{metric_report, MetricReport, MsSsimOptions};
use crate::raster::{Planar, RgbImage};

/// An embedded input and its RGB target, both channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct RecolorPair {
    pub input: Planar,
    pub target: Planar,
}

impl RecolorPair {
    pub fn new(embedded: &EmbeddedImage, rgb: &RgbImage) -> Result<Self> {
        if embedded.height != rgb.height() || embedded.width != rgb.width() {
            return Err(Error::Shape(format!(
                "embedded image is {}x{} but RGB target is {}x{}",
                embedded.height,
                embedded.width,
                rgb.height(),
                rgb.width()
            )));
        }
        Ok(Self {
            input: embedded.to_planar(),
            target: rgb.to_planar(),
        })
    }
}

/// Mean redmean distance between `[B,3,H,W]` prediction and target.
pub fn loss_srgb(g: &mut Graph, pred: Var, target: Var) -> Result<Var> {
    g.redmean_loss(pred, target)
}

/// Plain-number sRGB loss between two RGB planars.
pub fn srgb_loss(pred: &Planar, target: &Planar) -> Result<f64> {
    if !pred.same_shape(target) || pred.channels != 3 {
        return Err(Error::Shape(
            "sRGB loss needs two 3-channel images of equal size".into(),
        ));
    }
    Ok(crate::diff::fused::redmean_mean(
        &pred.data,
        &target.data,
        pred.height * pred.width,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecolorReport {
    pub srgb_loss: f64,
    #[serde(flatten)]
    pub metrics: MetricReport,
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub rgb: RgbImage,
    pub prediction: Planar,
    /// Present only when a ground truth was supplied.
    pub report: Option<RecolorReport>,
}

pub const UIQI_WINDOW: usize = 8;

/// Eval-mode prediction, scored against `truth` when given.
pub fn infer_recolor(
    model: &SmallUViT,
    embedded: &EmbeddedImage,
    truth: Option<&RgbImage>,
    opts: &MsSsimOptions,
    uiqi_window: usize,
) -> Result<Inference> {
    let c = &model.config;
    if embedded.channels != c.in_channels
        || embedded.height != c.image_height
        || embedded.width != c.image_width
    {
        return Err(Error::Shape(format!(
            "embedded image {}x{}x{} does not match the model input {}x{}x{}",
            embedded.height,
            embedded.width,
            embedded.channels,
            c.image_height,
            c.image_width,
            c.in_channels
        )));
    }
    let pred = model.predict(&embedded.to_planar().data)?;
    let prediction = Planar::new(c.out_channels, c.image_height, c.image_width, pred)?;
    let rgb = prediction.to_rgb()?;
    let report = match truth {
        Some(t) => {
            let tp = t.to_planar();
            if !tp.same_shape(&prediction) {
                return Err(Error::Shape(format!(
                    "ground truth is {}x{}, prediction is {}x{}",
                    t.height(),
                    t.width(),
                    prediction.height,
                    prediction.width
                )));
            }
            Some(RecolorReport {
                srgb_loss: srgb_loss(&prediction, &tp)?,
                metrics: metric_report(&prediction, &tp, opts, uiqi_window)?,
            })
        }
        None => None,
    };
    Ok(Inference {
        rgb,
        prediction,
        report,
    })
}

pub const RECOLOR_KIND: &str = "small_uvit";

pub fn save_recolor(path: &Path, model: &SmallUViT) -> Result<String> {
    let cfg = serde_json::to_value(&model.config).expect("config serializes");
    checkpoint::save_checkpoint(path, &model.store, RECOLOR_KIND, cfg)
}

pub fn load_recolor(path: &Path) -> Result<(SmallUViT, String)> {
    let (store, manifest) = checkpoint::load_checkpoint(path)?;
    if manifest.kind != RECOLOR_KIND {
        return Err(Error::Format(format!(
            "{} holds a `{}` checkpoint, expected `{RECOLOR_KIND}`",
            path.display(),
            manifest.kind
        )));
    }
    let cfg: SmallUViTConfig = serde_json::from_value(manifest.config.clone())
        .map_err(|e| Error::json("recolor manifest config", e))?;
    Ok((SmallUViT::with_params(cfg, &store)?, manifest.sha256))
}
