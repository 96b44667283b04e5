use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _, Result};
use serde::Serialize;
use xrecolor::metrics::metric_report;
use xrecolor::raster::RgbImage;
use xrecolor::recolor::srgb_loss;

use super::recolor::{Aggregate, ImageScore};
use crate::context::Ctx;

#[derive(clap::Args)]
pub struct EvalArgs {
    /// A prediction PNG, or a directory of them.
    #[arg(long)]
    pub pred: PathBuf,
    /// The matching ground-truth PNG, or a directory holding files of the same names.
    #[arg(long)]
    pub truth: PathBuf,
}

#[derive(Serialize)]
struct EvalReport {
    per_image: Vec<ImageScore>,
    aggregate: Aggregate,
}

fn pairs(pred: &Path, truth: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let name_of = |p: &Path| {
        p.file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default()
    };
    if pred.is_file() {
        if truth.is_dir() {
            let t = truth.join(pred.file_name().unwrap_or_default());
            return Ok(vec![(name_of(pred), pred.to_path_buf(), t)]);
        }
        return Ok(vec![(
            name_of(pred),
            pred.to_path_buf(),
            truth.to_path_buf(),
        )]);
    }
    if !pred.is_dir() {
        bail!("{} does not exist", pred.display());
    }
    if !truth.is_dir() {
        bail!(
            "{} is a directory, so --truth must be one too",
            pred.display()
        );
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(pred)
        .with_context(|| format!("reading {}", pred.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG predictions in {}", pred.display());
    }
    Ok(files
        .into_iter()
        .map(|p| {
            let t = truth.join(p.file_name().unwrap_or_default());
            (name_of(&p), p, t)
        })
        .collect())
}

pub fn run(ctx: &mut Ctx, args: EvalArgs) -> Result<()> {
    let metrics = &ctx.config.metrics;
    let mut per_image = Vec::new();
    for (name, p, t) in pairs(&args.pred, &args.truth)? {
        if !t.exists() {
            bail!("no ground truth for `{name}`: {} is missing", t.display());
        }
        let pred = RgbImage::load_png(&p)?.to_planar();
        let truth = RgbImage::load_png(&t)?.to_planar();
        if !pred.same_shape(&truth) {
            bail!(
                "`{name}`: prediction is {}x{} but ground truth is {}x{}",
                pred.height,
                pred.width,
                truth.height,
                truth.width
            );
        }
        let m = metric_report(&pred, &truth, &metrics.ms_ssim, metrics.uiqi_window)?;
        per_image.push(ImageScore {
            name,
            srgb_loss: srgb_loss(&pred, &truth)?,
            ms_ssim: m.ms_ssim,
            uiqi: m.uiqi,
        });
    }
    let report = EvalReport {
        aggregate: Aggregate::of(&per_image),
        per_image,
    };
    ctx.ensure_out_dir("")?;
    let path = ctx.write_report("eval_report.json", "eval", &report)?;
    println!(
        "evaluated {} images: mean sRGB loss {:.4}, MS-SSIM {:.4}, UiQi {:.4} -> {}",
        report.aggregate.images,
        report.aggregate.srgb_loss,
        report.aggregate.ms_ssim,
        report.aggregate.uiqi,
        path.display()
    );
    Ok(())
}
