use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _, Result};
use log::{info, warn};
use xrecolor::palette::{demo_palette, load_palette_at_depth, PigmentPalette};
use xrecolor::raster::RgbImage;
use xrecolor::rng;
use xrecolor::synth::generate_xrf;

use crate::context::{write_json, Ctx, VERSION};
use crate::manifest::{assign_splits, DatasetItem, DatasetManifest, DATASET_FORMAT};

#[derive(clap::Args)]
pub struct GenArgs {
    /// Directory of seed PNG images (overrides paths.seed_images).
    #[arg(long)]
    pub images: Option<PathBuf>,
    /// Pigment palette JSON (overrides paths.palette; the built-in demo palette is used when neither is set).
    #[arg(long)]
    pub palette: Option<PathBuf>,
    /// Square working size in pixels (overrides gen.image_height/width).
    #[arg(long)]
    pub size: Option<usize>,
}

pub fn palette_for(ctx: &Ctx, flag: Option<&Path>) -> Result<PigmentPalette> {
    let bins = ctx.config.gen.energy_bins;
    match flag.or(ctx.config.paths.palette.as_deref()) {
        Some(p) => {
            Ok(load_palette_at_depth(p, bins)
                .with_context(|| format!("palette {}", p.display()))?)
        }
        None => {
            warn!("no palette configured, using the built-in demo palette");
            Ok(demo_palette(bins))
        }
    }
}

fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading seed image directory {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no PNG files in {}", dir.display());
    }
    Ok(files)
}

/// Removes every file written so far when dropped without `keep()`.
struct Cleanup {
    files: Vec<PathBuf>,
    dirs: Vec<PathBuf>,
    armed: bool,
}

impl Cleanup {
    fn keep(mut self) {
        self.armed = false;
    }
}

impl Drop for Cleanup {
    fn drop(&mut self) {
        if !self.armed {
            return;
        }
        for f in &self.files {
            let _ = std::fs::remove_file(f);
        }
        for d in &self.dirs {
            let _ = std::fs::remove_dir(d);
        }
    }
}

pub fn run(ctx: &mut Ctx, args: GenArgs) -> Result<()> {
    if let Some(s) = args.size {
        ctx.config.gen.image_height = Some(s);
        ctx.config.gen.image_width = Some(s);
    }
    let images_dir = args
        .images
        .or_else(|| ctx.config.paths.seed_images.clone())
        .ok_or_else(|| anyhow!("no seed images: pass --images DIR or set paths.seed_images"))?;
    let palette = palette_for(ctx, args.palette.as_deref())?;
    let (height, width) = ctx.config.image_size();
    let files = list_pngs(&images_dir)?;

    let mut images = Vec::with_capacity(files.len());
    let mut failures = Vec::new();
    for f in &files {
        match RgbImage::load_png(f) {
            Ok(img) => images.push(img.resized(height, width)),
            Err(e) => failures.push(e.to_string()),
        }
    }
    if !failures.is_empty() {
        bail!(
            "{} seed image(s) could not be read:\n  {}",
            failures.len(),
            failures.join("\n  ")
        );
    }

    let synth = ctx.config.gen.synth.clone();
    let splits = assign_splits(files.len(), ctx.config.gen.split, synth.seed);
    let rgb_dir = ctx.ensure_out_dir("rgb")?;
    let cube_dir = ctx.ensure_out_dir("cubes")?;
    let mut cleanup = Cleanup {
        files: Vec::new(),
        dirs: vec![rgb_dir.clone(), cube_dir.clone()],
        armed: true,
    };

    let mut items = Vec::with_capacity(files.len());
    for (i, (file, img)) in files.iter().zip(&images).enumerate() {
        let name = file
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("image")
            .to_string();
        let mut cfg = synth.clone();
        cfg.seed = rng::derive_seed(synth.seed, &[i as u64]);
        let mut cube = generate_xrf(img, &palette, &cfg)
            .with_context(|| format!("synthesizing {}", file.display()))?;
        cube.meta.source = file.file_name().map(|s| s.to_string_lossy().into_owned());
        let rgb_rel = format!("rgb/{name}.png");
        let cube_rel = format!("cubes/{name}.xrfc");
        img.save_png(&rgb_dir.join(format!("{name}.png")))?;
        cleanup.files.push(rgb_dir.join(format!("{name}.png")));
        let bytes = cube.to_bytes();
        xrecolor::io::write_atomic(&cube_dir.join(format!("{name}.xrfc")), &bytes)?;
        cleanup.files.push(cube_dir.join(format!("{name}.xrfc")));
        info!("{name} -> {cube_rel}");
        items.push(DatasetItem {
            name,
            source: file
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            rgb: rgb_rel,
            cube: cube_rel,
            cube_sha256: xrecolor::io::sha256_hex(&bytes),
            split: splits[i],
        });
    }

    let manifest = DatasetManifest {
        format: DATASET_FORMAT.into(),
        version: VERSION.into(),
        config_hash: ctx.config.hash(),
        seed: ctx.config.seed,
        palette_id: palette.id(),
        image_height: height,
        image_width: width,
        energy_bins: palette.energy_bins(),
        items,
    };
    let path = ctx.out_path("manifest.json");
    write_json(&path, &manifest)?;
    cleanup.keep();
    println!(
        "wrote {} datacubes and {}",
        manifest.items.len(),
        path.display()
    );
    Ok(())
}
