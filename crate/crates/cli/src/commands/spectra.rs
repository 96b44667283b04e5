use std::path::PathBuf;

use anyhow::{bail, Context as _, Result};
use xrecolor::synth::{sample_spectra_dataset, DataCube};

use crate::context::{write_json, Ctx, VERSION};
use crate::manifest::{DatasetManifest, SpectraManifest, SPECTRA_FORMAT};

#[derive(clap::Args)]
pub struct SampleArgs {
    /// Dataset manifest written by `gen`.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Number of pixel spectra to draw (overrides sample_spectra.count).
    #[arg(long)]
    pub count: Option<usize>,
}

pub fn run(ctx: &mut Ctx, args: SampleArgs) -> Result<()> {
    if let Some(n) = args.count {
        ctx.config.sample_spectra.count = n;
    }
    let dataset = DatasetManifest::load(&args.manifest)?;
    let mut cubes = Vec::with_capacity(dataset.manifest.items.len());
    for item in &dataset.manifest.items {
        let path = dataset.resolve(&item.cube);
        let cube = DataCube::load(&path)
            .with_context(|| format!("loading datacube for `{}`", item.name))?;
        if cube.energy_bins() != dataset.manifest.energy_bins {
            bail!(
                "{} has {} energy bins but the manifest declares {}",
                path.display(),
                cube.energy_bins(),
                dataset.manifest.energy_bins
            );
        }
        cubes.push(cube);
    }
    let cfg = &ctx.config.sample_spectra;
    let split = sample_spectra_dataset(&cubes, cfg.count, cfg.split, cfg.seed)?;

    let dir = ctx.ensure_out_dir("")?;
    split.train.save(&dir.join("spectra_train.xrfc"))?;
    split.val.save(&dir.join("spectra_val.xrfc"))?;
    split.test.save(&dir.join("spectra_test.xrfc"))?;
    let manifest = SpectraManifest {
        format: SPECTRA_FORMAT.into(),
        version: VERSION.into(),
        config_hash: ctx.config.hash(),
        seed: ctx.config.seed,
        energy_bins: dataset.manifest.energy_bins,
        cubes: dataset
            .manifest
            .items
            .iter()
            .map(|i| i.name.clone())
            .collect(),
        train: "spectra_train.xrfc".into(),
        val: "spectra_val.xrfc".into(),
        test: "spectra_test.xrfc".into(),
        sizes: [split.train.len(), split.val.len(), split.test.len()],
    };
    let path = dir.join("spectra.json");
    write_json(&path, &manifest)?;
    println!(
        "sampled {} spectra (train {}, val {}, test {}) -> {}",
        cfg.count,
        manifest.sizes[0],
        manifest.sizes[1],
        manifest.sizes[2],
        path.display()
    );
    Ok(())
}
