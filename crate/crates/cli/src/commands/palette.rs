use std::path::PathBuf;

use anyhow::{Context as _, Result};
use serde::Serialize;
use xrecolor::palette::{demo_palette, load_palette, load_palette_at_depth};

use crate::context::Ctx;

#[derive(clap::Subcommand)]
pub enum PaletteCommand {
    /// Parse and validate a palette file, printing a summary.
    Validate {
        path: PathBuf,
        /// Also check that it rebins cleanly to this depth.
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Write the built-in demonstration palette to OUT/palette.json.
    Demo {
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Serialize)]
struct Summary {
    id: String,
    energy_bins: usize,
    pigments: Vec<String>,
}

pub fn run(ctx: &mut Ctx, cmd: PaletteCommand) -> Result<()> {
    match cmd {
        PaletteCommand::Validate { path, bins } => {
            let palette = match bins {
                Some(b) => load_palette_at_depth(&path, b),
                None => load_palette(&path),
            }
            .with_context(|| format!("palette {} is invalid", path.display()))?;
            let summary = Summary {
                id: palette.id(),
                energy_bins: palette.energy_bins(),
                pigments: palette.entries().iter().map(|e| e.name.clone()).collect(),
            };
            println!("{}", serde_json::to_string_pretty(&summary)?);
        }
        PaletteCommand::Demo { bins } => {
            let palette = demo_palette(bins.unwrap_or(ctx.config.gen.energy_bins));
            let path = ctx.ensure_out_dir("")?.join("palette.json");
            palette.save(&path)?;
            println!("wrote {} pigments to {}", palette.len(), path.display());
        }
    }
    Ok(())
}
