//! Pipeline configuration file: one JSON document with a section per stage.
//!
//! Any section or field may be omitted. A `seed` missing from a stage section
//! is derived from the top-level seed.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::embed::EmbedTrainConfig;
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::MsSsimOptions;
use crate::recolor::{RecolorTrainConfig, UIQI_WINDOW};
use crate::rng;
use crate::synth::{SplitFractions, SynthConfig};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    pub palette: Option<PathBuf>,
    pub seed_images: Option<PathBuf>,
    pub data_dir: Option<PathBuf>,
    pub checkpoints: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GenConfig {
    /// Target image size; falls back to the recolour model's input size.
    pub image_height: Option<usize>,
    pub image_width: Option<usize>,
    pub energy_bins: usize,
    pub synth: SynthConfig,
    pub split: SplitFractions,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            image_height: None,
            image_width: None,
            energy_bins: 512,
            synth: SynthConfig::default(),
            split: SplitFractions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleConfig {
    pub count: usize,
    pub split: SplitFractions,
    pub seed: u64,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self {
            count: 4096,
            split: SplitFractions::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    pub ms_ssim: MsSsimOptions,
    pub uiqi_window: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            ms_ssim: MsSsimOptions::default(),
            uiqi_window: UIQI_WINDOW,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: PathsConfig,
    pub gen: GenConfig,
    pub sample_spectra: SampleConfig,
    pub embed: EmbedTrainConfig,
    pub recolor: RecolorTrainConfig,
    pub metrics: MetricsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            paths: PathsConfig::default(),
            gen: GenConfig::default(),
            sample_spectra: SampleConfig::default(),
            embed: EmbedTrainConfig::default(),
            recolor: RecolorTrainConfig::default(),
            metrics: MetricsConfig::default(),
        };
        cfg.set_seed(0);
        cfg
    }
}

const SEED_SLOTS: [(&str, &str, u64); 4] = [
    ("gen", "synth", 0x51),
    ("sample_spectra", "", 0x52),
    ("embed", "", 0x53),
    ("recolor", "", 0x54),
];

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let value: Value =
            serde_json::from_str(text).map_err(|e| Error::json("pipeline config", e))?;
        let mut cfg: Self =
            serde_json::from_value(value.clone()).map_err(|e| Error::json("pipeline config", e))?;
        for (section, sub, tag) in SEED_SLOTS {
            let mut node = value.get(section);
            if !sub.is_empty() {
                node = node.and_then(|v| v.get(sub));
            }
            if node.and_then(|v| v.get("seed")).is_none() {
                *cfg.seed_slot(section) = rng::derive_seed(cfg.seed, &[tag]);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        let text = String::from_utf8(bytes)
            .map_err(|_| Error::Format(format!("{} is not UTF-8", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::Parse {
                what: path.display().to_string(),
                message,
            },
            other => other,
        })
    }

    /// Sets the global seed and re-derives every stage seed from it.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        for (section, _, tag) in SEED_SLOTS {
            *self.seed_slot(section) = rng::derive_seed(seed, &[tag]);
        }
    }

    fn seed_slot(&mut self, section: &str) -> &mut u64 {
        match section {
            "gen" => &mut self.gen.synth.seed,
            "sample_spectra" => &mut self.sample_spectra.seed,
            "embed" => &mut self.embed.seed,
            "recolor" => &mut self.recolor.seed,
            _ => unreachable!("unknown seed slot {section}"),
        }
    }

    pub fn image_size(&self) -> (usize, usize) {
        (
            self.gen
                .image_height
                .unwrap_or(self.recolor.model.image_height),
            self.gen
                .image_width
                .unwrap_or(self.recolor.model.image_width),
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization of the resolved config.
    pub fn hash(&self) -> String {
        io::sha256_hex(
            serde_json::to_string(self)
                .expect("config serializes")
                .as_bytes(),
        )
    }

    /// Checks that every configured path exists.
    pub fn check_paths(&self) -> Result<()> {
        let p = &self.paths;
        for (name, path) in [
            ("palette", &p.palette),
            ("seed_images", &p.seed_images),
            ("data_dir", &p.data_dir),
            ("checkpoints", &p.checkpoints),
        ] {
            if let Some(path) = path {
                if !path.exists() {
                    return Err(Error::InvalidInput(format!(
                        "paths.{name} = {} does not exist",
                        path.display()
                    )));
                }
            }
        }
        Ok(())
    }
}
