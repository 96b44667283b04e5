//! Pigment palettes: characteristic RGB plus a reference XRF histogram per pigment.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::color::RgbColor;
use crate::error::{Error, Result};
use crate::io;

/// Working spectral depth used throughout the pipeline.
pub const DEFAULT_ENERGY_BINS: usize = 512;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PigmentEntry {
    pub name: String,
    pub rgb: [u8; 3],
    pub spectrum: Vec<f64>,
}

impl PigmentEntry {
    pub fn color(&self) -> RgbColor {
        RgbColor::from_u8(self.rgb)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PigmentPalette {
    entries: Vec<PigmentEntry>,
    energy_bins: usize,
}

/// On-disk layout. `rgb` is read as wide integers so out-of-range values
/// produce a named error instead of a serde overflow message.
#[derive(Serialize, Deserialize)]
struct PaletteFile {
    energy_bins: usize,
    pigments: Vec<PigmentFileEntry>,
}

#[derive(Serialize, Deserialize)]
struct PigmentFileEntry {
    name: String,
    rgb: Vec<i64>,
    spectrum: Vec<f64>,
}

impl PigmentPalette {
    /// Builds a palette, enforcing every entry invariant.
    pub fn new(energy_bins: usize, entries: Vec<PigmentEntry>) -> Result<Self> {
        if energy_bins == 0 {
            return Err(Error::InvalidInput("energy_bins must be positive".into()));
        }
        let mut seen = HashSet::new();
        for e in &entries {
            validate_spectrum(&e.name, &e.spectrum, energy_bins)?;
            if !seen.insert(e.name.as_str()) {
                return Err(Error::InvalidPigment {
                    entry: e.name.clone(),
                    field: "name",
                    message: "duplicate pigment name".into(),
                });
            }
        }
        Ok(Self {
            entries,
            energy_bins,
        })
    }

    pub fn entries(&self) -> &[PigmentEntry] {
        &self.entries
    }

    pub fn energy_bins(&self) -> usize {
        self.energy_bins
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PaletteFile =
            serde_json::from_str(text).map_err(|e| Error::json("palette JSON", e))?;
        let mut entries = Vec::with_capacity(file.pigments.len());
        for p in file.pigments {
            if p.rgb.len() != 3 {
                return Err(Error::InvalidPigment {
                    entry: p.name,
                    field: "rgb",
                    message: format!("expected 3 components, got {}", p.rgb.len()),
                });
            }
            let mut rgb = [0u8; 3];
            for (slot, &v) in rgb.iter_mut().zip(&p.rgb) {
                *slot = u8::try_from(v).map_err(|_| Error::InvalidPigment {
                    entry: p.name.clone(),
                    field: "rgb",
                    message: format!("component {v} outside [0,255]"),
                })?;
            }
            entries.push(PigmentEntry {
                name: p.name,
                rgb,
                spectrum: p.spectrum,
            });
        }
        Self::new(file.energy_bins, entries)
    }

    pub fn to_json(&self) -> String {
        let file = PaletteFile {
            energy_bins: self.energy_bins,
            pigments: self
                .entries
                .iter()
                .map(|e| PigmentFileEntry {
                    name: e.name.clone(),
                    rgb: e.rgb.iter().map(|&c| c as i64).collect(),
                    spectrum: e.spectrum.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("palette serializes")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_json().as_bytes())
    }

    /// Content hash used as the palette id in generated metadata.
    pub fn id(&self) -> String {
        io::sha256_hex(self.to_json().as_bytes())[..16].to_string()
    }

    /// Sum-pools every spectrum down to `target_bins`.
    pub fn rebinned(&self, target_bins: usize) -> Result<Self> {
        let entries = self
            .entries
            .iter()
            .map(|e| {
                Ok(PigmentEntry {
                    name: e.name.clone(),
                    rgb: e.rgb,
                    spectrum: rebin_spectrum(&e.spectrum, target_bins)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(target_bins, entries)
    }
}

fn validate_spectrum(name: &str, spectrum: &[f64], energy_bins: usize) -> Result<()> {
    let bad = |message: String| Error::InvalidPigment {
        entry: name.to_string(),
        field: "spectrum",
        message,
    };
    if spectrum.len() != energy_bins {
        return Err(bad(format!(
            "length {} does not match energy_bins {}",
            spectrum.len(),
            energy_bins
        )));
    }
    if let Some((i, v)) = spectrum
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite() || **v < 0.0)
    {
        return Err(bad(format!("bin {i} has invalid value {v}")));
    }
    if !spectrum.iter().any(|&v| v > 0.0) {
        return Err(bad("spectrum has no positive bin".into()));
    }
    Ok(())
}

/// Loads and validates a palette file as stored.
pub fn load_palette(path: &Path) -> Result<PigmentPalette> {
    let bytes = io::read_file(path)?;
    let text = std::str::from_utf8(&bytes).map_err(|e| Error::Parse {
        what: format!("palette {}", path.display()),
        message: e.to_string(),
    })?;
    PigmentPalette::from_json(text)
}

/// Loads a palette and rebins it to `working_bins` when the file depth differs.
pub fn load_palette_at_depth(path: &Path, working_bins: usize) -> Result<PigmentPalette> {
    let palette = load_palette(path)?;
    if palette.energy_bins() == working_bins {
        Ok(palette)
    } else {
        palette.rebinned(working_bins)
    }
}

/// Contiguous sum-pooling; total counts are conserved.
pub fn rebin_spectrum(spectrum: &[f64], target_bins: usize) -> Result<Vec<f64>> {
    if target_bins == 0 || spectrum.is_empty() || !spectrum.len().is_multiple_of(target_bins) {
        return Err(Error::InvalidInput(format!(
            "cannot rebin {} bins to {} (sizes must divide)",
            spectrum.len(),
            target_bins
        )));
    }
    let factor = spectrum.len() / target_bins;
    Ok(spectrum
        .chunks_exact(factor)
        .map(|block| block.iter().sum())
        .collect())
}

/// Scales a non-negative vector to unit L1 norm.
pub fn normalize_l1(v: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = v.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::InvalidInput(format!(
            "cannot L1-normalize vector with sum {total}"
        )));
    }
    Ok(v.iter().map(|x| x / total).collect())
}

/// Twelve-pigment palette with Gaussian emission lines, shaped after a
/// fresco palette. Used for demos and tests; not measured data.
pub fn demo_palette(energy_bins: usize) -> PigmentPalette {
    // (name, rgb, [(line keV, relative height)])
    let table: [(&str, [u8; 3], &[(f64, f64)]); 12] = [
        (
            "Red Ochre",
            [155, 56, 38],
            &[(6.40, 1.0), (7.06, 0.15), (3.69, 0.2)],
        ),
        (
            "Cinnabar",
            [200, 30, 35],
            &[(9.99, 1.0), (11.82, 0.5), (2.31, 0.6)],
        ),
        (
            "Cobalt Blue",
            [30, 60, 170],
            &[(6.93, 1.0), (7.65, 0.18), (1.49, 0.4)],
        ),
        (
            "Smaltino",
            [70, 90, 160],
            &[(6.93, 0.6), (1.74, 0.8), (3.31, 0.5), (10.54, 0.3)],
        ),
        (
            "Gold Ochre",
            [212, 160, 50],
            &[(6.40, 1.0), (7.06, 0.15), (1.74, 0.3)],
        ),
        (
            "Dark Ochre",
            [130, 95, 40],
            &[(6.40, 0.9), (5.90, 0.4), (3.69, 0.2)],
        ),
        (
            "Aegirine",
            [60, 110, 60],
            &[(6.40, 0.5), (1.04, 0.6), (1.74, 0.7)],
        ),
        (
            "Green Earth",
            [100, 130, 90],
            &[(6.40, 0.4), (3.31, 0.6), (1.25, 0.5), (1.74, 0.4)],
        ),
        ("Caput Mortum", [90, 40, 45], &[(6.40, 1.0), (5.41, 0.2)]),
        ("Ivory Black", [25, 25, 28], &[(3.69, 1.0), (2.01, 0.6)]),
        ("Carbon Black", [10, 10, 10], &[(0.28, 0.3), (3.69, 0.1)]),
        (
            "Titanium White",
            [245, 245, 240],
            &[(4.51, 1.0), (4.93, 0.15)],
        ),
    ];
    let max_kev = 20.0;
    let entries = table
        .iter()
        .map(|(name, rgb, lines)| {
            let spectrum = (0..energy_bins)
                .map(|i| {
                    let e = (i as f64 + 0.5) * max_kev / energy_bins as f64;
                    // flat bremsstrahlung floor keeps every bin positive
                    let mut v = 0.002;
                    for &(line, height) in lines.iter() {
                        let sigma = 0.06 + 0.01 * line;
                        v += height * (-0.5 * ((e - line) / sigma).powi(2)).exp();
                    }
                    v
                })
                .collect();
            PigmentEntry {
                name: name.to_string(),
                rgb: *rgb,
                spectrum,
            }
        })
        .collect();
    PigmentPalette::new(energy_bins, entries).expect("demo palette is valid")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn palette_json(bins: usize, spectrum_len: usize, rgb: &str) -> String {
        let spec = vec!["1.0"; spectrum_len].join(",");
        format!(
            r#"{{"energy_bins": {bins}, "pigments": [
                {{"name": "A", "rgb": [1,2,3], "spectrum": [{spec}]}},
                {{"name": "B", "rgb": {rgb}, "spectrum": [{spec}]}}]}}"#
        )
    }

    #[test]
    fn length_mismatch_names_entry() {
        let text = palette_json(512, 512, "[4,5,6]").replacen(
            &format!("[{}]", vec!["1.0"; 512].join(",")),
            &format!("[{}]", vec!["1.0"; 511].join(",")),
            1,
        );
        match PigmentPalette::from_json(&text) {
            Err(Error::InvalidPigment { entry, field, .. }) => {
                assert_eq!(entry, "A");
                assert_eq!(field, "spectrum");
            }
            other => panic!("expected length error, got {other:?}"),
        }
    }

    #[test]
    fn rgb_out_of_range() {
        let text = palette_json(4, 4, "[256,0,0]");
        match PigmentPalette::from_json(&text) {
            Err(Error::InvalidPigment { entry, field, .. }) => {
                assert_eq!(entry, "B");
                assert_eq!(field, "rgb");
            }
            other => panic!("expected range error, got {other:?}"),
        }
    }

    #[test]
    fn duplicate_and_negative() {
        let dup = palette_json(4, 4, "[4,5,6]").replace("\"B\"", "\"A\"");
        assert!(matches!(
            PigmentPalette::from_json(&dup),
            Err(Error::InvalidPigment { field: "name", .. })
        ));
        let neg = palette_json(2, 2, "[4,5,6]").replacen("[1.0,1.0]", "[1.0,-1.0]", 1);
        assert!(matches!(
            PigmentPalette::from_json(&neg),
            Err(Error::InvalidPigment {
                field: "spectrum",
                ..
            })
        ));
    }

    #[test]
    fn zero_spectrum_rejected() {
        let text = palette_json(2, 2, "[4,5,6]").replacen("[1.0,1.0]", "[0.0,0.0]", 1);
        assert!(PigmentPalette::from_json(&text).is_err());
    }

    #[test]
    fn rebin_constant_and_identity() {
        let ones = vec![1.0; 16384];
        let r = rebin_spectrum(&ones, 512).unwrap();
        assert_eq!(r.len(), 512);
        assert!(r.iter().all(|&v| v == 32.0));
        assert_eq!(r.iter().sum::<f64>(), 16384.0);

        let v: Vec<f64> = (0..12).map(|i| i as f64 * 0.5).collect();
        assert_eq!(rebin_spectrum(&v, 12).unwrap(), v);
        assert!(rebin_spectrum(&v, 5).is_err());
    }

    #[test]
    fn rebin_spike() {
        let mut raw = vec![0.0; 16384];
        raw[40] = 7.0;
        let r = rebin_spectrum(&raw, 512).unwrap();
        // brute-force pooling
        let mut oracle = vec![0.0; 512];
        for (i, v) in raw.iter().enumerate() {
            oracle[i / 32] += v;
        }
        assert_eq!(r, oracle);
        assert_eq!(r[1], 7.0);
    }

    #[test]
    fn normalize_examples() {
        assert_eq!(
            normalize_l1(&[2.0, 2.0, 4.0]).unwrap(),
            vec![0.25, 0.25, 0.5]
        );
        let p = [0.25, 0.25, 0.5];
        assert_eq!(normalize_l1(&p).unwrap(), p.to_vec());
        assert!(normalize_l1(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn demo_palette_is_valid_and_rebinnable() {
        let p = demo_palette(1024);
        assert_eq!(p.len(), 12);
        let r = p.rebinned(512).unwrap();
        assert_eq!(r.energy_bins(), 512);
        let a: f64 = p.entries()[0].spectrum.iter().sum();
        let b: f64 = r.entries()[0].spectrum.iter().sum();
        assert!((a - b).abs() < 1e-9 * a);
    }
}
