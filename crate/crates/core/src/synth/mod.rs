//! Synthetic MA-XRF generation: colour clustering, thresholded pigment
//! mixing, and per-pixel Monte Carlo spectra.

mod cube;

pub use cube::{CubeMeta, CubePayload, DataCube, RawCube, CUBE_MAGIC, CUBE_VERSION};

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::color::{
    color_similarity_scaled, ikmeans, ClusterModel, IKMeansConfig, RgbColor,
    DEFAULT_SIMILARITY_SCALE,
};
use crate::error::{Error, Result};
use crate::io;
use crate::palette::{normalize_l1, PigmentPalette};
use crate::raster::RgbImage;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub counts_per_pixel: u32,
    pub alpha_th: f64,
    /// Assign the single most similar pigment when none passes `alpha_th`.
    pub fallback_nearest: bool,
    /// CIEDE2000 difference that maps to zero similarity.
    pub similarity_scale: f64,
    pub ikmeans: IKMeansConfig,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            counts_per_pixel: 1000,
            alpha_th: 0.9,
            fallback_nearest: true,
            similarity_scale: DEFAULT_SIMILARITY_SCALE,
            ikmeans: IKMeansConfig::default(),
            seed: 0,
        }
    }
}

/// Normalized mixture of pigment spectra for one cluster colour.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingDistribution {
    /// (pigment index, similarity weight) for every contributing pigment.
    pub weights: Vec<(usize, f64)>,
    pub normalized: Vec<f64>,
}

impl MixingDistribution {
    pub fn contributors(&self) -> Vec<usize> {
        self.weights.iter().map(|&(i, _)| i).collect()
    }
}

/// Similarity of every pigment to `rgb`.
pub fn pigment_similarities(rgb: RgbColor, palette: &PigmentPalette, scale: f64) -> Vec<f64> {
    palette
        .entries()
        .iter()
        .map(|p| color_similarity_scaled(p.color(), rgb, scale))
        .collect()
}

fn weighted_mix(
    palette: &PigmentPalette,
    weights: Vec<(usize, f64)>,
) -> Result<MixingDistribution> {
    let mut d = vec![0.0; palette.energy_bins()];
    for &(i, alpha) in &weights {
        for (acc, h) in d.iter_mut().zip(&palette.entries()[i].spectrum) {
            *acc += alpha * h;
        }
    }
    let normalized = normalize_l1(&d)
        .map_err(|_| Error::Numerical("mixture of contributing pigments has zero total".into()))?;
    Ok(MixingDistribution {
        weights,
        normalized,
    })
}

/// Sums `alpha_p * h_p` over pigments whose similarity is at least
/// `alpha_th`, then L1-normalizes.
pub fn mix_distribution(
    cluster_rgb: RgbColor,
    palette: &PigmentPalette,
    alpha_th: f64,
) -> Result<MixingDistribution> {
    mix_distribution_scaled(cluster_rgb, palette, alpha_th, DEFAULT_SIMILARITY_SCALE)
}

pub fn mix_distribution_scaled(
    cluster_rgb: RgbColor,
    palette: &PigmentPalette,
    alpha_th: f64,
    scale: f64,
) -> Result<MixingDistribution> {
    if palette.is_empty() {
        return Err(Error::InvalidInput("palette has no pigments".into()));
    }
    let alphas = pigment_similarities(cluster_rgb, palette, scale);
    let weights: Vec<(usize, f64)> = alphas
        .iter()
        .enumerate()
        .filter(|(_, &a)| a >= alpha_th && a > 0.0)
        .map(|(i, &a)| (i, a))
        .collect();
    if weights.is_empty() {
        let best_alpha = alphas.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        return Err(Error::NoMatchingPigment {
            rgb: cluster_rgb.to_array(),
            threshold: alpha_th,
            best_alpha,
        });
    }
    weighted_mix(palette, weights)
}

/// The single most similar pigment (lowest index on ties), unit weight.
pub fn nearest_pigment_distribution(
    cluster_rgb: RgbColor,
    palette: &PigmentPalette,
    scale: f64,
) -> Result<MixingDistribution> {
    let alphas = pigment_similarities(cluster_rgb, palette, scale);
    let best = alphas
        .iter()
        .enumerate()
        .fold(None, |acc: Option<(usize, f64)>, (i, &a)| match acc {
            Some((_, b)) if b >= a => acc,
            _ => Some((i, a)),
        })
        .ok_or_else(|| Error::InvalidInput("palette has no pigments".into()))?;
    weighted_mix(palette, vec![(best.0, 1.0)])
}

/// Inverse-CDF sampler over a categorical distribution.
#[derive(Debug, Clone)]
pub struct CategoricalSampler {
    cdf: Vec<f64>,
}

impl CategoricalSampler {
    pub fn new(probs: &[f64]) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
            return Err(Error::InvalidInput(
                "probabilities must be finite and non-negative".into(),
            ));
        }
        let mut acc = 0.0;
        let mut cdf: Vec<f64> = probs
            .iter()
            .map(|p| {
                acc += p;
                acc
            })
            .collect();
        if !(acc > 0.0) {
            return Err(Error::InvalidInput("probabilities sum to zero".into()));
        }
        for c in cdf.iter_mut() {
            *c /= acc;
        }
        Ok(Self { cdf })
    }

    pub fn bins(&self) -> usize {
        self.cdf.len()
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        // first bin whose cdf exceeds u; zero-probability bins are never hit
        self.cdf
            .partition_point(|&c| c <= u)
            .min(self.cdf.len() - 1)
    }

    /// Histogram of `n` independent draws.
    pub fn sample_counts<R: Rng + ?Sized>(&self, n: u32, rng: &mut R) -> Vec<u32> {
        let mut counts = vec![0u32; self.cdf.len()];
        for _ in 0..n {
            counts[self.draw(rng)] += 1;
        }
        counts
    }
}

/// `n_counts` i.i.d. draws from the mixture over energy bins.
pub fn sample_spectrum<R: Rng + ?Sized>(
    dist: &MixingDistribution,
    n_counts: u32,
    rng: &mut R,
) -> Result<Vec<u32>> {
    Ok(CategoricalSampler::new(&dist.normalized)?.sample_counts(n_counts, rng))
}

/// Everything produced while synthesizing one cube.
#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub cube: DataCube,
    pub clusters: ClusterModel,
    /// One distribution per cluster label.
    pub distributions: Vec<MixingDistribution>,
    /// Clusters that fell back to their nearest pigment.
    pub fallback_clusters: Vec<usize>,
}

pub fn generate_xrf(
    img: &RgbImage,
    palette: &PigmentPalette,
    config: &SynthConfig,
) -> Result<DataCube> {
    Ok(generate_xrf_detailed(img, palette, config)?.cube)
}

/// Clusters the image, mixes one distribution per cluster, then samples an
/// independent spectrum for every pixel from its cluster's distribution.
/// Pixel (y, x) draws from the stream `hash(seed, y, x)`.
pub fn generate_xrf_detailed(
    img: &RgbImage,
    palette: &PigmentPalette,
    config: &SynthConfig,
) -> Result<SynthOutput> {
    if img.is_empty() {
        return Err(Error::InvalidInput("seed image is empty".into()));
    }
    let clusters = ikmeans(img, &config.ikmeans)?;
    let mut distributions = Vec::with_capacity(clusters.k);
    let mut fallback_clusters = Vec::new();
    for (label, &centroid) in clusters.centroids.iter().enumerate() {
        let dist = match mix_distribution_scaled(
            centroid,
            palette,
            config.alpha_th,
            config.similarity_scale,
        ) {
            Ok(d) => d,
            Err(Error::NoMatchingPigment { .. }) if config.fallback_nearest => {
                fallback_clusters.push(label);
                nearest_pigment_distribution(centroid, palette, config.similarity_scale)?
            }
            Err(e) => return Err(e),
        };
        distributions.push(dist);
    }
    let samplers = distributions
        .iter()
        .map(|d| CategoricalSampler::new(&d.normalized))
        .collect::<Result<Vec<_>>>()?;

    let (h, w, e) = (img.height(), img.width(), palette.energy_bins());
    let mut counts = vec![0u32; h * w * e];
    counts
        .par_chunks_mut(w * e)
        .enumerate()
        .for_each(|(y, row)| {
            for (x, px) in row.chunks_exact_mut(e).enumerate() {
                let sampler = &samplers[clusters.label_at(y, x)];
                let mut rng = rng::stream(config.seed, &[y as u64, x as u64]);
                for _ in 0..config.counts_per_pixel {
                    px[sampler.draw(&mut rng)] += 1;
                }
            }
        });

    let mut extra = serde_json::Map::new();
    extra.insert("clusters".into(), clusters.k.into());
    extra.insert("alpha_th".into(), config.alpha_th.into());
    extra.insert(
        "contributors".into(),
        serde_json::to_value(
            distributions
                .iter()
                .map(|d| d.contributors())
                .collect::<Vec<_>>(),
        )
        .expect("serializable"),
    );
    let meta = CubeMeta {
        seed: config.seed,
        counts_per_pixel: config.counts_per_pixel,
        palette_id: palette.id(),
        source: None,
        extra,
    };
    Ok(SynthOutput {
        cube: DataCube::new(h, w, e, counts, meta)?,
        clusters,
        distributions,
        fallback_clusters,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.7,
            val: 0.2,
            test: 0.1,
        }
    }
}

impl SplitFractions {
    /// (train, val, test) sizes: val and test are floored, train takes the rest.
    pub fn sizes(&self, n: usize) -> (usize, usize, usize) {
        let floor = |f: f64| ((n as f64 * f) + 1e-9).floor() as usize;
        let val = floor(self.val).min(n);
        let test = floor(self.test).min(n - val);
        (n - val - test, val, test)
    }
}

/// A set of raw pixel spectra with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    pub energy_bins: usize,
    /// Row-major n×E counts.
    pub counts: Vec<u32>,
    /// (cube index, y, x) of each spectrum.
    pub sources: Vec<[u32; 3]>,
}

impl SpectrumSet {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn spectrum(&self, i: usize) -> &[u32] {
        &self.counts[i * self.energy_bins..(i + 1) * self.energy_bins]
    }

    /// L1-normalized n×E rows.
    pub fn normalized_rows(&self) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.counts.len());
        for i in 0..self.len() {
            let row: Vec<f64> = self.spectrum(i).iter().map(|&c| c as f64).collect();
            out.extend(
                normalize_l1(&row)
                    .map_err(|_| Error::InvalidInput(format!("spectrum {i} has no counts")))?,
            );
        }
        Ok(out)
    }

    /// Stored as an XRFC u32 cube of height 1.
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::json!({ "kind": "spectrum_set", "sources": self.sources });
        cube::encode(
            1,
            self.len(),
            self.energy_bins,
            &cube::CubePayloadRef::U32(&self.counts),
            &meta,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawCube::from_bytes(bytes)?;
        if raw.height != 1 {
            return Err(Error::Format("spectrum set must have height 1".into()));
        }
        let counts = match raw.payload {
            CubePayload::U32(v) => v,
            CubePayload::F32(_) => {
                return Err(Error::Format("spectrum set must hold u32 counts".into()))
            }
        };
        let sources: Vec<[u32; 3]> = match raw.meta.get("sources") {
            Some(s) => serde_json::from_value(s.clone())
                .map_err(|e| Error::json("spectrum set sources", e))?,
            None => (0..raw.width as u32).map(|i| [0, 0, i]).collect(),
        };
        if sources.len() != raw.width {
            return Err(Error::Format(
                "spectrum set provenance length mismatch".into(),
            ));
        }
        Ok(Self {
            energy_bins: raw.energy_bins,
            counts,
            sources,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectraSplit {
    pub train: SpectrumSet,
    pub val: SpectrumSet,
    pub test: SpectrumSet,
}

/// Draws `n` pixel spectra uniformly without replacement across `cubes`
/// and splits them (train gets the rounding remainder).
pub fn sample_spectra_dataset(
    cubes: &[DataCube],
    n: usize,
    split: SplitFractions,
    seed: u64,
) -> Result<SpectraSplit> {
    let bins = cubes
        .first()
        .map(|c| c.energy_bins())
        .ok_or_else(|| Error::InvalidInput("no cubes to sample from".into()))?;
    if let Some(c) = cubes.iter().find(|c| c.energy_bins() != bins) {
        return Err(Error::Shape(format!(
            "cubes disagree on energy depth ({} vs {bins})",
            c.energy_bins()
        )));
    }
    let offsets: Vec<usize> = cubes
        .iter()
        .scan(0, |acc, c| {
            let start = *acc;
            *acc += c.pixel_count();
            Some(start)
        })
        .collect();
    let total: usize = cubes.iter().map(|c| c.pixel_count()).sum();
    if n > total {
        return Err(Error::InvalidInput(format!(
            "requested {n} spectra but only {total} pixels are available"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..total).collect();
    idx.partial_shuffle(&mut rng, n);
    idx.truncate(n);

    let gather = |ids: &[usize]| {
        let mut counts = Vec::with_capacity(ids.len() * bins);
        let mut sources = Vec::with_capacity(ids.len());
        for &g in ids {
            let ci = offsets.partition_point(|&o| o <= g) - 1;
            let local = g - offsets[ci];
            let cube = &cubes[ci];
            counts.extend_from_slice(cube.spectrum_at(local));
            sources.push([
                ci as u32,
                (local / cube.width()) as u32,
                (local % cube.width()) as u32,
            ]);
        }
        SpectrumSet {
            energy_bins: bins,
            counts,
            sources,
        }
    };
    let (n_train, n_val, _) = split.sizes(n);
    Ok(SpectraSplit {
        train: gather(&idx[..n_train]),
        val: gather(&idx[n_train..n_train + n_val]),
        test: gather(&idx[n_train + n_val..]),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::palette::{PigmentEntry, PigmentPalette};

    fn two_pigments() -> PigmentPalette {
        PigmentPalette::new(
            4,
            vec![
                PigmentEntry {
                    name: "red".into(),
                    rgb: [200, 20, 20],
                    spectrum: vec![1.0, 3.0, 0.0, 0.0],
                },
                PigmentEntry {
                    name: "blue".into(),
                    rgb: [20, 20, 200],
                    spectrum: vec![0.0, 0.0, 2.0, 6.0],
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn single_survivor_is_its_spectrum() {
        let p = two_pigments();
        let d = mix_distribution(RgbColor::from_u8([200, 20, 20]), &p, 0.99).unwrap();
        assert_eq!(d.contributors(), vec![0]);
        assert_eq!(d.normalized, vec![0.25, 0.75, 0.0, 0.0]);
    }

    #[test]
    fn threshold_zero_uses_everything() {
        let p = two_pigments();
        let c = RgbColor::from_u8([120, 20, 120]);
        let d = mix_distribution(c, &p, 0.0).unwrap();
        assert_eq!(d.contributors(), vec![0, 1]);
        let a = pigment_similarities(c, &p, 100.0);
        let mut oracle: Vec<f64> = (0..4)
            .map(|j| a[0] * p.entries()[0].spectrum[j] + a[1] * p.entries()[1].spectrum[j])
            .collect();
        let s: f64 = oracle.iter().sum();
        oracle.iter_mut().for_each(|v| *v /= s);
        for (x, y) in d.normalized.iter().zip(&oracle) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn no_match_reports_best_alpha() {
        let p = two_pigments();
        match mix_distribution(RgbColor::from_u8([20, 220, 20]), &p, 0.999) {
            Err(Error::NoMatchingPigment { best_alpha, .. }) => assert!(best_alpha < 0.999),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn point_mass_and_zero_counts() {
        let d = MixingDistribution {
            weights: vec![(0, 1.0)],
            normalized: (0..16).map(|i| if i == 7 { 1.0 } else { 0.0 }).collect(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = sample_spectrum(&d, 100, &mut rng).unwrap();
        assert_eq!(s[7], 100);
        assert_eq!(s.iter().sum::<u32>(), 100);
        assert!(sample_spectrum(&d, 0, &mut rng)
            .unwrap()
            .iter()
            .all(|&c| c == 0));
    }

    #[test]
    fn split_sizes() {
        let f = SplitFractions::default();
        assert_eq!(f.sizes(100), (70, 20, 10));
        assert_eq!(f.sizes(16), (12, 3, 1));
        assert_eq!(f.sizes(1), (1, 0, 0));
    }

    #[test]
    fn exhaustive_draw_is_a_permutation() {
        let cube = DataCube::new(2, 5, 1, (0..10).collect(), CubeMeta::default()).unwrap();
        let s = sample_spectra_dataset(
            &[cube],
            10,
            SplitFractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            9,
        )
        .unwrap();
        let mut got = s.train.counts.clone();
        assert_ne!(
            got,
            (0..10).collect::<Vec<u32>>(),
            "expected a shuffled order"
        );
        got.sort_unstable();
        assert_eq!(got, (0..10).collect::<Vec<u32>>());
        let again = sample_spectra_dataset(
            &[DataCube::new(2, 5, 1, (0..10).collect(), CubeMeta::default()).unwrap()],
            10,
            SplitFractions {
                train: 1.0,
                val: 0.0,
                test: 0.0,
            },
            9,
        )
        .unwrap();
        assert_eq!(again, s);
    }

    #[test]
    fn too_many_spectra_errors() {
        let cube = DataCube::new(1, 3, 2, vec![1; 6], CubeMeta::default()).unwrap();
        assert!(sample_spectra_dataset(&[cube], 4, SplitFractions::default(), 0).is_err());
    }

    #[test]
    fn spectrum_set_round_trip() {
        let set = SpectrumSet {
            energy_bins: 2,
            counts: vec![1, 2, 3, 4],
            sources: vec![[0, 0, 1], [2, 3, 4]],
        };
        assert_eq!(SpectrumSet::from_bytes(&set.to_bytes()).unwrap(), set);
    }
}
