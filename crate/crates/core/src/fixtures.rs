//! Small deterministic datasets for overfit checks and demos.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::palette::demo_palette;
use crate::raster::Planar;
use crate::recolor::{AugmentConfig, RecolorPair, RecolorTrainConfig, SmallUViTConfig};
use crate::synth::{mix_distribution, sample_spectrum};

/// `n` L1-normalized 512-bin spectra, 1000 counts each, cycling through the
/// demo palette's pigment colours.
pub fn toy_spectra(n: usize, seed: u64) -> Vec<f64> {
    let palette = demo_palette(512);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::with_capacity(n * 512);
    for i in 0..n {
        let entry = &palette.entries()[i % palette.len()];
        let dist =
            mix_distribution(entry.color(), &palette, 0.9).expect("demo colours match themselves");
        let counts = sample_spectrum(&dist, 1000, &mut rng).expect("valid distribution");
        let total: u32 = counts.iter().sum();
        rows.extend(counts.iter().map(|&c| c as f64 / total as f64));
    }
    rows
}

/// `n` piecewise-constant pairs of `size`×`size` pixels in 16-pixel blocks:
/// each block carries a latent code and the RGB colour it should map to.
pub fn toy_recolor_pairs(n: usize, size: usize) -> Vec<RecolorPair> {
    let plane = size * size;
    (0..n)
        .map(|k| {
            let mut input = vec![0.0; 3 * plane];
            let mut target = vec![0.0; 3 * plane];
            for y in 0..size {
                for x in 0..size {
                    let region = ((y / 16) * 4 + x / 16 + k * 3) % 5;
                    let code = [
                        region as f64 - 2.0,
                        (region * 7 % 5) as f64 * 0.5,
                        k as f64 * 0.1,
                    ];
                    let rgb = [
                        region as f64 / 4.0,
                        ((region * 3) % 5) as f64 / 4.0,
                        1.0 - region as f64 / 4.0,
                    ];
                    for c in 0..3 {
                        input[c * plane + y * size + x] = code[c];
                        target[c * plane + y * size + x] = rgb[c];
                    }
                }
            }
            RecolorPair {
                input: Planar::new(3, size, size, input).expect("sized"),
                target: Planar::new(3, size, size, target).expect("sized"),
            }
        })
        .collect()
}

/// Toy model with regularization switched off, for overfitting a few pairs.
pub fn toy_recolor_config(steps: usize) -> RecolorTrainConfig {
    RecolorTrainConfig {
        model: SmallUViTConfig {
            dropout: 0.0,
            stochastic_depth: 0.0,
            ..SmallUViTConfig::toy()
        },
        epochs: steps,
        batch_size: 8,
        lr: 2e-3,
        augment: AugmentConfig::none(),
        max_steps: Some(steps),
        ..RecolorTrainConfig::default()
    }
}
