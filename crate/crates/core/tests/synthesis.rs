use std::collections::HashSet;
use std::time::Instant;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};
use xrecolor::color::RgbColor;
use xrecolor::palette::{demo_palette, normalize_l1};
use xrecolor::raster::RgbImage;
use xrecolor::synth::{
    generate_xrf, generate_xrf_detailed, sample_spectra_dataset, CategoricalSampler,
    SplitFractions, SynthConfig,
};

fn block_image(h: usize, w: usize) -> RgbImage {
    let colours = [
        [155u8, 56, 38],
        [30, 60, 170],
        [212, 160, 50],
        [245, 245, 240],
    ];
    let mut img = RgbImage::filled(h, w, RgbColor::from_u8(colours[0]));
    for y in 0..h {
        for x in 0..w {
            let q = (y * 2 / h) * 2 + x * 2 / w;
            img.set(y, x, RgbColor::from_u8(colours[q]));
        }
    }
    img
}

#[test]
fn million_counts_track_a_known_spectrum() {
    let start = Instant::now();
    let palette = demo_palette(512);
    let p = normalize_l1(&palette.entries()[0].spectrum).unwrap();
    let sampler = CategoricalSampler::new(&p).unwrap();
    let n = 1_000_000u32;
    let counts = sampler.sample_counts(n, &mut ChaCha8Rng::seed_from_u64(11));
    assert_eq!(counts.iter().map(|&c| c as u64).sum::<u64>(), n as u64);
    let l1: f64 = counts
        .iter()
        .zip(&p)
        .map(|(&c, &q)| (c as f64 / n as f64 - q).abs())
        .sum();
    // mean absolute deviation of a binomial proportion, summed over bins
    let expected: f64 = p
        .iter()
        .map(|&q| (2.0 * q * (1.0 - q) / (std::f64::consts::PI * n as f64)).sqrt())
        .sum();
    assert!(l1 < 0.01, "L1 {l1}");
    assert!(
        l1 < 1.5 * expected,
        "L1 {l1} far above its expectation {expected}"
    );
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

/// Pearson statistic with bins of expected count below 5 pooled together.
fn chi_square(observed: &[u64], probs: &[f64]) -> (f64, usize) {
    let total: u64 = observed.iter().sum();
    let (mut stat, mut bins) = (0.0, 0);
    let (mut pool_o, mut pool_e) = (0.0, 0.0);
    for (&o, &q) in observed.iter().zip(probs) {
        let e = q * total as f64;
        if e < 5.0 {
            pool_o += o as f64;
            pool_e += e;
        } else {
            stat += (o as f64 - e).powi(2) / e;
            bins += 1;
        }
    }
    if pool_e > 0.0 {
        stat += (pool_o - pool_e).powi(2) / pool_e;
        bins += 1;
    }
    (stat, bins - 1)
}

#[test]
fn every_cluster_passes_a_chi_square_test() {
    let start = Instant::now();
    let palette = demo_palette(512);
    let img = block_image(64, 64);
    let cfg = SynthConfig {
        seed: 5,
        ..SynthConfig::default()
    };
    let out = generate_xrf_detailed(&img, &palette, &cfg).unwrap();
    let e = out.cube.energy_bins();
    assert!(out.clusters.k >= 2);
    for (label, dist) in out.distributions.iter().enumerate() {
        let mut pooled = vec![0u64; e];
        for y in 0..64 {
            for x in 0..64 {
                if out.clusters.label_at(y, x) == label {
                    for (acc, &c) in pooled.iter_mut().zip(out.cube.spectrum(y, x)) {
                        *acc += c as u64;
                    }
                }
            }
        }
        let (stat, dof) = chi_square(&pooled, &dist.normalized);
        let p = 1.0 - ChiSquared::new(dof as f64).unwrap().cdf(stat);
        assert!(
            p > 0.01,
            "cluster {label}: chi2 {stat:.1} on {dof} dof, p = {p:.4}"
        );
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn each_pixel_gets_exactly_its_count_budget() {
    let palette = demo_palette(64);
    let cfg = SynthConfig {
        counts_per_pixel: 321,
        ..SynthConfig::default()
    };
    let cube = generate_xrf(&block_image(12, 10), &palette, &cfg).unwrap();
    for i in 0..cube.pixel_count() {
        assert_eq!(cube.spectrum_at(i).iter().sum::<u32>(), 321);
    }
}

#[test]
fn synthesis_is_seed_deterministic() {
    let palette = demo_palette(64);
    let img = block_image(16, 16);
    let cfg = SynthConfig {
        seed: 9,
        ..SynthConfig::default()
    };
    let a = generate_xrf(&img, &palette, &cfg).unwrap();
    let b = generate_xrf(&img, &palette, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let c = generate_xrf(&img, &palette, &SynthConfig { seed: 10, ..cfg }).unwrap();
    assert_ne!(a.counts(), c.counts());
}

#[test]
fn spectra_sampling_is_without_replacement() {
    let palette = demo_palette(32);
    let cfg = SynthConfig::default();
    let cubes = vec![
        generate_xrf(&block_image(6, 5), &palette, &cfg).unwrap(),
        generate_xrf(&block_image(4, 4), &palette, &cfg).unwrap(),
    ];
    let split = sample_spectra_dataset(&cubes, 40, SplitFractions::default(), 3).unwrap();
    assert_eq!(
        (split.train.len(), split.val.len(), split.test.len()),
        (28, 8, 4)
    );
    let mut seen = HashSet::new();
    for set in [&split.train, &split.val, &split.test] {
        for (i, src) in set.sources.iter().enumerate() {
            assert!(seen.insert(*src), "duplicate {src:?}");
            let cube = &cubes[src[0] as usize];
            assert_eq!(
                set.spectrum(i),
                cube.spectrum(src[1] as usize, src[2] as usize)
            );
        }
    }
    assert!(sample_spectra_dataset(&cubes, 47, SplitFractions::default(), 3).is_err());
}

proptest! {
    #[test]
    fn split_sizes_partition_n(n in 0usize..10_000) {
        let (a, b, c) = SplitFractions::default().sizes(n);
        prop_assert_eq!(a + b + c, n);
        prop_assert!(b <= n / 5 && c <= n / 10);
    }

    #[test]
    fn sampler_never_draws_empty_bins(
        weights in prop::collection::vec(prop_oneof![Just(0.0), 0.01..1.0f64], 2..40),
        seed in any::<u64>(),
    ) {
        prop_assume!(weights.iter().any(|&w| w > 0.0));
        let probs = normalize_l1(&weights).unwrap();
        let sampler = CategoricalSampler::new(&probs).unwrap();
        let counts = sampler.sample_counts(500, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(counts.iter().sum::<u32>(), 500);
        for (c, w) in counts.iter().zip(&weights) {
            if *w == 0.0 {
                prop_assert_eq!(*c, 0);
            }
        }
    }
}
