use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xrecolor::metrics::{ms_ssim, uiqi, MsSsimOptions};
use xrecolor::raster::Planar;
use xrecolor::recolor::UIQI_WINDOW;

fn random_image(rng: &mut ChaCha8Rng) -> Planar {
    let h = rng.random_range(16..=128);
    let w = rng.random_range(16..=128);
    Planar::new(3, h, w, (0..3 * h * w).map(|_| rng.random()).collect()).unwrap()
}

#[test]
fn identical_images_score_one() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let opts = MsSsimOptions::default();
    for i in 0..100 {
        let x = random_image(&mut rng);
        let m = ms_ssim(&x, &x, &opts).unwrap().value;
        assert!((m - 1.0).abs() <= 1e-6, "image {i}: ms_ssim {m}");
        let q = uiqi(&x, &x, UIQI_WINDOW).unwrap();
        assert_eq!(q.degenerate_windows, 0);
        assert!((q.value - 1.0).abs() < 1e-12, "image {i}: uiqi {}", q.value);
    }
    assert!(start.elapsed().as_secs_f64() < 30.0);
}

#[test]
fn a_perturbed_image_scores_below_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_image(&mut rng);
    let mut y = x.clone();
    for v in &mut y.data {
        *v = (*v + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0);
    }
    assert!(ms_ssim(&x, &y, &MsSsimOptions::default()).unwrap().value < 0.99);
    assert!(uiqi(&x, &y, UIQI_WINDOW).unwrap().value < 0.99);
}
