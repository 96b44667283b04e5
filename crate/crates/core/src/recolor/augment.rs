use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::raster::Planar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub hflip: bool,
    /// Maximum absolute rotation in degrees; 0 disables rotation.
    pub max_rotation_deg: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            hflip: true,
            max_rotation_deg: 5.0,
        }
    }
}

impl AugmentConfig {
    pub fn none() -> Self {
        Self {
            hflip: false,
            max_rotation_deg: 0.0,
        }
    }
}

pub fn hflip(img: &Planar) -> Planar {
    let mut out = img.clone();
    for row in out.data.chunks_exact_mut(img.width) {
        row.reverse();
    }
    out
}

fn reflect(i: f64, n: usize) -> f64 {
    if n == 1 {
        return 0.0;
    }
    let period = 2.0 * (n - 1) as f64;
    let m = i.rem_euclid(period);
    if m > (n - 1) as f64 {
        period - m
    } else {
        m
    }
}

/// Bilinear rotation about the image centre with reflect padding.
pub fn rotate(img: &Planar, degrees: f64) -> Planar {
    if degrees == 0.0 {
        return img.clone();
    }
    let (h, w) = (img.height, img.width);
    let (s, c) = degrees.to_radians().sin_cos();
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Planar::zeros(img.channels, h, w);
    for y in 0..h {
        for x in 0..w {
            let (dy, dx) = (y as f64 - cy, x as f64 - cx);
            let sy = reflect(c * dy - s * dx + cy, h);
            let sx = reflect(s * dy + c * dx + cx, w);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
            let (fy, fx) = (sy - y0 as f64, sx - x0 as f64);
            for ch in 0..img.channels {
                let v = (1.0 - fy) * ((1.0 - fx) * img.at(ch, y0, x0) + fx * img.at(ch, y0, x1))
                    + fy * ((1.0 - fx) * img.at(ch, y1, x0) + fx * img.at(ch, y1, x1));
                out.data[(ch * h + y) * w + x] = v;
            }
        }
    }
    out
}

/// Applies the same random flip and rotation to an input/target pair.
pub fn augment_pair<R: Rng + ?Sized>(
    input: &Planar,
    target: &Planar,
    cfg: &AugmentConfig,
    rng: &mut R,
) -> (Planar, Planar) {
    let flip = cfg.hflip && rng.random::<f64>() < 0.5;
    let angle = if cfg.max_rotation_deg > 0.0 {
        rng.random_range(-cfg.max_rotation_deg..=cfg.max_rotation_deg)
    } else {
        0.0
    };
    let mut a = input.clone();
    let mut b = target.clone();
    if flip {
        a = hflip(&a);
        b = hflip(&b);
    }
    (rotate(&a, angle), rotate(&b, angle))
}
