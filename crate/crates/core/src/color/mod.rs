//! Colour math: sRGB to CIELAB, CIEDE2000, the redmean sRGB distance and
//! the similarity score used to match cluster colours against pigments.

mod kmeans;

pub use kmeans::{
    cluster_points, ikmeans, kmeans, ClusterModel, IKMeansConfig, KMeansRun, PointClustering,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized sRGB colour, channels in [0,1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbColor {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl RgbColor {
    pub fn new(r: f64, g: f64, b: f64) -> Result<Self> {
        let c = Self { r, g, b };
        if c.to_array().iter().all(|v| (0.0..=1.0).contains(v)) {
            Ok(c)
        } else {
            Err(Error::InvalidInput(format!(
                "rgb channels must lie in [0,1], got ({r}, {g}, {b})"
            )))
        }
    }

    /// Clamps each channel into [0,1].
    pub fn clamped(r: f64, g: f64, b: f64) -> Self {
        Self {
            r: r.clamp(0.0, 1.0),
            g: g.clamp(0.0, 1.0),
            b: b.clamp(0.0, 1.0),
        }
    }

    pub fn from_u8(rgb: [u8; 3]) -> Self {
        Self {
            r: rgb[0] as f64 / 255.0,
            g: rgb[1] as f64 / 255.0,
            b: rgb[2] as f64 / 255.0,
        }
    }

    pub fn to_u8(self) -> [u8; 3] {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        [q(self.r), q(self.g), q(self.b)]
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.r, self.g, self.b]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self::clamped(a[0], a[1], a[2])
    }

    pub fn to_lab(self) -> LabColor {
        srgb_to_lab(self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabColor {
    pub l: f64,
    pub a: f64,
    pub b: f64,
}

impl LabColor {
    pub fn new(l: f64, a: f64, b: f64) -> Self {
        Self { l, a, b }
    }
}

// D65 reference white, 2 degree observer.
const WHITE_X: f64 = 0.95047;
const WHITE_Y: f64 = 1.0;
const WHITE_Z: f64 = 1.08883;

fn srgb_to_linear(c: f64) -> f64 {
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const EPSILON: f64 = 216.0 / 24389.0;
    const KAPPA: f64 = 24389.0 / 27.0;
    if t > EPSILON {
        t.cbrt()
    } else {
        (KAPPA * t + 16.0) / 116.0
    }
}

/// sRGB (D65) to CIELAB.
pub fn srgb_to_lab(c: RgbColor) -> LabColor {
    let r = srgb_to_linear(c.r);
    let g = srgb_to_linear(c.g);
    let b = srgb_to_linear(c.b);
    let x = 0.4124 * r + 0.3576 * g + 0.1805 * b;
    let y = 0.2126 * r + 0.7152 * g + 0.0722 * b;
    let z = 0.0193 * r + 0.1192 * g + 0.9505 * b;
    let fx = lab_f(x / WHITE_X);
    let fy = lab_f(y / WHITE_Y);
    let fz = lab_f(z / WHITE_Z);
    LabColor {
        l: (116.0 * fy - 16.0).clamp(0.0, 100.0),
        a: 500.0 * (fx - fy),
        b: 200.0 * (fy - fz),
    }
}

fn hue_degrees(b: f64, a: f64) -> f64 {
    if a == 0.0 && b == 0.0 {
        return 0.0;
    }
    let h = b.atan2(a).to_degrees();
    if h < 0.0 {
        h + 360.0
    } else {
        h
    }
}

/// CIEDE2000 colour difference with kL = kC = kH = 1, following the
/// Sharma-Wu-Dalal implementation notes (including their hue conventions).
pub fn ciede2000(c1: LabColor, c2: LabColor) -> f64 {
    let pow7 = |v: f64| v.powi(7);
    let twenty_five_7 = pow7(25.0);

    let c1_ab = c1.a.hypot(c1.b);
    let c2_ab = c2.a.hypot(c2.b);
    let c_bar = 0.5 * (c1_ab + c2_ab);
    let g = 0.5 * (1.0 - (pow7(c_bar) / (pow7(c_bar) + twenty_five_7)).sqrt());

    let a1p = (1.0 + g) * c1.a;
    let a2p = (1.0 + g) * c2.a;
    let c1p = a1p.hypot(c1.b);
    let c2p = a2p.hypot(c2.b);
    let h1p = hue_degrees(c1.b, a1p);
    let h2p = hue_degrees(c2.b, a2p);

    let dl = c2.l - c1.l;
    let dc = c2p - c1p;
    let chroma_product = c1p * c2p;
    let dh_deg = if chroma_product == 0.0 {
        0.0
    } else {
        let d = h2p - h1p;
        if d > 180.0 {
            d - 360.0
        } else if d < -180.0 {
            d + 360.0
        } else {
            d
        }
    };
    let dh = 2.0 * chroma_product.sqrt() * (dh_deg.to_radians() * 0.5).sin();

    let l_bar = 0.5 * (c1.l + c2.l);
    let cp_bar = 0.5 * (c1p + c2p);
    let h_bar = if chroma_product == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        0.5 * (h1p + h2p)
    } else if h1p + h2p < 360.0 {
        0.5 * (h1p + h2p + 360.0)
    } else {
        0.5 * (h1p + h2p - 360.0)
    };

    let t = 1.0 - 0.17 * (h_bar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_bar).to_radians().cos()
        + 0.32 * (3.0 * h_bar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_bar - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let r_c = 2.0 * (pow7(cp_bar) / (pow7(cp_bar) + twenty_five_7)).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let s_c = 1.0 + 0.045 * cp_bar;
    let s_h = 1.0 + 0.015 * cp_bar * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;

    let tl = dl / s_l;
    let tc = dc / s_c;
    let th = dh / s_h;
    (tl * tl + tc * tc + th * th + r_t * tc * th)
        .max(0.0)
        .sqrt()
}

/// Redmean weighted sRGB distance on [0,1] channels; black vs white is 3.
pub fn redmean(c1: RgbColor, c2: RgbColor) -> f64 {
    let r_mean = 0.5 * (c1.r + c2.r);
    let dr = c2.r - c1.r;
    let dg = c2.g - c1.g;
    let db = c2.b - c1.b;
    ((2.0 + r_mean) * dr * dr + 4.0 * dg * dg + (3.0 - r_mean) * db * db).sqrt()
}

/// Default similarity scale: a CIEDE2000 difference of 100 maps to zero.
pub const DEFAULT_SIMILARITY_SCALE: f64 = 100.0;

/// `max(0, 1 - dE00 / 100)`.
pub fn color_similarity(c1: RgbColor, c2: RgbColor) -> f64 {
    color_similarity_scaled(c1, c2, DEFAULT_SIMILARITY_SCALE)
}

pub fn color_similarity_scaled(c1: RgbColor, c2: RgbColor, scale: f64) -> f64 {
    let de = ciede2000(srgb_to_lab(c1), srgb_to_lab(c2));
    (1.0 - de / scale).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rgb(r: f64, g: f64, b: f64) -> RgbColor {
        RgbColor::new(r, g, b).unwrap()
    }

    #[test]
    fn white_and_black() {
        let w = srgb_to_lab(rgb(1.0, 1.0, 1.0));
        assert!((w.l - 100.0).abs() < 1e-6);
        assert!(w.a.abs() < 0.02 && w.b.abs() < 0.02);
        let k = srgb_to_lab(rgb(0.0, 0.0, 0.0));
        assert_eq!((k.l, k.a, k.b), (0.0, 0.0, 0.0));
    }

    // Reference values from scikit-image `rgb2lab` (D65, 2 deg), computed
    // outside this crate.
    #[test]
    fn primaries_match_reference_converter() {
        let cases = [
            ([1.0, 0.0, 0.0], [53.24058794, 80.09230823, 67.20275104]),
            ([0.0, 1.0, 0.0], [87.73509949, -86.18302974, 83.17970318]),
            ([0.0, 0.0, 1.0], [32.29567257, 79.18559091, -107.85730021]),
            ([0.5, 0.25, 0.75], [41.15482443, 51.40896626, -56.44527966]),
        ];
        for (c, expected) in cases {
            let lab = srgb_to_lab(rgb(c[0], c[1], c[2]));
            for (got, want) in [lab.l, lab.a, lab.b].iter().zip(expected) {
                assert!((got - want).abs() < 0.02, "{c:?}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn redmean_examples() {
        let black = rgb(0.0, 0.0, 0.0);
        let white = rgb(1.0, 1.0, 1.0);
        assert_eq!(redmean(black, white), 3.0);
        assert_eq!(redmean(white, white), 0.0);
        let red = rgb(1.0, 0.0, 0.0);
        assert!((redmean(red, black) - 1.581_138_830_084_19).abs() < 1e-12);
    }

    #[test]
    fn similarity_examples() {
        let c = rgb(0.3, 0.6, 0.2);
        assert_eq!(color_similarity(c, c), 1.0);
        // dE00(black, white) = 100.0000002 from scikit-image; similarity clamps to 0
        let s = color_similarity(rgb(0.0, 0.0, 0.0), rgb(1.0, 1.0, 1.0));
        assert!(s.abs() < 1e-6, "{s}");
        // dE00(red, black) = 50.4112285 from scikit-image
        let s = color_similarity(rgb(1.0, 0.0, 0.0), rgb(0.0, 0.0, 0.0));
        assert!((s - (1.0 - 0.504112285)).abs() < 2e-4, "{s}");
    }

    #[test]
    fn rgb_domain_checked() {
        assert!(RgbColor::new(1.1, 0.0, 0.0).is_err());
        assert_eq!(RgbColor::from_u8([255, 0, 51]).to_u8(), [255, 0, 51]);
    }
}
