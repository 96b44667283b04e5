//! Image containers and 8-bit PNG input/output.

use std::io::Cursor;
use std::path::Path;

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::imageops::FilterType as ResizeFilter;
use image::{ExtendedColorType, ImageEncoder, ImageReader};

use crate::color::RgbColor;
use crate::error::{Error, Result};
use crate::io;

/// Row-major H×W grid of RGB colours.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    pixels: Vec<RgbColor>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, pixels: Vec<RgbColor>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::Shape(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, color: RgbColor) -> Self {
        Self {
            height,
            width,
            pixels: vec![color; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn pixels(&self) -> &[RgbColor] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize) -> RgbColor {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, c: RgbColor) {
        self.pixels[y * self.width + x] = c;
    }

    pub fn to_planar(&self) -> Planar {
        let n = self.pixels.len();
        let mut data = vec![0.0; 3 * n];
        for (i, p) in self.pixels.iter().enumerate() {
            data[i] = p.r;
            data[n + i] = p.g;
            data[2 * n + i] = p.b;
        }
        Planar {
            channels: 3,
            height: self.height,
            width: self.width,
            data,
        }
    }

    pub fn from_png_bytes(bytes: &[u8]) -> Result<Self> {
        let img = ImageReader::new(Cursor::new(bytes))
            .with_guessed_format()
            .map_err(|e| Error::Image(e.to_string()))?
            .decode()
            .map_err(|e| Error::Image(e.to_string()))?
            .to_rgb8();
        let (w, h) = img.dimensions();
        let pixels = img.pixels().map(|p| RgbColor::from_u8(p.0)).collect();
        Self::new(h as usize, w as usize, pixels)
    }

    pub fn load_png(path: &Path) -> Result<Self> {
        let bytes = io::read_file(path)?;
        Self::from_png_bytes(&bytes).map_err(|e| Error::Image(format!("{}: {e}", path.display())))
    }

    pub fn to_png_bytes(&self) -> Result<Vec<u8>> {
        let raw: Vec<u8> = self.pixels.iter().flat_map(|p| p.to_u8()).collect();
        let mut out = Vec::new();
        // fixed encoder settings keep output byte-identical across runs
        PngEncoder::new_with_quality(&mut out, CompressionType::Default, FilterType::Adaptive)
            .write_image(
                &raw,
                self.width as u32,
                self.height as u32,
                ExtendedColorType::Rgb8,
            )
            .map_err(|e| Error::Image(e.to_string()))?;
        Ok(out)
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_png_bytes()?)
    }

    /// Resamples to `height`×`width` with a triangle filter on 8-bit values.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        if height == self.height && width == self.width {
            return self.clone();
        }
        let raw: Vec<u8> = self.pixels.iter().flat_map(|p| p.to_u8()).collect();
        let buf = image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches");
        let out =
            image::imageops::resize(&buf, width as u32, height as u32, ResizeFilter::Triangle);
        Self {
            height,
            width,
            pixels: out.pixels().map(|p| RgbColor::from_u8(p.0)).collect(),
        }
    }

    /// Horizontal concatenation; all parts must share a height.
    pub fn hconcat(parts: &[&RgbImage]) -> Result<Self> {
        let h = parts.first().map(|p| p.height).unwrap_or(0);
        if parts.iter().any(|p| p.height != h) {
            return Err(Error::Shape("montage parts differ in height".into()));
        }
        let w: usize = parts.iter().map(|p| p.width).sum();
        let mut pixels = Vec::with_capacity(h * w);
        for y in 0..h {
            for p in parts {
                pixels.extend_from_slice(&p.pixels[y * p.width..(y + 1) * p.width]);
            }
        }
        Self::new(h, w, pixels)
    }
}

/// Channel-major C×H×W array of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Planar {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Planar {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "{} values for a {channels}x{height}x{width} array",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn same_shape(&self, other: &Planar) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    /// Interprets a 3-channel array in [0,1] as RGB (values are clamped).
    pub fn to_rgb(&self) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::Shape(format!(
                "{} channels is not RGB",
                self.channels
            )));
        }
        let n = self.height * self.width;
        let pixels = (0..n)
            .map(|i| RgbColor::clamped(self.data[i], self.data[n + i], self.data[2 * n + i]))
            .collect();
        RgbImage::new(self.height, self.width, pixels)
    }

    /// Per-channel min-max stretch to [0,1], used for false-colour previews.
    pub fn false_color(&self) -> Result<RgbImage> {
        let mut out = self.clone();
        let n = self.height * self.width;
        for c in 0..self.channels {
            let plane = &mut out.data[c * n..(c + 1) * n];
            let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = if hi > lo { hi - lo } else { 1.0 };
            for v in plane.iter_mut() {
                *v = (*v - lo) / span;
            }
        }
        out.to_rgb()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn png_round_trip_is_exact_on_8bit() {
        let px: Vec<RgbColor> = (0..12)
            .map(|i| RgbColor::from_u8([i * 20, 255 - i * 7, i.wrapping_mul(53)]))
            .collect();
        let img = RgbImage::new(3, 4, px).unwrap();
        let bytes = img.to_png_bytes().unwrap();
        assert_eq!(RgbImage::from_png_bytes(&bytes).unwrap(), img);
        assert_eq!(bytes, img.to_png_bytes().unwrap());
    }

    #[test]
    fn planar_round_trip() {
        let img = RgbImage::filled(2, 3, RgbColor::from_u8([10, 20, 30]));
        assert_eq!(img.to_planar().to_rgb().unwrap(), img);
    }

    #[test]
    fn corrupt_png_is_an_error() {
        assert!(RgbImage::from_png_bytes(b"\x89PNG\r\n\x1a\nnot really").is_err());
    }
}
