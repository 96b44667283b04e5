//! `XEMB` embedded-image files.
//!
//! Little-endian: magic `XEMB`, u32 version (1), u32 H, u32 W, u32 C, the
//! H·W·C f32 payload in pixel-major order, then a u32-length-prefixed JSON
//! metadata blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Reader};
use crate::raster::Planar;

pub const EMBED_MAGIC: &[u8; 4] = b"XEMB";
pub const EMBED_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedMeta {
    pub source_cube: String,
    pub checkpoint: String,
}

/// H×W×C latent means, stored pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedImage {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
    pub meta: EmbedMeta,
}

impl EmbeddedImage {
    pub fn new(
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
        meta: EmbedMeta,
    ) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "{} values for a {height}x{width}x{channels} embedded image",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical(
                "embedded image has non-finite values".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
            meta,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// Channel-major copy for the image models.
    pub fn to_planar(&self) -> Planar {
        let n = self.height * self.width;
        let mut data = vec![0.0; self.channels * n];
        for (p, px) in self.data.chunks_exact(self.channels).enumerate() {
            for (c, &v) in px.iter().enumerate() {
                data[c * n + p] = v as f64;
            }
        }
        Planar::new(self.channels, self.height, self.width, data).expect("sized to shape")
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(20 + 4 * self.data.len() + 64);
        out.extend_from_slice(EMBED_MAGIC);
        out.extend_from_slice(&EMBED_VERSION.to_le_bytes());
        for d in [self.height, self.width, self.channels] {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        io::put_json_blob(
            &mut out,
            &serde_json::to_value(&self.meta).expect("meta serializes"),
        );
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "XEMB embedded image");
        r.magic(EMBED_MAGIC)?;
        let version = r.u32()?;
        if version != EMBED_VERSION {
            return Err(Error::Format(format!("unsupported XEMB version {version}")));
        }
        let (h, w, c) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let n = io::checked_volume(&[h, w, c], "XEMB embedded image")?;
        let data = r.f32_vec(n)?;
        let meta = serde_json::from_value(r.json_blob()?)
            .map_err(|e| Error::json("embedded image metadata", e))?;
        r.finish()?;
        Self::new(h, w, c, data, meta)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&io::read_file(path)?).map_err(|e| match e {
            Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let img = EmbeddedImage::new(
            2,
            1,
            3,
            vec![0.5, -1.0, 2.0, 3.0, 4.0, 5.0],
            EmbedMeta {
                source_cube: "c".into(),
                checkpoint: "k".into(),
            },
        )
        .unwrap();
        let b = img.to_bytes();
        assert_eq!(&b[..4], b"XEMB");
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(f32::from_le_bytes(b[20..24].try_into().unwrap()), 0.5);
        assert_eq!(EmbeddedImage::from_bytes(&b).unwrap(), img);
        let p = img.to_planar();
        assert_eq!(p.at(0, 1, 0), 3.0);
        assert_eq!(p.at(2, 0, 0), 2.0);
    }

    #[test]
    fn rejects_garbage() {
        assert!(EmbeddedImage::from_bytes(b"XRFC\x01\0\0\0").is_err());
        assert!(
            EmbeddedImage::new(1, 1, 3, vec![f32::NAN, 0.0, 0.0], EmbedMeta::default()).is_err()
        );
    }
}
