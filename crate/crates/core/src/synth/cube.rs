//! `XRFC` datacube files.
//!
//! Little-endian layout: magic `XRFC`, u32 version (1), u32 H, u32 W, u32 E,
//! u8 dtype (0 = u32, 1 = f32), 7 zero bytes, the row-major H·W·E payload,
//! then a u32-length-prefixed JSON metadata blob.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{self, Reader};

pub const CUBE_MAGIC: &[u8; 4] = b"XRFC";
pub const CUBE_VERSION: u32 = 1;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CubeMeta {
    pub seed: u64,
    pub counts_per_pixel: u32,
    pub palette_id: String,
    pub source: Option<String>,
    /// Free-form extra fields (cluster count, sample provenance, ...).
    pub extra: serde_json::Map<String, serde_json::Value>,
}

/// H×W×E spectral counts.
#[derive(Debug, Clone, PartialEq)]
pub struct DataCube {
    height: usize,
    width: usize,
    energy_bins: usize,
    counts: Vec<u32>,
    pub meta: CubeMeta,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CubePayload {
    U32(Vec<u32>),
    F32(Vec<f32>),
}

/// A decoded file of either dtype.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCube {
    pub height: usize,
    pub width: usize,
    pub energy_bins: usize,
    pub payload: CubePayload,
    pub meta: serde_json::Value,
}

impl DataCube {
    pub fn new(
        height: usize,
        width: usize,
        energy_bins: usize,
        counts: Vec<u32>,
        meta: CubeMeta,
    ) -> Result<Self> {
        if counts.len() != height * width * energy_bins {
            return Err(Error::Shape(format!(
                "{} counts for a {height}x{width}x{energy_bins} cube",
                counts.len()
            )));
        }
        Ok(Self {
            height,
            width,
            energy_bins,
            counts,
            meta,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn energy_bins(&self) -> usize {
        self.energy_bins
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn spectrum(&self, y: usize, x: usize) -> &[u32] {
        let i = (y * self.width + x) * self.energy_bins;
        &self.counts[i..i + self.energy_bins]
    }

    /// Spectrum of the `i`-th pixel in row-major order.
    pub fn spectrum_at(&self, i: usize) -> &[u32] {
        &self.counts[i * self.energy_bins..(i + 1) * self.energy_bins]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = serde_json::to_value(&self.meta).expect("meta serializes");
        encode(
            self.height,
            self.width,
            self.energy_bins,
            &CubePayloadRef::U32(&self.counts),
            &meta,
        )
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let raw = RawCube::from_bytes(bytes)?;
        let counts = match raw.payload {
            CubePayload::U32(v) => v,
            CubePayload::F32(_) => {
                return Err(Error::Format(
                    "expected a u32 count cube, found f32 payload".into(),
                ))
            }
        };
        let meta: CubeMeta =
            serde_json::from_value(raw.meta).map_err(|e| Error::json("cube metadata", e))?;
        Self::new(raw.height, raw.width, raw.energy_bins, counts, meta)
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

pub(crate) enum CubePayloadRef<'a> {
    U32(&'a [u32]),
    F32(&'a [f32]),
}

pub(crate) fn encode(
    h: usize,
    w: usize,
    e: usize,
    payload: &CubePayloadRef<'_>,
    meta: &serde_json::Value,
) -> Vec<u8> {
    let n = h * w * e;
    let mut out = Vec::with_capacity(28 + 4 * n + 64);
    out.extend_from_slice(CUBE_MAGIC);
    out.extend_from_slice(&CUBE_VERSION.to_le_bytes());
    for d in [h, w, e] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match payload {
        CubePayloadRef::U32(v) => {
            out.push(0);
            out.extend_from_slice(&[0u8; 7]);
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        CubePayloadRef::F32(v) => {
            out.push(1);
            out.extend_from_slice(&[0u8; 7]);
            for x in v.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    io::put_json_blob(&mut out, meta);
    out
}

impl RawCube {
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "XRFC cube");
        r.magic(CUBE_MAGIC)?;
        let version = r.u32()?;
        if version != CUBE_VERSION {
            return Err(Error::Format(format!("unsupported XRFC version {version}")));
        }
        let (h, w, e) = (r.u32()? as usize, r.u32()? as usize, r.u32()? as usize);
        let dtype = r.u8()?;
        r.take(7)?;
        let n = io::checked_volume(&[h, w, e], "XRFC cube")?;
        let payload = match dtype {
            0 => CubePayload::U32(r.u32_vec(n)?),
            1 => CubePayload::F32(r.f32_vec(n)?),
            other => return Err(Error::Format(format!("unknown XRFC dtype code {other}"))),
        };
        let meta = r.json_blob()?;
        r.finish()?;
        Ok(Self {
            height: h,
            width: w,
            energy_bins: e,
            payload,
            meta,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload = match &self.payload {
            CubePayload::U32(v) => CubePayloadRef::U32(v),
            CubePayload::F32(v) => CubePayloadRef::F32(v),
        };
        encode(
            self.height,
            self.width,
            self.energy_bins,
            &payload,
            &self.meta,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let cube = DataCube::new(1, 2, 3, vec![1, 2, 3, 4, 5, 6], CubeMeta::default()).unwrap();
        let b = cube.to_bytes();
        assert_eq!(&b[0..4], b"XRFC");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(b[20], 0);
        assert_eq!(&b[21..28], &[0u8; 7]);
        assert_eq!(u32::from_le_bytes(b[28..32].try_into().unwrap()), 1);
        let meta_len = u32::from_le_bytes(b[52..56].try_into().unwrap()) as usize;
        assert_eq!(b.len(), 56 + meta_len);
        assert_eq!(DataCube::from_bytes(&b).unwrap(), cube);
    }

    #[test]
    fn f32_payload_round_trip_and_rejection() {
        let raw = RawCube {
            height: 1,
            width: 1,
            energy_bins: 2,
            payload: CubePayload::F32(vec![0.5, 0.25]),
            meta: serde_json::json!({"k": 1}),
        };
        let bytes = raw.to_bytes();
        assert_eq!(bytes[20], 1);
        assert_eq!(RawCube::from_bytes(&bytes).unwrap(), raw);
        assert!(DataCube::from_bytes(&bytes).is_err());
    }

    #[test]
    fn truncated_and_bad_magic() {
        let cube = DataCube::new(2, 2, 2, vec![7; 8], CubeMeta::default()).unwrap();
        let b = cube.to_bytes();
        assert!(DataCube::from_bytes(&b[..b.len() - 1]).is_err());
        let mut bad = b.clone();
        bad[0] = b'Y';
        assert!(matches!(DataCube::from_bytes(&bad), Err(Error::Format(_))));
    }
}
