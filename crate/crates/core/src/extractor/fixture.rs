//! Golden embedding fixtures: encoded test images paired with reference embeddings
//! computed by the exporting framework. Used to check that the runtime here
//! reproduces the source model.
//!
//! Layout (little-endian): `DFLG`, u16 version, u64 header length, JSON header,
//! then `count` length-prefixed (u64) image blobs, then `count x embedding_dim` f32.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::BackboneHandle;
use crate::imageprep::{self, ImageTensor};
use crate::{Error, Result};

pub const FIXTURE_MAGIC: [u8; 4] = *b"DFLG";
pub const FIXTURE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureHeader {
    pub backbone_id: String,
    pub embedding_dim: usize,
    pub count: usize,
    #[serde(default)]
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenFixture {
    pub header: FixtureHeader,
    /// Encoded (PNG/JPEG) image bytes.
    pub images: Vec<Vec<u8>>,
    pub embeddings: Vec<Vec<f32>>,
}

pub fn encode_fixture(fx: &GoldenFixture) -> Result<Vec<u8>> {
    if fx.images.len() != fx.header.count || fx.embeddings.len() != fx.header.count {
        return Err(Error::Invariant("fixture count does not match its contents".into()));
    }
    let header = serde_json::to_vec(&fx.header).expect("header serializes");
    let mut out = Vec::new();
    out.extend_from_slice(&FIXTURE_MAGIC);
    out.extend_from_slice(&FIXTURE_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for img in &fx.images {
        out.extend_from_slice(&(img.len() as u64).to_le_bytes());
        out.extend_from_slice(img);
    }
    for row in &fx.embeddings {
        if row.len() != fx.header.embedding_dim {
            return Err(Error::DimensionMismatch {
                what: "fixture embedding".into(),
                expected: fx.header.embedding_dim,
                actual: row.len(),
            });
        }
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(Error::Truncated {
            expected: (self.pos + n) as u64,
            actual: self.bytes.len() as u64,
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn decode_fixture(bytes: &[u8]) -> Result<GoldenFixture> {
    let mut c = Cursor { bytes, pos: 0 };
    let magic = c.take(4)?;
    if magic != FIXTURE_MAGIC {
        return Err(Error::BadMagic {
            expected: FIXTURE_MAGIC,
            found: magic.try_into().unwrap(),
        });
    }
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != FIXTURE_VERSION {
        return Err(Error::Version {
            expected: FIXTURE_VERSION,
            found: version,
        });
    }
    let hlen = c.u64()? as usize;
    let header: FixtureHeader = serde_json::from_slice(c.take(hlen)?).map_err(|e| Error::Parse {
        path: "<fixture header>".into(),
        message: e.to_string(),
    })?;
    let mut images = Vec::with_capacity(header.count.min(1024));
    for _ in 0..header.count {
        let len = c.u64()? as usize;
        images.push(c.take(len)?.to_vec());
    }
    let mut embeddings = Vec::with_capacity(header.count.min(1024));
    for _ in 0..header.count {
        let raw = c.take(header.embedding_dim * 4)?;
        let row: Vec<f32> = raw
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Invariant("fixture embedding is not finite".into()));
        }
        embeddings.push(row);
    }
    if c.pos != bytes.len() {
        return Err(Error::Invariant(format!(
            "{} trailing bytes after fixture",
            bytes.len() - c.pos
        )));
    }
    Ok(GoldenFixture {
        header,
        images,
        embeddings,
    })
}

pub fn read_fixture(path: impl AsRef<Path>) -> Result<GoldenFixture> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_fixture(&bytes)
}

pub fn write_fixture(fx: &GoldenFixture, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, encode_fixture(fx)?).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FixtureAgreement {
    pub min_cosine: f64,
    pub max_abs_deviation: f64,
}

pub fn cosine(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum();
    let na: f64 = a.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return if na == nb { 1.0 } else { 0.0 };
    }
    dot / (na * nb)
}

/// Runs each fixture image through the handle (resize to the input size plus pixel
/// normalization, no L2) and compares with the stored reference embeddings.
pub fn check_fixture(handle: &BackboneHandle, fx: &GoldenFixture) -> Result<FixtureAgreement> {
    if fx.header.embedding_dim != handle.embedding_dim {
        return Err(Error::DimensionMismatch {
            what: format!("fixture for {}", fx.header.backbone_id),
            expected: handle.embedding_dim,
            actual: fx.header.embedding_dim,
        });
    }
    let prepared = fx
        .images
        .iter()
        .map(|bytes| {
            let img = imageprep::decode_image(bytes)?;
            let img = imageprep::resize(&img, handle.input_size)?;
            imageprep::normalize_pixels(&img, &handle.normalization)
        })
        .collect::<Result<Vec<ImageTensor>>>()?;
    let got = handle.run(&prepared)?;
    let mut agreement = FixtureAgreement {
        min_cosine: 1.0,
        max_abs_deviation: 0.0,
    };
    for (g, want) in got.iter().zip(&fx.embeddings) {
        agreement.min_cosine = agreement.min_cosine.min(cosine(g, want));
        for (&x, &y) in g.iter().zip(want) {
            agreement.max_abs_deviation = agreement.max_abs_deviation.max((x as f64 - y as f64).abs());
        }
    }
    Ok(agreement)
}
