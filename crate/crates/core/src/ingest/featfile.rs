//! HGIF binary feature files.
//!
//! Little-endian layout:
//!
//! | field            | type  |
//! |------------------|-------|
//! | magic `HGIF`     | 4 B   |
//! | version (1)      | u32   |
//! | family (0 geo, 1 sal) | u8 |
//! | frame id         | u64   |
//! | keypoint count   | u32   |
//! | descriptor length| u32   |
//! | element type (0 f32, 1 u8) | u8 |
//!
//! followed by `count` `(x: f32, y: f32)` pairs and `count * length`
//! descriptor elements in row-major order.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::types::{
    Descriptors, Family, FrameFeatures, GeomDescriptor, InvariantError, Keypoint, SalDescriptor,
    SAL_DESCRIPTOR_LEN,
};

pub const MAGIC: &[u8; 4] = b"HGIF";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 8 + 4 + 4 + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum ElementType {
    F32 = 0,
    U8 = 1,
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::F32 => 4,
            ElementType::U8 => 1,
        }
    }
}

#[derive(Debug, Error)]
pub enum FeatureFileError {
    #[error("bad magic {0:?}, expected \"HGIF\"")]
    BadMagic([u8; 4]),
    #[error("unsupported HGIF version {0}")]
    UnsupportedVersion(u32),
    #[error("header is {0} bytes, need {HEADER_LEN}")]
    TruncatedHeader(usize),
    #[error("unknown family code {0}")]
    BadFamily(u8),
    #[error("unknown element type {0}")]
    BadElementType(u8),
    #[error("{family} features cannot use element type {elem} with length {len}")]
    Layout { family: Family, elem: u8, len: u32 },
    #[error("body is {actual} bytes, header implies {expected}")]
    Size { expected: u64, actual: u64 },
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Parsed header fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Header {
    pub family: Family,
    pub frame_id: u64,
    pub count: u32,
    pub desc_len: u32,
    pub elem: ElementType,
}

impl Header {
    pub fn body_len(&self) -> u64 {
        u64::from(self.count) * (8 + u64::from(self.desc_len) * self.elem.size() as u64)
    }
}

fn le_u32(b: &[u8]) -> u32 {
    u32::from_le_bytes(b.try_into().expect("4 bytes"))
}

pub fn parse_header(bytes: &[u8]) -> Result<Header, FeatureFileError> {
    if bytes.len() >= 4 && &bytes[..4] != MAGIC {
        return Err(FeatureFileError::BadMagic(bytes[..4].try_into().expect("4 bytes")));
    }
    if bytes.len() < HEADER_LEN {
        return Err(FeatureFileError::TruncatedHeader(bytes.len()));
    }
    let version = le_u32(&bytes[4..8]);
    if version != VERSION {
        return Err(FeatureFileError::UnsupportedVersion(version));
    }
    let family = Family::from_code(bytes[8]).ok_or(FeatureFileError::BadFamily(bytes[8]))?;
    let frame_id = u64::from_le_bytes(bytes[9..17].try_into().expect("8 bytes"));
    let count = le_u32(&bytes[17..21]);
    let desc_len = le_u32(&bytes[21..25]);
    let elem = match bytes[25] {
        0 => ElementType::F32,
        1 => ElementType::U8,
        e => return Err(FeatureFileError::BadElementType(e)),
    };
    let ok = match family {
        Family::Geometric => elem == ElementType::F32 && desc_len > 0,
        Family::Salient => elem == ElementType::U8 && desc_len as usize == SAL_DESCRIPTOR_LEN,
    };
    if !ok {
        return Err(FeatureFileError::Layout {
            family,
            elem: bytes[25],
            len: desc_len,
        });
    }
    Ok(Header {
        family,
        frame_id,
        count,
        desc_len,
        elem,
    })
}

pub fn decode_features(bytes: &[u8]) -> Result<FrameFeatures, FeatureFileError> {
    let h = parse_header(bytes)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() as u64 != h.body_len() {
        return Err(FeatureFileError::Size {
            expected: h.body_len(),
            actual: body.len() as u64,
        });
    }
    let n = h.count as usize;
    let (kp_bytes, desc_bytes) = body.split_at(n * 8);
    let keypoints = kp_bytes
        .chunks_exact(8)
        .map(|c| {
            Keypoint::new(
                f32::from_le_bytes(c[..4].try_into().expect("4 bytes")),
                f32::from_le_bytes(c[4..].try_into().expect("4 bytes")),
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let len = h.desc_len as usize;
    let descriptors = match h.family {
        Family::Geometric => {
            let rows = desc_bytes
                .chunks_exact(len * 4)
                .map(|row| {
                    GeomDescriptor::new(
                        row.chunks_exact(4)
                            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                            .collect(),
                    )
                })
                .collect::<Result<Vec<_>, _>>()?;
            Descriptors::Geometric { dim: len, rows }
        }
        Family::Salient => Descriptors::Salient(
            desc_bytes
                .chunks_exact(len)
                .map(SalDescriptor::from_slice)
                .collect::<Result<Vec<_>, _>>()?,
        ),
    };
    Ok(FrameFeatures::new(h.frame_id, keypoints, descriptors)?)
}

pub fn encode_features(f: &FrameFeatures) -> Vec<u8> {
    let d = f.descriptors();
    let (elem, len) = match d {
        Descriptors::Geometric { dim, .. } => (ElementType::F32, *dim),
        Descriptors::Salient(_) => (ElementType::U8, SAL_DESCRIPTOR_LEN),
    };
    let mut out = Vec::with_capacity(HEADER_LEN + f.len() * (8 + len * elem.size()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(f.family().code());
    out.extend_from_slice(&f.frame_id().to_le_bytes());
    out.extend_from_slice(&(f.len() as u32).to_le_bytes());
    out.extend_from_slice(&(len as u32).to_le_bytes());
    out.push(elem as u8);
    for k in f.keypoints() {
        out.extend_from_slice(&k.x().to_le_bytes());
        out.extend_from_slice(&k.y().to_le_bytes());
    }
    match d {
        Descriptors::Geometric { rows, .. } => {
            for v in rows.iter().flat_map(|r| r.values()) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Descriptors::Salient(rows) => {
            for r in rows {
                out.extend_from_slice(r.bytes());
            }
        }
    }
    out
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FrameFeatures, FeatureFileError> {
    decode_features(&fs::read(path)?)
}

pub fn write_feature_file(path: impl AsRef<Path>, f: &FrameFeatures) -> Result<(), FeatureFileError> {
    fs::write(path, encode_features(f))?;
    Ok(())
}

/// Conventional file name for a frame's features.
pub fn feature_file_name(frame_id: u64, family: Family) -> String {
    format!("{frame_id:06}.{}.hgif", family.tag())
}
