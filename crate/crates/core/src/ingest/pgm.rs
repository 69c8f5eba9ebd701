//! Binary PGM (P5) reading and writing, plus grayscale image loading.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

use crate::types::{Grid, Heatmap, InvariantError};

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("ASCII PGM (P2) is not supported; use binary P5")]
    Ascii,
    #[error("not a binary PGM file")]
    NotPgm,
    #[error("corrupt PGM header: {0}")]
    Header(String),
    #[error("PGM body holds {actual} bytes, header promises {expected}")]
    Truncated { expected: usize, actual: usize },
    #[error("unsupported image: {0}")]
    Image(String),
    #[error(transparent)]
    Invariant(#[from] InvariantError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Raw samples of a P5 file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    /// Samples divided by `maxval`.
    pub fn to_unit_grid(&self) -> Result<Grid, InvariantError> {
        let m = f64::from(self.maxval);
        Grid::new(
            self.width,
            self.height,
            self.samples.iter().map(|&s| f64::from(s) / m).collect(),
        )
    }
}

fn header_token(bytes: &[u8], pos: &mut usize) -> Result<usize, PgmError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(PgmError::Header("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(u8::is_ascii_digit) {
        *pos += 1;
    }
    let tok = std::str::from_utf8(&bytes[start..*pos]).expect("ascii digits");
    tok.parse()
        .map_err(|_| PgmError::Header(format!("expected a number at byte {start}")))
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pgm, PgmError> {
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") => return Err(PgmError::Ascii),
        _ => return Err(PgmError::NotPgm),
    }
    let mut pos = 2;
    let width = header_token(bytes, &mut pos)?;
    let height = header_token(bytes, &mut pos)?;
    let maxval = header_token(bytes, &mut pos)?;
    if width == 0 || height == 0 {
        return Err(PgmError::Header(format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(PgmError::Header(format!("maxval {maxval} outside 1..=65535")));
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(PgmError::Header("missing whitespace after maxval".into()));
    }
    pos += 1;
    let wide = maxval > 255;
    let n = width
        .checked_mul(height)
        .ok_or_else(|| PgmError::Header("dimensions overflow".into()))?;
    let expected = if wide { n * 2 } else { n };
    let body = &bytes[pos..];
    if body.len() < expected {
        return Err(PgmError::Truncated {
            expected,
            actual: body.len(),
        });
    }
    let samples: Vec<u16> = if wide {
        body[..expected]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        body[..expected].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(&s) = samples.iter().find(|&&s| usize::from(s) > maxval) {
        return Err(PgmError::Header(format!("sample {s} exceeds maxval {maxval}")));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode_pgm(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval > 255 {
        for s in &pgm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    }
    out
}

/// Heatmap values scaled by the file's maximum sample value.
pub fn read_heatmap(path: impl AsRef<Path>) -> Result<Heatmap, PgmError> {
    let pgm = parse_pgm(&fs::read(path)?)?;
    Ok(Heatmap::from_grid(pgm.to_unit_grid()?)?)
}

/// Quantizes `values` in `[0, 1]` to `maxval` levels, rounding half up.
pub fn quantize_unit(values: &[f64], width: usize, height: usize, maxval: u16) -> Pgm {
    let m = f64::from(maxval);
    Pgm {
        width,
        height,
        maxval,
        samples: values
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * m + 0.5).floor() as u16)
            .collect(),
    }
}

pub fn write_heatmap(path: impl AsRef<Path>, heatmap: &Heatmap, maxval: u16) -> Result<(), PgmError> {
    let pgm = quantize_unit(heatmap.values(), heatmap.width(), heatmap.height(), maxval);
    fs::write(path, encode_pgm(&pgm))?;
    Ok(())
}

/// Writes an image whose values are on the 0..=255 scale as 8-bit PGM.
pub fn write_gray8(path: impl AsRef<Path>, image: &Grid) -> Result<(), PgmError> {
    let pgm = Pgm {
        width: image.width(),
        height: image.height(),
        maxval: 255,
        samples: image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 255.0) + 0.5).floor() as u16)
            .collect(),
    };
    fs::write(path, encode_pgm(&pgm))?;
    Ok(())
}

/// Loads a PGM or PNG as a grayscale grid on the 0..=255 scale. Colour PNGs
/// are converted by luminance.
pub fn load_gray(path: impl AsRef<Path>) -> Result<Grid, PgmError> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    if bytes.starts_with(b"P") {
        let pgm = parse_pgm(&bytes)?;
        let scale = 255.0 / f64::from(pgm.maxval);
        return Ok(Grid::new(
            pgm.width,
            pgm.height,
            pgm.samples.iter().map(|&s| f64::from(s) * scale).collect(),
        )?);
    }
    let img = image::load_from_memory_with_format(&bytes, image::ImageFormat::Png)
        .map_err(|e| PgmError::Image(format!("{}: {e}", path.display())))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Grid::new(
        w as usize,
        h as usize,
        img.into_raw().into_iter().map(f64::from).collect(),
    )?)
}
