//! Binary (P5) PGM images, 8-bit and 16-bit.
//!
//! 16-bit samples are written big-endian with maxval 65535, which is what
//! netpbm defines and what external viewers expect. Masks are 8-bit PGMs
//! holding 0 or 255; the reader treats any value >= 128 as set so slightly
//! mangled third-party masks still load.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::image::Image;
use crate::io::FormatError;

/// A decoded PGM: bit depth follows the file's maxval.
#[derive(Debug, Clone, PartialEq)]
pub enum PgmImage {
    U8(Image<u8>),
    U16(Image<u16>),
}

impl PgmImage {
    pub fn width(&self) -> usize {
        match self {
            PgmImage::U8(img) => img.width(),
            PgmImage::U16(img) => img.width(),
        }
    }

    pub fn height(&self) -> usize {
        match self {
            PgmImage::U8(img) => img.height(),
            PgmImage::U16(img) => img.height(),
        }
    }

    /// Widen to 16 bits; 8-bit samples are left in the low byte.
    pub fn into_u16(self) -> Image<u16> {
        match self {
            PgmImage::U8(img) => img.map(u16::from),
            PgmImage::U16(img) => img,
        }
    }
}

pub fn write_pgm_u8(path: &Path, img: &Image<u8>) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n255\n", img.width(), img.height());
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(img.as_slice()))
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn write_pgm_u16(path: &Path, img: &Image<u16>) -> Result<(), FormatError> {
    let file = fs::File::create(path).map_err(|e| FormatError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = format!("P5\n{} {}\n65535\n", img.width(), img.height());
    let mut payload = Vec::with_capacity(img.len() * 2);
    for &v in img.as_slice() {
        payload.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(header.as_bytes())
        .and_then(|_| w.write_all(&payload))
        .and_then(|_| w.flush())
        .map_err(|e| FormatError::io(path, e))
}

pub fn write_mask(path: &Path, mask: &Image<bool>) -> Result<(), FormatError> {
    write_pgm_u8(path, &mask.map(|b| if b { 255u8 } else { 0 }))
}

pub fn read_mask(path: &Path) -> Result<Image<bool>, FormatError> {
    match read_pgm(path)? {
        PgmImage::U8(img) => Ok(img.map(|v| v >= 128)),
        PgmImage::U16(img) => Ok(img.map(|v| v >= 32768)),
    }
}

pub fn read_pgm(path: &Path) -> Result<PgmImage, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let bad = |detail: &str| FormatError::Pgm { path: path.to_path_buf(), detail: detail.into() };

    let mut pos = 0usize;
    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    pos += 2;

    // Header tokens may be separated by whitespace and '#' comment lines.
    let mut next_token = |bytes: &[u8]| -> Option<(usize, usize)> {
        let mut i = pos;
        loop {
            while i < bytes.len() && bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'#' {
                while i < bytes.len() && bytes[i] != b'\n' {
                    i += 1;
                }
                continue;
            }
            break;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        (i > start).then(|| {
            pos = i;
            (start, i)
        })
    };

    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        let (start, end) = next_token(&bytes).ok_or_else(|| bad("truncated header"))?;
        let text = std::str::from_utf8(&bytes[start..end]).map_err(|_| bad("non-ASCII header"))?;
        *field = text.parse().map_err(|_| bad("non-numeric header field"))?;
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero dimension"));
    }

    // Exactly one whitespace byte separates the header from the raster.
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(bad("missing raster separator"));
    }
    pos += 1;
    let raster = &bytes[pos..];

    match maxval {
        1..=255 => {
            if raster.len() != width * height {
                return Err(bad("raster size does not match header"));
            }
            let img = Image::from_vec(width, height, raster.to_vec()).unwrap();
            Ok(PgmImage::U8(img))
        }
        256..=65535 => {
            if raster.len() != width * height * 2 {
                return Err(bad("raster size does not match header"));
            }
            let data = raster
                .chunks_exact(2)
                .map(|c| u16::from_be_bytes([c[0], c[1]]))
                .collect();
            let img = Image::from_vec(width, height, data).unwrap();
            Ok(PgmImage::U16(img))
        }
        _ => Err(bad("maxval out of range")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Leak the handle so the file survives the test body.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn u8_round_trip() {
        let img = Image::from_fn(7, 5, |x, y| (x * 11 + y * 3) as u8);
        let path = tmp("a.pgm");
        write_pgm_u8(&path, &img).unwrap();
        match read_pgm(&path).unwrap() {
            PgmImage::U8(back) => assert_eq!(back, img),
            PgmImage::U16(_) => panic!("expected 8-bit"),
        }
    }

    #[test]
    fn u16_round_trip_and_big_endian_payload() {
        let img = Image::from_fn(3, 2, |x, y| (x as u16) * 256 + (y as u16) * 7 + 1);
        let path = tmp("b.pgm");
        write_pgm_u16(&path, &img).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        // Header "P5\n3 2\n65535\n" is 13 bytes; first sample is 0x0001.
        assert_eq!(&bytes[13..15], &[0x00, 0x01]);
        match read_pgm(&path).unwrap() {
            PgmImage::U16(back) => assert_eq!(back, img),
            PgmImage::U8(_) => panic!("expected 16-bit"),
        }
    }

    #[test]
    fn mask_round_trip() {
        let mask = Image::from_fn(9, 4, |x, y| (x + y) % 3 == 0);
        let path = tmp("m.pgm");
        write_mask(&path, &mask).unwrap();
        assert_eq!(read_mask(&path).unwrap(), mask);
    }

    #[test]
    fn reader_accepts_comment_lines() {
        let path = tmp("c.pgm");
        std::fs::write(&path, b"P5\n# a comment\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        match read_pgm(&path).unwrap() {
            PgmImage::U8(img) => assert_eq!(img.as_slice(), &[1, 2, 3, 4]),
            _ => panic!(),
        }
    }

    #[test]
    fn reader_rejects_truncated_raster() {
        let path = tmp("t.pgm");
        std::fs::write(&path, b"P5\n2 2\n255\n\x01\x02\x03").unwrap();
        assert!(matches!(read_pgm(&path), Err(FormatError::Pgm { .. })));
    }
}
