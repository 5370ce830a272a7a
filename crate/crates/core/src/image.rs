//! 8-bit grayscale rasters and binary PGM (P5) I/O.

use std::path::Path;

use crate::error::{Error, ParseError, Result};

/// Upper bound on the pixel count accepted from a PGM header.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_raw(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::LengthMismatch(data.len(), width * height));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.data
    }

    /// Pixel at column `x`, row `y` (row 0 at the top).
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Intensities scaled to `[0, 1]`.
    pub fn to_unit(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32 / 255.0).collect()
    }

    /// 90-degree counter-clockwise rotation.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        Self::from_fn(h, w, |x, y| self.get(w - 1 - y, x))
    }

    /// Shift content by whole pixels, filling uncovered pixels with `fill`.
    pub fn translate(&self, dx: isize, dy: isize, fill: u8) -> Self {
        Self::from_fn(self.width, self.height, |x, y| {
            let sx = x as isize - dx;
            let sy = y as isize - dy;
            if sx >= 0 && sy >= 0 && (sx as usize) < self.width && (sy as usize) < self.height {
                self.get(sx as usize, sy as usize)
            } else {
                fill
            }
        })
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    /// Parse a binary PGM with maxval 255; comments are allowed in the header.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self, ParseError> {
        const FMT: &str = "pgm";
        let err = |m: &str| ParseError::new(FMT, 1, m);
        let mut pos = 0usize;
        let mut fields: Vec<&[u8]> = Vec::with_capacity(4);
        while fields.len() < 4 {
            // skip whitespace and comments
            loop {
                match bytes.get(pos) {
                    Some(b) if b.is_ascii_whitespace() => pos += 1,
                    Some(b'#') => {
                        while let Some(&b) = bytes.get(pos) {
                            pos += 1;
                            if b == b'\n' {
                                break;
                            }
                        }
                    }
                    _ => break,
                }
            }
            let start = pos;
            while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
                pos += 1;
            }
            if start == pos {
                return Err(err("truncated header"));
            }
            fields.push(&bytes[start..pos]);
        }
        if fields[0] != b"P5" {
            return Err(err("not a binary PGM (P5)"));
        }
        let num = |f: &[u8]| -> Result<usize, ParseError> {
            std::str::from_utf8(f)
                .ok()
                .filter(|s| s.bytes().all(|b| b.is_ascii_digit()))
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| err("bad header number"))
        };
        let (width, height, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        if maxval != 255 {
            return Err(err("only maxval 255 is supported"));
        }
        if width == 0 || height == 0 || width.saturating_mul(height) > MAX_PIXELS {
            return Err(err("unsupported image size"));
        }
        // exactly one whitespace byte separates the header from the raster
        if !bytes.get(pos).is_some_and(|b| b.is_ascii_whitespace()) {
            return Err(err("missing raster separator"));
        }
        pos += 1;
        let raster = &bytes[pos..];
        if raster.len() != width * height {
            return Err(err("raster length does not match header"));
        }
        Ok(Self {
            width,
            height,
            data: raster.to_vec(),
        })
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(Self::from_pgm(&bytes)?)
    }
}
