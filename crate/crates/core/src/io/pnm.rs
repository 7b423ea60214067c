//! Binary PNM image I/O: P5 (grayscale) and P6 (color) with maxval up to
//! 65535. Color converts to grayscale with the 0.299/0.587/0.114 luma
//! weights; intensities scale to `[0, 1]`. Two-byte samples follow the PNM
//! convention (most significant byte first).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{Grid, Image2D};

struct Tokenizer {
    bytes: Vec<u8>,
    pos: usize,
}

impl Tokenizer {
    fn skip_whitespace_and_comments(&mut self) {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                return;
            }
        }
    }

    fn token(&mut self) -> Result<(u64, String)> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::format(start as u64, "unexpected end of header"));
        }
        Ok((
            start as u64,
            String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned(),
        ))
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let (off, tok) = self.token()?;
        tok.parse::<usize>()
            .map_err(|_| Error::format(off, format!("{what} is not a number: {tok:?}")))
    }
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image2D> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut t = Tokenizer { bytes, pos: 0 };
    let (off, magic) = t.token()?;
    let channels = match magic.as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        _ => {
            return Err(Error::format(
                off,
                format!("unsupported PNM magic {magic:?} (want P5 or P6)"),
            ))
        }
    };
    let width = t.number("width")?;
    let height = t.number("height")?;
    let maxval = t.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::format(0, format!("empty image {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format(
            0,
            format!("maxval {maxval} out of range (1..=65535)"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    if t.pos >= t.bytes.len() || !t.bytes[t.pos].is_ascii_whitespace() {
        return Err(Error::format(
            t.pos as u64,
            "missing whitespace before raster",
        ));
    }
    t.pos += 1;
    let bytes_per_sample = if maxval > 255 { 2 } else { 1 };
    let expected = width * height * channels * bytes_per_sample;
    let raster = &t.bytes[t.pos..];
    if raster.len() < expected {
        return Err(Error::format(
            t.pos as u64,
            format!("raster is {} bytes, expected {expected}", raster.len()),
        ));
    }
    let sample = |i: usize| -> f64 {
        if bytes_per_sample == 1 {
            raster[i] as f64
        } else {
            u16::from_be_bytes([raster[2 * i], raster[2 * i + 1]]) as f64
        }
    };
    let scale = 1.0 / maxval as f64;
    let mut img = Grid::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            let base = (y * width + x) * channels;
            let v = if channels == 1 {
                sample(base)
            } else {
                0.299 * sample(base) + 0.587 * sample(base + 1) + 0.114 * sample(base + 2)
            };
            img.set(x, y, v * scale);
        }
    }
    Ok(img)
}

/// Write a grayscale image as binary P5 with maxval 255. Values are clamped
/// to `[0, 1]` and rounded.
pub fn write_image(path: impl AsRef<Path>, img: &Image2D) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "P5\n{} {}\n255\n", img.width(), img.height())?;
    let mut row = Vec::with_capacity(img.width());
    for y in 0..img.height() {
        row.clear();
        for x in 0..img.width() {
            row.push((img.at(x, y).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
        w.write_all(&row)?;
    }
    w.flush()?;
    Ok(())
}
