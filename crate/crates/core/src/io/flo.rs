//! Middlebury-style `.flo` flow files: the 4-byte tag "PIEH" (the
//! little-endian float 202021.25), little-endian i32 width and height, then
//! row-major interleaved `(u1, u2)` little-endian f32 pairs.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};

const MAGIC: [u8; 4] = *b"PIEH";

/// Flow values at or above this magnitude mark pixels with unknown ground
/// truth.
pub const UNKNOWN_THRESHOLD: f64 = 1e9;

pub fn write_flo(path: impl AsRef<Path>, flow: &FlowField) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&MAGIC)?;
    w.write_all(&(flow.width() as i32).to_le_bytes())?;
    w.write_all(&(flow.height() as i32).to_le_bytes())?;
    for y in 0..flow.height() {
        for x in 0..flow.width() {
            w.write_all(&(flow.u1.at(x, y) as f32).to_le_bytes())?;
            w.write_all(&(flow.u2.at(x, y) as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_flo(path: impl AsRef<Path>) -> Result<FlowField> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut header = [0u8; 12];
    r.read_exact(&mut header).map_err(|_| {
        Error::format(0, "file shorter than the 12-byte header".to_string())
    })?;
    if header[0..4] != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:02x?}, expected \"PIEH\"", &header[0..4]),
        ));
    }
    let width = i32::from_le_bytes(header[4..8].try_into().unwrap());
    let height = i32::from_le_bytes(header[8..12].try_into().unwrap());
    if width <= 0 || height <= 0 {
        return Err(Error::format(
            4,
            format!("non-positive dimensions {width}x{height}"),
        ));
    }
    let (width, height) = (width as usize, height as usize);
    let expected = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::format(4, format!("dimension overflow {width}x{height}")))?;
    let mut payload = Vec::new();
    r.read_to_end(&mut payload)?;
    if payload.len() != expected {
        return Err(Error::format(
            12,
            format!(
                "payload is {} bytes, expected {expected} for {width}x{height}",
                payload.len()
            ),
        ));
    }
    let mut u1 = Grid::zeros(height, width);
    let mut u2 = Grid::zeros(height, width);
    for y in 0..height {
        for x in 0..width {
            let off = (y * width + x) * 8;
            let a = f32::from_le_bytes(payload[off..off + 4].try_into().unwrap());
            let b = f32::from_le_bytes(payload[off + 4..off + 8].try_into().unwrap());
            u1.set(x, y, a as f64);
            u2.set(x, y, b as f64);
        }
    }
    Ok(FlowField { u1, u2 })
}

/// Validity mask for a ground-truth flow: 1.0 where both components are
/// known, 0.0 where either carries an unknown-flow sentinel.
pub fn unknown_mask(flow: &FlowField) -> Grid {
    Grid::from_fn(flow.height(), flow.width(), |x, y| {
        let known = flow.u1.at(x, y).abs() <= UNKNOWN_THRESHOLD
            && flow.u2.at(x, y).abs() <= UNKNOWN_THRESHOLD
            && flow.u1.at(x, y).is_finite()
            && flow.u2.at(x, y).is_finite();
        if known {
            1.0
        } else {
            0.0
        }
    })
}
