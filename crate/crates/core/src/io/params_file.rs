//! Versioned binary parameter files: an 8-byte tag, little-endian u32
//! version, then length-prefixed little-endian f64 arrays in a fixed order
//! (u0 mode and data first, then the kernels in declaration order).

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, Kernel1D, Orientation};
use crate::params::{KernelSet, TrainableParams, U0Init};

const TAG: [u8; 8] = *b"TVL1PRMS";
const VERSION: u32 = 1;

fn write_array(w: &mut impl Write, values: &[f64]) -> Result<()> {
    w.write_all(&(values.len() as u64).to_le_bytes())?;
    for v in values {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

pub fn write_params(path: impl AsRef<Path>, params: &TrainableParams) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&TAG)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let (mode, constant, dims, f1, f2): (f64, [f64; 2], [f64; 2], &[f64], &[f64]) =
        match &params.u0 {
            U0Init::Zero => (0.0, [0.0; 2], [0.0; 2], &[], &[]),
            U0Init::Constant(c) => (1.0, *c, [0.0; 2], &[], &[]),
            U0Init::Field(f) => (
                2.0,
                [0.0; 2],
                [f.height() as f64, f.width() as f64],
                f.u1.data(),
                f.u2.data(),
            ),
        };
    write_array(&mut w, &[mode])?;
    write_array(&mut w, &constant)?;
    write_array(&mut w, &dims)?;
    write_array(&mut w, f1)?;
    write_array(&mut w, f2)?;
    for k in [
        &params.kernels.img_x,
        &params.kernels.img_y,
        &params.kernels.flow_x,
        &params.kernels.flow_y,
        &params.kernels.div_x,
        &params.kernels.div_y,
    ] {
        write_array(&mut w, k.taps())?;
    }
    w.flush()?;
    Ok(())
}

struct Reader {
    bytes: Vec<u8>,
    pos: usize,
}

impl Reader {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::format(
                self.pos as u64,
                format!(
                    "truncated while reading {what}: need {n} bytes, {} remain",
                    self.bytes.len() - self.pos
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn array(&mut self, what: &str) -> Result<Vec<f64>> {
        let off = self.pos as u64;
        let len = u64::from_le_bytes(self.take(8, what)?.try_into().unwrap());
        let len = usize::try_from(len)
            .ok()
            .filter(|&l| l.checked_mul(8).is_some() && l * 8 <= self.bytes.len())
            .ok_or_else(|| Error::format(off, format!("{what} length {len} overflows file")))?;
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            out.push(f64::from_le_bytes(self.take(8, what)?.try_into().unwrap()));
        }
        Ok(out)
    }
}

fn kernel_from(taps: Vec<f64>, orientation: Orientation, off: u64, what: &str) -> Result<Kernel1D> {
    Kernel1D::new(taps, orientation)
        .map_err(|e| Error::format(off, format!("{what}: {e}")))
}

pub fn read_params(path: impl AsRef<Path>) -> Result<TrainableParams> {
    let mut bytes = Vec::new();
    File::open(path.as_ref())?.read_to_end(&mut bytes)?;
    let mut r = Reader { bytes, pos: 0 };
    let tag = r.take(8, "tag")?;
    if tag != TAG {
        return Err(Error::format(0, format!("bad tag {tag:02x?}")));
    }
    let version = u32::from_le_bytes(r.take(4, "version")?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::format(
            8,
            format!("unsupported version {version}, expected {VERSION}"),
        ));
    }
    let mode_off = r.pos as u64;
    let mode = r.array("u0 mode")?;
    if mode.len() != 1 {
        return Err(Error::format(mode_off, "u0 mode array must have length 1"));
    }
    let constant = r.array("u0 constant")?;
    if constant.len() != 2 {
        return Err(Error::format(mode_off, "u0 constant array must have length 2"));
    }
    let dims_off = r.pos as u64;
    let dims = r.array("u0 field dims")?;
    if dims.len() != 2 {
        return Err(Error::format(dims_off, "u0 dims array must have length 2"));
    }
    let f1 = r.array("u0 field u1")?;
    let f2 = r.array("u0 field u2")?;
    let u0 = match mode[0] as i64 {
        0 => U0Init::Zero,
        1 => U0Init::Constant([constant[0], constant[1]]),
        2 => {
            let (h, w) = (dims[0] as usize, dims[1] as usize);
            if f1.len() != h * w || f2.len() != h * w {
                return Err(Error::format(
                    dims_off,
                    format!(
                        "u0 field arrays ({}, {}) do not match dims {h}x{w}",
                        f1.len(),
                        f2.len()
                    ),
                ));
            }
            U0Init::Field(FlowField {
                u1: Grid::from_vec(h, w, f1)?,
                u2: Grid::from_vec(h, w, f2)?,
            })
        }
        m => {
            return Err(Error::format(mode_off, format!("unknown u0 mode code {m}")));
        }
    };
    let mut taps = Vec::with_capacity(6);
    for name in ["img_x", "img_y", "flow_x", "flow_y", "div_x", "div_y"] {
        let off = r.pos as u64;
        taps.push((off, name, r.array(name)?));
    }
    if r.pos != r.bytes.len() {
        return Err(Error::format(
            r.pos as u64,
            format!("{} trailing bytes", r.bytes.len() - r.pos),
        ));
    }
    let mut it = taps.into_iter();
    let mut next = |ori: Orientation| -> Result<Kernel1D> {
        let (off, name, t) = it.next().unwrap();
        kernel_from(t, ori, off, name)
    };
    let kernels = KernelSet {
        img_x: next(Orientation::Horizontal)?,
        img_y: next(Orientation::Vertical)?,
        flow_x: next(Orientation::Horizontal)?,
        flow_y: next(Orientation::Vertical)?,
        div_x: next(Orientation::Horizontal)?,
        div_y: next(Orientation::Vertical)?,
    };
    Ok(TrainableParams { u0, kernels })
}
