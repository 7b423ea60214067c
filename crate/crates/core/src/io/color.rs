//! Flow visualization with the standard color wheel: hue from the flow
//! direction, saturation from the normalized magnitude, zero flow white.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::Result;
use crate::grid::FlowField;

/// Interleaved 8-bit RGB image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorImage {
    pub height: usize,
    pub width: usize,
    pub rgb: Vec<u8>,
}

impl ColorImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let off = (y * self.width + x) * 3;
        [self.rgb[off], self.rgb[off + 1], self.rgb[off + 2]]
    }

    /// Write as binary P6 with maxval 255.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.rgb)?;
        w.flush()?;
        Ok(())
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [u8; 3] {
    // h in [0, 1), s and v in [0, 1].
    let h6 = (h * 6.0).rem_euclid(6.0);
    let i = h6.floor() as usize % 6;
    let f = h6 - h6.floor();
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    let (r, g, b) = match i {
        0 => (v, t, p),
        1 => (q, v, p),
        2 => (p, v, t),
        3 => (p, q, v),
        4 => (t, p, v),
        _ => (v, p, q),
    };
    [
        (r.clamp(0.0, 1.0) * 255.0).round() as u8,
        (g.clamp(0.0, 1.0) * 255.0).round() as u8,
        (b.clamp(0.0, 1.0) * 255.0).round() as u8,
    ]
}

/// Render a flow field: hue = `atan2(u2, u1)`, saturation = magnitude
/// normalized by `max_magnitude` (99th percentile when absent), value 1.
pub fn flow_to_color(flow: &FlowField, max_magnitude: Option<f64>) -> ColorImage {
    let (h, w) = (flow.height(), flow.width());
    let mags: Vec<f64> = (0..h * w)
        .map(|i| (flow.u1.data()[i].powi(2) + flow.u2.data()[i].powi(2)).sqrt())
        .collect();
    let max_mag = match max_magnitude {
        Some(m) if m > 0.0 => m,
        _ => {
            let mut sorted = mags.clone();
            sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let idx = ((sorted.len() as f64 * 0.99).ceil() as usize).saturating_sub(1);
            let p99 = sorted[idx];
            if p99 > 0.0 {
                p99
            } else {
                1.0
            }
        }
    };
    let mut rgb = Vec::with_capacity(h * w * 3);
    for (i, mag) in mags.iter().enumerate() {
        let angle = flow.u2.data()[i].atan2(flow.u1.data()[i]);
        let hue = (angle / std::f64::consts::TAU).rem_euclid(1.0);
        let sat = (mag / max_mag).clamp(0.0, 1.0);
        rgb.extend_from_slice(&hsv_to_rgb(hue, sat, 1.0));
    }
    ColorImage {
        height: h,
        width: w,
        rgb,
    }
}
