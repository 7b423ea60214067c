//! Image pyramid resampling: area-average decimation for images and
//! bilinear upsampling for flow fields, with exact linear transposes so the
//! unrolled graph can push gradients through the coarse-to-fine chain.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid};

/// Per-axis sampling taps: `taps[out_index] = [(in_index, weight), ...]`.
type AxisTaps = Vec<Vec<(usize, f64)>>;

/// A separable linear resampling (x pass, then y pass).
#[derive(Debug, Clone)]
pub struct ResamplePlan {
    x: AxisTaps,
    y: AxisTaps,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
}

fn area_axis(in_len: usize, out_len: usize) -> AxisTaps {
    let scale = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let start = o as f64 * scale;
            let end = (o as f64 + 1.0) * scale;
            let mut taps = Vec::new();
            let first = start.floor() as usize;
            let last = end.ceil() as usize;
            let mut total = 0.0;
            for m in first..last.min(in_len) {
                let overlap = end.min(m as f64 + 1.0) - start.max(m as f64);
                if overlap > 0.0 {
                    taps.push((m, overlap));
                    total += overlap;
                }
            }
            for t in &mut taps {
                t.1 /= total;
            }
            taps
        })
        .collect()
}

fn bilinear_axis(in_len: usize, out_len: usize) -> AxisTaps {
    let ratio = in_len as f64 / out_len as f64;
    (0..out_len)
        .map(|o| {
            let src = (o as f64 + 0.5) * ratio - 0.5;
            let i0 = src.floor();
            let f = src - i0;
            let c0 = (i0 as isize).clamp(0, in_len as isize - 1) as usize;
            let c1 = (i0 as isize + 1).clamp(0, in_len as isize - 1) as usize;
            if c0 == c1 {
                vec![(c0, 1.0)]
            } else {
                vec![(c0, 1.0 - f), (c1, f)]
            }
        })
        .collect()
}

impl ResamplePlan {
    /// Area-average decimation: each output pixel averages the input area it
    /// covers, with fractional edge weights. Preserves constants exactly.
    pub fn area(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            x: area_axis(in_w, out_w),
            y: area_axis(in_h, out_h),
            in_h,
            in_w,
            out_h,
            out_w,
        }
    }

    /// Bilinear interpolation with border replication.
    pub fn bilinear(in_h: usize, in_w: usize, out_h: usize, out_w: usize) -> Self {
        Self {
            x: bilinear_axis(in_w, out_w),
            y: bilinear_axis(in_h, out_h),
            in_h,
            in_w,
            out_h,
            out_w,
        }
    }

    pub fn apply(&self, g: &Grid) -> Grid {
        debug_assert_eq!((g.height(), g.width()), (self.in_h, self.in_w));
        let mut tmp = Grid::zeros(self.in_h, self.out_w);
        for y in 0..self.in_h {
            for (ox, taps) in self.x.iter().enumerate() {
                let mut acc = 0.0;
                for &(ix, wgt) in taps {
                    acc += wgt * g.at(ix, y);
                }
                tmp.set(ox, y, acc);
            }
        }
        let mut out = Grid::zeros(self.out_h, self.out_w);
        for (oy, taps) in self.y.iter().enumerate() {
            for x in 0..self.out_w {
                let mut acc = 0.0;
                for &(iy, wgt) in taps {
                    acc += wgt * tmp.at(x, iy);
                }
                out.set(x, oy, acc);
            }
        }
        out
    }

    /// Exact adjoint of [`apply`](ResamplePlan::apply).
    pub fn transpose(&self, upstream: &Grid) -> Grid {
        debug_assert_eq!((upstream.height(), upstream.width()), (self.out_h, self.out_w));
        let mut tmp = Grid::zeros(self.in_h, self.out_w);
        for (oy, taps) in self.y.iter().enumerate() {
            for x in 0..self.out_w {
                let u = upstream.at(x, oy);
                for &(iy, wgt) in taps {
                    tmp.add_at(x, iy, wgt * u);
                }
            }
        }
        let mut out = Grid::zeros(self.in_h, self.in_w);
        for y in 0..self.in_h {
            for (ox, taps) in self.x.iter().enumerate() {
                let u = tmp.at(ox, y);
                for &(ix, wgt) in taps {
                    out.add_at(ix, y, wgt * u);
                }
            }
        }
        out
    }
}

/// Dimensions of every pyramid level, finest first. Each decimated level
/// must keep both axes at least 2 pixels wide.
pub fn pyramid_dims(
    height: usize,
    width: usize,
    scale_factor: f64,
    n_scales: usize,
) -> Result<Vec<(usize, usize)>> {
    let mut dims = vec![(height, width)];
    let (mut h, mut w) = (height, width);
    for level in 1..n_scales {
        h = (h as f64 * scale_factor).round() as usize;
        w = (w as f64 * scale_factor).round() as usize;
        if h < 2 || w < 2 {
            return Err(Error::ImageTooSmall(format!(
                "{height}x{width} cannot support {n_scales} scales at factor \
                 {scale_factor} (level {level} would be {h}x{w})"
            )));
        }
        dims.push((h, w));
    }
    Ok(dims)
}

/// Build an image pyramid by successive area-average decimation.
/// `dims` comes from [`pyramid_dims`]; index 0 (finest) is the input itself.
pub fn build_pyramid(img: &Grid, dims: &[(usize, usize)]) -> Vec<Grid> {
    let mut levels = Vec::with_capacity(dims.len());
    levels.push(img.clone());
    for lv in 1..dims.len() {
        let (ph, pw) = dims[lv - 1];
        let (h, w) = dims[lv];
        let plan = ResamplePlan::area(ph, pw, h, w);
        let next = plan.apply(&levels[lv - 1]);
        levels.push(next);
    }
    levels
}

/// Upsample a coarse flow to finer dimensions, multiplying displacement
/// values by `1 / scale_factor` so they stay in finer-level pixel units.
pub fn upsample_flow(
    flow: &FlowField,
    out_h: usize,
    out_w: usize,
    scale_factor: f64,
) -> FlowField {
    let plan = ResamplePlan::bilinear(flow.height(), flow.width(), out_h, out_w);
    let gain = 1.0 / scale_factor;
    FlowField {
        u1: plan.apply(&flow.u1).map(|v| v * gain),
        u2: plan.apply(&flow.u2).map(|v| v * gain),
    }
}

/// Adjoint of [`upsample_flow`].
pub fn upsample_flow_transpose(
    d_fine: &FlowField,
    in_h: usize,
    in_w: usize,
    scale_factor: f64,
) -> FlowField {
    let plan = ResamplePlan::bilinear(in_h, in_w, d_fine.height(), d_fine.width());
    let gain = 1.0 / scale_factor;
    FlowField {
        u1: plan.transpose(&d_fine.u1).map(|v| v * gain),
        u2: plan.transpose(&d_fine.u2).map(|v| v * gain),
    }
}
