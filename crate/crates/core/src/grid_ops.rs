//! Per-pixel numerical operators shared by the solver and the unrolled graph:
//! finite differences realized as 1-D convolutions, the dual-field
//! divergence, and bilinear warping, together with their exact
//! vector-Jacobian products.
//!
//! All operators are pure functions over immutable inputs and evaluate in a
//! fixed sequential order, so repeated calls are bit-identical.

use crate::error::{Error, Result};
use crate::grid::{DualField, FlowField, Grid, Kernel1D, Orientation};

/// Tap offsets along the sliding axis.
///
/// Length-3 kernels `[a, b, c]` are centered: `out(i) = a*g(i+1) + b*g(i) +
/// c*g(i-1)`. Length-2 kernels `[a, b]` are forward-aligned: `out(i) =
/// a*g(i) + b*g(i+1)`. Outside the grid the signal is zero.
#[inline]
fn tap_offsets(len: usize) -> &'static [isize] {
    match len {
        2 => &[0, 1],
        3 => &[1, 0, -1],
        _ => unreachable!("kernel length enforced at construction"),
    }
}

/// "Same"-size 1-D correlation along the kernel's orientation with zero
/// padding outside the grid.
pub fn convolve_same(grid: &Grid, kernel: &Kernel1D) -> Result<Grid> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("convolve_same: empty grid".into()));
    }
    let (h, w) = (grid.height(), grid.width());
    let taps = kernel.taps();
    let offs = tap_offsets(taps.len());
    let mut out = Grid::zeros(h, w);
    match kernel.orientation() {
        Orientation::Horizontal => {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, &off) in offs.iter().enumerate() {
                        let sx = x as isize + off;
                        if sx >= 0 && (sx as usize) < w {
                            acc += taps[t] * grid.at(sx as usize, y);
                        }
                    }
                    out.set(x, y, acc);
                }
            }
        }
        Orientation::Vertical => {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, &off) in offs.iter().enumerate() {
                        let sy = y as isize + off;
                        if sy >= 0 && (sy as usize) < h {
                            acc += taps[t] * grid.at(x, sy as usize);
                        }
                    }
                    out.set(x, y, acc);
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`convolve_same`] with respect to the grid argument:
/// `d_grid(p) = sum_t tap_t * upstream(p - off_t)`.
pub fn convolve_same_vjp_grid(upstream: &Grid, kernel: &Kernel1D) -> Grid {
    let (h, w) = (upstream.height(), upstream.width());
    let taps = kernel.taps();
    let offs = tap_offsets(taps.len());
    let mut out = Grid::zeros(h, w);
    match kernel.orientation() {
        Orientation::Horizontal => {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, &off) in offs.iter().enumerate() {
                        let sx = x as isize - off;
                        if sx >= 0 && (sx as usize) < w {
                            acc += taps[t] * upstream.at(sx as usize, y);
                        }
                    }
                    out.set(x, y, acc);
                }
            }
        }
        Orientation::Vertical => {
            for y in 0..h {
                for x in 0..w {
                    let mut acc = 0.0;
                    for (t, &off) in offs.iter().enumerate() {
                        let sy = y as isize - off;
                        if sy >= 0 && (sy as usize) < h {
                            acc += taps[t] * upstream.at(x, sy as usize);
                        }
                    }
                    out.set(x, y, acc);
                }
            }
        }
    }
    out
}

/// Gradient of [`convolve_same`] with respect to the kernel taps:
/// `d_tap_t = sum_p upstream(p) * grid(p + off_t)`.
pub fn convolve_same_vjp_taps(grid: &Grid, kernel: &Kernel1D, upstream: &Grid) -> Vec<f64> {
    debug_assert!(grid.same_shape(upstream));
    let (h, w) = (grid.height(), grid.width());
    let offs = tap_offsets(kernel.len());
    let mut d_taps = vec![0.0; kernel.len()];
    match kernel.orientation() {
        Orientation::Horizontal => {
            for y in 0..h {
                for x in 0..w {
                    let u = upstream.at(x, y);
                    for (t, &off) in offs.iter().enumerate() {
                        let sx = x as isize + off;
                        if sx >= 0 && (sx as usize) < w {
                            d_taps[t] += u * grid.at(sx as usize, y);
                        }
                    }
                }
            }
        }
        Orientation::Vertical => {
            for y in 0..h {
                for x in 0..w {
                    let u = upstream.at(x, y);
                    for (t, &off) in offs.iter().enumerate() {
                        let sy = y as isize + off;
                        if sy >= 0 && (sy as usize) < h {
                            d_taps[t] += u * grid.at(x, sy as usize);
                        }
                    }
                }
            }
        }
    }
    d_taps
}

fn zero_boundary_columns(g: &mut Grid) {
    let (h, w) = (g.height(), g.width());
    for y in 0..h {
        g.set(0, y, 0.0);
        g.set(w - 1, y, 0.0);
    }
}

fn zero_boundary_rows(g: &mut Grid) {
    let (h, w) = (g.height(), g.width());
    for x in 0..w {
        g.set(x, 0, 0.0);
        g.set(x, h - 1, 0.0);
    }
}

fn zero_last_column(g: &mut Grid) {
    let (h, w) = (g.height(), g.width());
    for y in 0..h {
        g.set(w - 1, y, 0.0);
    }
}

fn zero_last_row(g: &mut Grid) {
    let (h, w) = (g.height(), g.width());
    for x in 0..w {
        g.set(x, h - 1, 0.0);
    }
}

/// Image gradient: convolution followed by the hard boundary overwrite that
/// zeroes the first and last column of `gx` (first and last row of `gy`).
/// The overwrite is applied whatever the kernel values are, so trained
/// kernels keep the same layer shape.
pub fn image_gradient(img: &Grid, kx: &Kernel1D, ky: &Kernel1D) -> Result<(Grid, Grid)> {
    debug_assert_eq!(kx.orientation(), Orientation::Horizontal);
    debug_assert_eq!(ky.orientation(), Orientation::Vertical);
    let mut gx = convolve_same(img, kx)?;
    let mut gy = convolve_same(img, ky)?;
    zero_boundary_columns(&mut gx);
    zero_boundary_rows(&mut gy);
    Ok((gx, gy))
}

/// VJP of [`image_gradient`]: overwritten boundary outputs contribute zero
/// gradient. Returns `(d_img, d_kx_taps, d_ky_taps)`.
pub fn image_gradient_vjp(
    img: &Grid,
    kx: &Kernel1D,
    ky: &Kernel1D,
    d_gx: &Grid,
    d_gy: &Grid,
) -> (Grid, Vec<f64>, Vec<f64>) {
    let mut mx = d_gx.clone();
    let mut my = d_gy.clone();
    zero_boundary_columns(&mut mx);
    zero_boundary_rows(&mut my);
    let mut d_img = convolve_same_vjp_grid(&mx, kx);
    let d_img_y = convolve_same_vjp_grid(&my, ky);
    d_img.add_scaled(&d_img_y, 1.0);
    let d_kx = convolve_same_vjp_taps(img, kx, &mx);
    let d_ky = convolve_same_vjp_taps(img, ky, &my);
    (d_img, d_kx, d_ky)
}

/// Flow-component gradient: forward-aligned convolution with the boundary
/// overwrite zeroing the last column of `gx` and the last row of `gy`.
pub fn flow_gradient(field: &Grid, kx: &Kernel1D, ky: &Kernel1D) -> Result<(Grid, Grid)> {
    debug_assert_eq!(kx.orientation(), Orientation::Horizontal);
    debug_assert_eq!(ky.orientation(), Orientation::Vertical);
    let mut gx = convolve_same(field, kx)?;
    let mut gy = convolve_same(field, ky)?;
    zero_last_column(&mut gx);
    zero_last_row(&mut gy);
    Ok((gx, gy))
}

/// VJP of [`flow_gradient`]. Returns `(d_field, d_kx_taps, d_ky_taps)`.
pub fn flow_gradient_vjp(
    field: &Grid,
    kx: &Kernel1D,
    ky: &Kernel1D,
    d_gx: &Grid,
    d_gy: &Grid,
) -> (Grid, Vec<f64>, Vec<f64>) {
    let mut mx = d_gx.clone();
    let mut my = d_gy.clone();
    zero_last_column(&mut mx);
    zero_last_row(&mut my);
    let mut d_field = convolve_same_vjp_grid(&mx, kx);
    let d_field_y = convolve_same_vjp_grid(&my, ky);
    d_field.add_scaled(&d_field_y, 1.0);
    let d_kx = convolve_same_vjp_taps(field, kx, &mx);
    let d_ky = convolve_same_vjp_taps(field, ky, &my);
    (d_field, d_kx, d_ky)
}

/// Shift one pixel right, zero-padding the first column.
fn shift_right(g: &Grid) -> Grid {
    let (h, w) = (g.height(), g.width());
    Grid::from_fn(h, w, |x, y| if x == 0 { 0.0 } else { g.at(x - 1, y) })
}

/// Shift one pixel down, zero-padding the first row.
fn shift_down(g: &Grid) -> Grid {
    let (h, w) = (g.height(), g.width());
    Grid::from_fn(h, w, |x, y| if y == 0 { 0.0 } else { g.at(x, y - 1) })
}

/// Divergence of a dual field: the backward difference expressed as
/// shift-then-convolve, followed by the boundary overwrite
/// (first column: `p.x`, last column: `-p.x` of the previous column;
/// rows analogous for `p.y`).
///
/// Axes collapse when the grid is a single pixel wide or tall: that axis
/// contributes zero.
pub fn divergence(p: &DualField, kbx: &Kernel1D, kby: &Kernel1D) -> Result<Grid> {
    p.x.check_same_shape(&p.y, "divergence dual components")?;
    debug_assert_eq!(kbx.orientation(), Orientation::Horizontal);
    debug_assert_eq!(kby.orientation(), Orientation::Vertical);
    let (h, w) = (p.x.height(), p.x.width());
    let mut out = Grid::zeros(h, w);
    if w > 1 {
        let shifted = shift_right(&p.x);
        let mut cx = convolve_same(&shifted, kbx)?;
        for y in 0..h {
            cx.set(0, y, p.x.at(0, y));
            cx.set(w - 1, y, -p.x.at(w - 2, y));
        }
        out.add_scaled(&cx, 1.0);
    }
    if h > 1 {
        let shifted = shift_down(&p.y);
        let mut cy = convolve_same(&shifted, kby)?;
        for x in 0..w {
            cy.set(x, 0, p.y.at(x, 0));
            cy.set(x, h - 1, -p.y.at(x, h - 2));
        }
        out.add_scaled(&cy, 1.0);
    }
    Ok(out)
}

/// VJP of [`divergence`]. Boundary rows/columns route straight to the dual
/// field; interior cells go through the convolution transpose. Returns
/// `(d_p, d_kbx_taps, d_kby_taps)`.
pub fn divergence_vjp(
    p: &DualField,
    kbx: &Kernel1D,
    kby: &Kernel1D,
    upstream: &Grid,
) -> (DualField, Vec<f64>, Vec<f64>) {
    let (h, w) = (p.x.height(), p.x.width());
    let mut d_p = DualField::zeros(h, w);
    let mut d_kbx = vec![0.0; kbx.len()];
    let mut d_kby = vec![0.0; kby.len()];
    if w > 1 {
        for y in 0..h {
            d_p.x.add_at(0, y, upstream.at(0, y));
            d_p.x.add_at(w - 2, y, -upstream.at(w - 1, y));
        }
        let mut masked = upstream.clone();
        zero_boundary_columns(&mut masked);
        let d_shifted = convolve_same_vjp_grid(&masked, kbx);
        for y in 0..h {
            for x in 1..w {
                d_p.x.add_at(x - 1, y, d_shifted.at(x, y));
            }
        }
        d_kbx = convolve_same_vjp_taps(&shift_right(&p.x), kbx, &masked);
    }
    if h > 1 {
        for x in 0..w {
            d_p.y.add_at(x, 0, upstream.at(x, 0));
            d_p.y.add_at(x, h - 2, -upstream.at(x, h - 1));
        }
        let mut masked = upstream.clone();
        zero_boundary_rows(&mut masked);
        let d_shifted = convolve_same_vjp_grid(&masked, kby);
        for y in 1..h {
            for x in 0..w {
                d_p.y.add_at(x, y - 1, d_shifted.at(x, y));
            }
        }
        d_kby = convolve_same_vjp_taps(&shift_down(&p.y), kby, &masked);
    }
    (d_p, d_kbx, d_kby)
}

/// Bilinear warp: `out(x, y) = sum_{m,n} img(m, n) * hat(x + u1 - m) *
/// hat(y + u2 - n)` with `hat(t) = max(0, 1 - |t|)`. Samples falling
/// entirely outside the grid yield zero.
pub fn warp_bilinear(img: &Grid, flow: &FlowField) -> Result<Grid> {
    img.check_same_shape(&flow.u1, "warp image vs flow")?;
    if !flow.all_finite() {
        return Err(Error::InvalidArgument(
            "warp_bilinear: non-finite flow values".into(),
        ));
    }
    let (h, w) = (img.height(), img.width());
    let mut out = Grid::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let sx = x as f64 + flow.u1.at(x, y);
            let sy = y as f64 + flow.u2.at(x, y);
            // Entirely outside the hat support: zero, and the index
            // arithmetic below stays in range.
            if sx < -1.0 || sx > w as f64 || sy < -1.0 || sy > h as f64 {
                continue;
            }
            let m0 = sx.floor();
            let n0 = sy.floor();
            let fx = sx - m0;
            let fy = sy - n0;
            let m0 = m0 as isize;
            let n0 = n0 as isize;
            let mut acc = 0.0;
            for (mi, wx) in [(m0, 1.0 - fx), (m0 + 1, fx)] {
                if mi < 0 || mi as usize >= w {
                    continue;
                }
                for (ni, wy) in [(n0, 1.0 - fy), (n0 + 1, fy)] {
                    if ni < 0 || ni as usize >= h {
                        continue;
                    }
                    acc += img.at(mi as usize, ni as usize) * wx * wy;
                }
            }
            out.set(x, y, acc);
        }
    }
    Ok(out)
}

/// Derivative of `hat(t) = max(0, 1 - |t|)`.
///
/// At the peak kink (`t = 0`) the subgradient is fixed to 0; at the edge
/// kinks (`|t| = 1`) it is the mean of the one-sided slopes, so central
/// finite differences of the piecewise-linear warp agree with the analytic
/// value even at integer sample positions.
#[inline]
fn hat_deriv(t: f64) -> f64 {
    let a = t.abs();
    if a > 1.0 || t == 0.0 {
        0.0
    } else if a == 1.0 {
        -0.5 * t.signum()
    } else {
        -t.signum()
    }
}

/// Exact vector-Jacobian product of [`warp_bilinear`]. Returns
/// `(d_img, d_flow)` for the given upstream sensitivity.
pub fn warp_bilinear_vjp(
    img: &Grid,
    flow: &FlowField,
    upstream: &Grid,
) -> Result<(Grid, FlowField)> {
    img.check_same_shape(&flow.u1, "warp image vs flow")?;
    img.check_same_shape(upstream, "warp image vs upstream")?;
    if !flow.all_finite() {
        return Err(Error::InvalidArgument(
            "warp_bilinear_vjp: non-finite flow values".into(),
        ));
    }
    let (h, w) = (img.height(), img.width());
    let mut d_img = Grid::zeros(h, w);
    let mut d_flow = FlowField::zeros(h, w);
    for y in 0..h {
        for x in 0..w {
            let u = upstream.at(x, y);
            let sx = x as f64 + flow.u1.at(x, y);
            let sy = y as f64 + flow.u2.at(x, y);
            if sx < -1.0 || sx > w as f64 || sy < -1.0 || sy > h as f64 {
                continue;
            }
            let m0f = sx.floor();
            let n0f = sy.floor();
            let fx = sx - m0f;
            let fy = sy - n0f;
            let m0 = m0f as isize;
            let n0 = n0f as isize;

            let x_taps = [(m0, 1.0 - fx), (m0 + 1, fx)];
            let y_taps = [(n0, 1.0 - fy), (n0 + 1, fy)];

            for &(mi, wx) in &x_taps {
                if mi < 0 || mi as usize >= w {
                    continue;
                }
                for &(ni, wy) in &y_taps {
                    if ni < 0 || ni as usize >= h {
                        continue;
                    }
                    d_img.add_at(mi as usize, ni as usize, u * wx * wy);
                }
            }

            // d/d u1: hat derivative along x, hat value along y.
            let mut acc = 0.0;
            for mi in (m0 - 1)..=(m0 + 1) {
                if mi < 0 || mi as usize >= w {
                    continue;
                }
                let gx = hat_deriv(sx - mi as f64);
                if gx == 0.0 {
                    continue;
                }
                for &(ni, wy) in &y_taps {
                    if ni < 0 || ni as usize >= h {
                        continue;
                    }
                    acc += img.at(mi as usize, ni as usize) * gx * wy;
                }
            }
            d_flow.u1.set(x, y, u * acc);

            // d/d u2: hat value along x, hat derivative along y.
            let mut acc = 0.0;
            for ni in (n0 - 1)..=(n0 + 1) {
                if ni < 0 || ni as usize >= h {
                    continue;
                }
                let gy = hat_deriv(sy - ni as f64);
                if gy == 0.0 {
                    continue;
                }
                for &(mi, wx) in &x_taps {
                    if mi < 0 || mi as usize >= w {
                        continue;
                    }
                    acc += img.at(mi as usize, ni as usize) * wx * gy;
                }
            }
            d_flow.u2.set(x, y, u * acc);
        }
    }
    Ok((d_img, d_flow))
}
