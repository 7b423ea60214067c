//! The solver unrolled into a fixed feed-forward graph with trainable
//! initialization and difference kernels, plus exact reverse-mode gradients
//! through every layer.
//!
//! [`forward`] runs the very same engine as the classical solver (identical
//! arithmetic, bit-for-bit) while recording a [`Tape`]; [`backward`] replays
//! the tape in reverse, applying the hand-derived vector-Jacobian product of
//! each layer: thresholding step, divergence, flow gradients, dual update,
//! warping, boundary overwrites, and the pyramid resampling chain.

use crate::error::{Error, Result};
use crate::grid::{DualField, FlowField, Grid, Image2D};
use crate::grid_ops::{
    divergence_vjp, flow_gradient, flow_gradient_vjp, image_gradient, image_gradient_vjp,
    warp_bilinear_vjp,
};
use crate::losses::LossValue;
use crate::params::{GradientSet, TrainableParams, U0Init};
use crate::pyramid::{pyramid_dims, upsample_flow_transpose, ResamplePlan};
use crate::rng::SplitMix64;
use crate::solver::{run_multiscale, SolverConfig};
use crate::tape::{Tape, WarpTape};

/// Fixed-size forward pass: numerically identical to the classical
/// multi-scale solve (early stopping is disabled), returning the flow and
/// the tape for [`backward`].
pub fn forward(
    i0: &Image2D,
    i1: &Image2D,
    params: &TrainableParams,
    cfg: &SolverConfig,
) -> Result<(FlowField, Tape)> {
    let mut cfg_fixed = cfg.clone();
    cfg_fixed.eps_stop = 0.0;
    cfg_fixed.validate()?;
    i0.check_same_shape(i1, "forward images")?;
    let dims = pyramid_dims(i0.height(), i0.width(), cfg_fixed.scale_factor, cfg_fixed.n_scales)?;
    let mut tape = Tape::new(cfg_fixed.clone(), params.clone(), dims);
    let flow = run_multiscale(i0, i1, &cfg_fixed, params, Some(&mut tape))?;
    Ok((flow, tape))
}

fn add_taps(acc: &mut [f64], src: &[f64]) {
    for (a, s) in acc.iter_mut().zip(src.iter()) {
        *a += s;
    }
}

/// Reverse pass through one warp. On entry `d_u`/`d_p*` hold gradients with
/// respect to the warp's outputs; on exit they hold gradients with respect
/// to the flow at the warp's start and the dual fields entering the warp.
#[allow(clippy::too_many_arguments)]
fn backward_warp(
    warp: &WarpTape,
    level_i1: &Grid,
    cfg: &SolverConfig,
    params: &TrainableParams,
    d_u: &mut FlowField,
    d_p1: &mut DualField,
    d_p2: &mut DualField,
    grads: &mut GradientSet,
    d_i0_level: &mut Grid,
    d_i1_level: &mut Grid,
) -> Result<()> {
    let kernels = &params.kernels;
    let lin = &warp.lin;
    let u0 = warp.u0();
    let (h, w) = (u0.height(), u0.width());
    let n = h * w;
    let kappa = cfg.tau / cfg.theta;
    let lt = cfg.lambda * cfg.theta;

    // Sensitivities of the per-warp linearization grids, accumulated over
    // every iteration that consumed them.
    let mut d_gxw = Grid::zeros(h, w);
    let mut d_gyw = Grid::zeros(h, w);
    let mut d_rc = Grid::zeros(h, w);

    for k in (0..warp.iters.len()).rev() {
        let it = &warp.iters[k];
        let u_out = if k + 1 < warp.iters.len() {
            &warp.iters[k + 1].u_in
        } else {
            &warp.u_out
        };
        // Bit-exact recomputation of the flow gradients the dual update saw.
        let g1 = flow_gradient(&u_out.u1, &kernels.flow_x, &kernels.flow_y)?;
        let g2 = flow_gradient(&u_out.u2, &kernels.flow_x, &kernels.flow_y)?;

        // Dual ascent backward: p_out = (p_in + kappa g) / (1 + kappa s),
        // s = sqrt(g1^2 + g2^2 + eps). Produces the upstream sensitivity of
        // the flow gradients and replaces the carried dual sensitivity.
        let mut d_g1 = (Grid::zeros(h, w), Grid::zeros(h, w));
        let mut d_g2 = (Grid::zeros(h, w), Grid::zeros(h, w));
        {
            type DualGroup<'a> =
                (&'a DualField, &'a (Grid, Grid), &'a mut DualField, &'a mut (Grid, Grid));
            let groups: [DualGroup; 2] = [
                (&it.p1_in, &g1, &mut *d_p1, &mut d_g1),
                (&it.p2_in, &g2, &mut *d_p2, &mut d_g2),
            ];
            for (p_in, g, d_p, d_g) in groups {
                for i in 0..n {
                    let g1v = g.0.data()[i];
                    let g2v = g.1.data()[i];
                    let s = (g1v * g1v + g2v * g2v + cfg.eps_div).sqrt();
                    let dd = 1.0 + kappa * s;
                    let upx = d_p.x.data()[i];
                    let upy = d_p.y.data()[i];
                    let num1 = p_in.x.data()[i] + kappa * g1v;
                    let num2 = p_in.y.data()[i] + kappa * g2v;
                    let dot = upx * num1 + upy * num2;
                    let shared = kappa * dot / (s * dd * dd);
                    d_g.0.data_mut()[i] = kappa / dd * upx - g1v * shared;
                    d_g.1.data_mut()[i] = kappa / dd * upy - g2v * shared;
                    d_p.x.data_mut()[i] = upx / dd;
                    d_p.y.data_mut()[i] = upy / dd;
                }
            }
        }

        // Flow-gradient backward feeds the updated flow's sensitivity.
        let (d_u1_g, d_kfx1, d_kfy1) =
            flow_gradient_vjp(&u_out.u1, &kernels.flow_x, &kernels.flow_y, &d_g1.0, &d_g1.1);
        let (d_u2_g, d_kfx2, d_kfy2) =
            flow_gradient_vjp(&u_out.u2, &kernels.flow_x, &kernels.flow_y, &d_g2.0, &d_g2.1);
        add_taps(&mut grads.flow_x, &d_kfx1);
        add_taps(&mut grads.flow_x, &d_kfx2);
        add_taps(&mut grads.flow_y, &d_kfy1);
        add_taps(&mut grads.flow_y, &d_kfy2);
        d_u.u1.add_scaled(&d_u1_g, 1.0);
        d_u.u2.add_scaled(&d_u2_g, 1.0);

        // u_d = v_d + theta * div(p_d_in): the carried d_u is d_v verbatim,
        // and theta * d_u drives the divergence backward into the duals.
        let d_div1 = d_u.u1.map(|v| v * cfg.theta);
        let d_div2 = d_u.u2.map(|v| v * cfg.theta);
        let (d_p1_div, d_kbx1, d_kby1) =
            divergence_vjp(&it.p1_in, &kernels.div_x, &kernels.div_y, &d_div1);
        let (d_p2_div, d_kbx2, d_kby2) =
            divergence_vjp(&it.p2_in, &kernels.div_x, &kernels.div_y, &d_div2);
        add_taps(&mut grads.div_x, &d_kbx1);
        add_taps(&mut grads.div_x, &d_kbx2);
        add_taps(&mut grads.div_y, &d_kby1);
        add_taps(&mut grads.div_y, &d_kby2);
        d_p1.x.add_scaled(&d_p1_div.x, 1.0);
        d_p1.y.add_scaled(&d_p1_div.y, 1.0);
        d_p2.x.add_scaled(&d_p2_div.x, 1.0);
        d_p2.y.add_scaled(&d_p2_div.y, 1.0);

        // Thresholding-step backward through the case selected on the
        // forward pass; the selector itself is piecewise constant and
        // contributes no gradient.
        let mut d_u_in = FlowField::zeros(h, w);
        for i in 0..n {
            let gx = lin.gx_warped.data()[i];
            let gy = lin.gy_warped.data()[i];
            let u1 = it.u_in.u1.data()[i];
            let u2 = it.u_in.u2.data()[i];
            let rho = gx * u1 + gy * u2 + lin.rho_const.data()[i];
            let q = gx * gx + gy * gy;
            let th = lt * q;
            let dv1 = d_u.u1.data()[i];
            let dv2 = d_u.u2.data()[i];
            let mut du1 = dv1;
            let mut du2 = dv2;
            let mut d_rho = 0.0;
            if rho < -th {
                d_gxw.data_mut()[i] += lt * dv1;
                d_gyw.data_mut()[i] += lt * dv2;
            } else if rho > th {
                d_gxw.data_mut()[i] -= lt * dv1;
                d_gyw.data_mut()[i] -= lt * dv2;
            } else {
                let denom = q + cfg.eps_div;
                let dvg = dv1 * gx + dv2 * gy;
                d_rho -= dvg / denom;
                d_gxw.data_mut()[i] -= dv1 * rho / denom;
                d_gyw.data_mut()[i] -= dv2 * rho / denom;
                let d_q = dvg * rho / (denom * denom);
                d_gxw.data_mut()[i] += 2.0 * gx * d_q;
                d_gyw.data_mut()[i] += 2.0 * gy * d_q;
            }
            du1 += d_rho * gx;
            du2 += d_rho * gy;
            d_gxw.data_mut()[i] += d_rho * u1;
            d_gyw.data_mut()[i] += d_rho * u2;
            d_rc.data_mut()[i] += d_rho;
            d_u_in.u1.data_mut()[i] = du1;
            d_u_in.u2.data_mut()[i] = du2;
        }
        *d_u = d_u_in;
    }

    // Linearization backward. rho_const = i1w - i0 - gxw*u0_1 - gyw*u0_2.
    let d_i1w = d_rc.clone();
    d_i0_level.add_scaled(&d_rc, -1.0);
    for i in 0..n {
        let rc = d_rc.data()[i];
        d_gxw.data_mut()[i] -= rc * u0.u1.data()[i];
        d_gyw.data_mut()[i] -= rc * u0.u2.data()[i];
        d_u.u1.data_mut()[i] -= rc * lin.gx_warped.data()[i];
        d_u.u2.data_mut()[i] -= rc * lin.gy_warped.data()[i];
    }

    // The three warped grids share the flow argument u0. The raw image
    // gradients are deterministic recomputations from the level image.
    let (gx_raw, gy_raw) = image_gradient(level_i1, &kernels.img_x, &kernels.img_y)?;
    let (d_i1_warp, d_u0_a) = warp_bilinear_vjp(level_i1, u0, &d_i1w)?;
    let (d_gx_raw, d_u0_b) = warp_bilinear_vjp(&gx_raw, u0, &d_gxw)?;
    let (d_gy_raw, d_u0_c) = warp_bilinear_vjp(&gy_raw, u0, &d_gyw)?;
    d_i1_level.add_scaled(&d_i1_warp, 1.0);
    d_u.add_scaled(&d_u0_a, 1.0);
    d_u.add_scaled(&d_u0_b, 1.0);
    d_u.add_scaled(&d_u0_c, 1.0);

    let (d_i1_grad, d_kcx, d_kcy) =
        image_gradient_vjp(level_i1, &kernels.img_x, &kernels.img_y, &d_gx_raw, &d_gy_raw);
    d_i1_level.add_scaled(&d_i1_grad, 1.0);
    add_taps(&mut grads.img_x, &d_kcx);
    add_taps(&mut grads.img_y, &d_kcy);
    Ok(())
}

/// Exact reverse-mode vector-Jacobian product of the full unrolled graph.
/// Returns the parameter gradients and the sensitivities of both
/// full-resolution input images.
pub fn backward(tape: &Tape, d_flow: &FlowField) -> Result<(GradientSet, Grid, Grid)> {
    let (h, w) = tape.output_dims();
    if d_flow.height() != h || d_flow.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "backward seed is {}x{} but the tape output is {h}x{w}",
            d_flow.height(),
            d_flow.width()
        )));
    }
    let params = &tape.params;
    let cfg = &tape.cfg;
    let mut grads = GradientSet::zeros_like(params);
    let mut d_i0_levels: Vec<Grid> = tape.dims.iter().map(|&(lh, lw)| Grid::zeros(lh, lw)).collect();
    let mut d_i1_levels: Vec<Grid> = tape.dims.iter().map(|&(lh, lw)| Grid::zeros(lh, lw)).collect();

    let mut d_u = d_flow.clone();
    for si in (0..tape.scales.len()).rev() {
        let scale = &tape.scales[si];
        let level = scale.level;
        let (lh, lw) = tape.dims[level];
        let mut d_p1 = DualField::zeros(lh, lw);
        let mut d_p2 = DualField::zeros(lh, lw);
        for warp in scale.warps.iter().rev() {
            backward_warp(
                warp,
                &scale.i1,
                cfg,
                params,
                &mut d_u,
                &mut d_p1,
                &mut d_p2,
                &mut grads,
                &mut d_i0_levels[level],
                &mut d_i1_levels[level],
            )?;
        }
        if si > 0 {
            // This scale's initial flow was the coarser output, bilinearly
            // upsampled and rescaled by 1 / scale_factor.
            let coarser_level = tape.scales[si - 1].level;
            let (ch, cw) = tape.dims[coarser_level];
            d_u = upsample_flow_transpose(&d_u, ch, cw, cfg.scale_factor);
        } else {
            match &params.u0 {
                U0Init::Zero => {}
                U0Init::Constant(_) => {
                    grads.u0_constant[0] += d_u.u1.data().iter().sum::<f64>();
                    grads.u0_constant[1] += d_u.u2.data().iter().sum::<f64>();
                }
                U0Init::Field(_) => {
                    grads
                        .u0_field
                        .as_mut()
                        .expect("field-mode gradient allocated")
                        .add_scaled(&d_u, 1.0);
                }
            }
        }
    }

    // Pyramid transpose chain: each level was area-decimated from the next
    // finer one.
    for level in (1..tape.dims.len()).rev() {
        let (fh, fw) = tape.dims[level - 1];
        let (ch, cw) = tape.dims[level];
        let plan = ResamplePlan::area(fh, fw, ch, cw);
        let t0 = plan.transpose(&d_i0_levels[level]);
        d_i0_levels[level - 1].add_scaled(&t0, 1.0);
        let t1 = plan.transpose(&d_i1_levels[level]);
        d_i1_levels[level - 1].add_scaled(&t1, 1.0);
    }
    let mut it0 = d_i0_levels.into_iter();
    let mut it1 = d_i1_levels.into_iter();
    Ok((grads, it0.next().unwrap(), it1.next().unwrap()))
}

/// Compare analytic parameter gradients against central finite differences
/// on `n_probes` distinct parameters chosen by a seeded generator. Returns
/// the maximum relative error with denominator
/// `max(|analytic|, |numeric|, 1e-12)`.
#[allow(clippy::too_many_arguments)]
pub fn grad_check(
    i0: &Image2D,
    i1: &Image2D,
    params: &TrainableParams,
    cfg: &SolverConfig,
    loss: impl Fn(&FlowField) -> LossValue,
    n_probes: usize,
    step: f64,
    seed: u64,
) -> Result<f64> {
    if !(step.is_finite() && step > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "grad_check step must be positive, got {step}"
        )));
    }
    let (flow, tape) = forward(i0, i1, params, cfg)?;
    let lv = loss(&flow);
    let (grads, _, _) = backward(&tape, &lv.grad_flow)?;
    let flat = grads.flatten();

    let total = params.param_count();
    let count = n_probes.min(total);
    let mut indices: Vec<usize> = (0..total).collect();
    let mut rng = SplitMix64::new(seed);
    for i in 0..count {
        let j = i + rng.below(total - i);
        indices.swap(i, j);
    }

    let mut cfg_fixed = cfg.clone();
    cfg_fixed.eps_stop = 0.0;
    let value_at = |p: &TrainableParams| -> Result<f64> {
        let flow = run_multiscale(i0, i1, &cfg_fixed, p, None)?;
        Ok(loss(&flow).value)
    };

    let mut max_rel: f64 = 0.0;
    for &pi in &indices[..count] {
        let mut plus = params.clone();
        plus.param_add(pi, step);
        let mut minus = params.clone();
        minus.param_add(pi, -step);
        let numeric = (value_at(&plus)? - value_at(&minus)?) / (2.0 * step);
        let analytic = flat[pi];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-12);
        max_rel = max_rel.max(rel);
    }
    Ok(max_rel)
}
