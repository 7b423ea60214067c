//! Losses and metrics over flow fields: end-point error, the exact
//! (non-linearized) TV-L1 energy with its gradient, and the multi-task
//! combination hook.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, Image2D};
use crate::grid_ops::{flow_gradient, flow_gradient_vjp, warp_bilinear, warp_bilinear_vjp};
use crate::params::KernelSet;

/// Smoothing constant inside the differentiated absolute values.
const ABS_SMOOTHING: f64 = 1e-12;

/// A scalar loss with its exact gradient with respect to the evaluated flow.
#[derive(Debug, Clone)]
pub struct LossValue {
    pub value: f64,
    pub grad_flow: FlowField,
}

/// Average end-point error over valid pixels:
/// `(1/N) sum sqrt((u1 - u1_gt)^2 + (u2 - u2_gt)^2)`.
///
/// `mask` marks pixels with defined ground truth (> 0.5 = valid); `None`
/// means every pixel counts. The gradient denominator is guarded at 1e-12.
pub fn epe(pred: &FlowField, gt: &FlowField, mask: Option<&Grid>) -> Result<LossValue> {
    pred.u1.check_same_shape(&gt.u1, "epe pred vs gt")?;
    if let Some(m) = mask {
        pred.u1.check_same_shape(m, "epe pred vs mask")?;
    }
    let (h, w) = (pred.height(), pred.width());
    let n_total = h * w;
    let valid = |i: usize| mask.is_none_or(|m| m.data()[i] > 0.5);
    let count = (0..n_total).filter(|&i| valid(i)).count();
    if count == 0 {
        return Err(Error::InvalidArgument(
            "epe: no valid pixels under the mask".into(),
        ));
    }
    let inv_n = 1.0 / count as f64;
    let mut value = 0.0;
    let mut grad = FlowField::zeros(h, w);
    for i in 0..n_total {
        if !valid(i) {
            continue;
        }
        let d1 = pred.u1.data()[i] - gt.u1.data()[i];
        let d2 = pred.u2.data()[i] - gt.u2.data()[i];
        let dist = (d1 * d1 + d2 * d2).sqrt();
        value += dist * inv_n;
        let denom = dist.max(1e-12);
        grad.u1.data_mut()[i] = d1 / denom * inv_n;
        grad.u2.data_mut()[i] = d2 / denom * inv_n;
    }
    Ok(LossValue {
        value,
        grad_flow: grad,
    })
}

/// The TV-L1 energy evaluated exactly (residual through the warp, no Taylor
/// approximation), with absolute values smoothed as `sqrt(t^2 + 1e-12)` so
/// the loss is differentiable:
/// `sum_x (|grad u1| + |grad u2|) + lambda |I1(x + u) - I0(x)|`.
pub fn flow_energy(
    i0: &Image2D,
    i1: &Image2D,
    flow: &FlowField,
    lambda_data: f64,
    kernels: &KernelSet,
) -> Result<LossValue> {
    i0.check_same_shape(i1, "flow_energy images")?;
    i0.check_same_shape(&flow.u1, "flow_energy image vs flow")?;
    let (h, w) = (i0.height(), i0.width());
    let n = h * w;

    let g1 = flow_gradient(&flow.u1, &kernels.flow_x, &kernels.flow_y)?;
    let g2 = flow_gradient(&flow.u2, &kernels.flow_x, &kernels.flow_y)?;
    let warped = warp_bilinear(i1, flow)?;

    let mut value = 0.0;
    let mut d_g1 = (Grid::zeros(h, w), Grid::zeros(h, w));
    let mut d_g2 = (Grid::zeros(h, w), Grid::zeros(h, w));
    let mut d_rho = Grid::zeros(h, w);
    for i in 0..n {
        let s1 = (g1.0.data()[i] * g1.0.data()[i]
            + g1.1.data()[i] * g1.1.data()[i]
            + ABS_SMOOTHING)
            .sqrt();
        let s2 = (g2.0.data()[i] * g2.0.data()[i]
            + g2.1.data()[i] * g2.1.data()[i]
            + ABS_SMOOTHING)
            .sqrt();
        let rho = warped.data()[i] - i0.data()[i];
        let r = (rho * rho + ABS_SMOOTHING).sqrt();
        value += s1 + s2 + lambda_data * r;
        d_g1.0.data_mut()[i] = g1.0.data()[i] / s1;
        d_g1.1.data_mut()[i] = g1.1.data()[i] / s1;
        d_g2.0.data_mut()[i] = g2.0.data()[i] / s2;
        d_g2.1.data_mut()[i] = g2.1.data()[i] / s2;
        d_rho.data_mut()[i] = lambda_data * rho / r;
    }

    let (d_u1, _, _) = flow_gradient_vjp(&flow.u1, &kernels.flow_x, &kernels.flow_y, &d_g1.0, &d_g1.1);
    let (d_u2, _, _) = flow_gradient_vjp(&flow.u2, &kernels.flow_x, &kernels.flow_y, &d_g2.0, &d_g2.1);
    let (_, d_flow_warp) = warp_bilinear_vjp(i1, flow, &d_rho)?;

    let mut grad = FlowField { u1: d_u1, u2: d_u2 };
    grad.add_scaled(&d_flow_warp, 1.0);
    Ok(LossValue {
        value,
        grad_flow: grad,
    })
}

/// Multi-task combination `task + lambda_mix * flow` of values and gradient
/// seeds. The default mixing weight is 0.1.
pub fn multitask_combine(task: &LossValue, flow: &LossValue, lambda_mix: f64) -> LossValue {
    assert!(
        task.grad_flow.same_shape(&flow.grad_flow),
        "multitask_combine: seed shapes differ"
    );
    let mut grad = task.grad_flow.clone();
    grad.add_scaled(&flow.grad_flow, lambda_mix);
    LossValue {
        value: task.value + lambda_mix * flow.value,
        grad_flow: grad,
    }
}

pub const DEFAULT_LAMBDA_MIX: f64 = 0.1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;

    fn random_grid(rng: &mut SplitMix64, h: usize, w: usize) -> Grid {
        Grid::from_fn(h, w, |_, _| rng.next_f64())
    }

    fn random_flow(rng: &mut SplitMix64, h: usize, w: usize) -> FlowField {
        FlowField {
            u1: Grid::from_fn(h, w, |_, _| rng.range_f64(-1.0, 1.0)),
            u2: Grid::from_fn(h, w, |_, _| rng.range_f64(-1.0, 1.0)),
        }
    }

    #[test]
    fn epe_zero_when_equal() {
        let mut rng = SplitMix64::new(31);
        let f = random_flow(&mut rng, 4, 4);
        let l = epe(&f, &f, None).unwrap();
        assert_eq!(l.value, 0.0);
    }

    #[test]
    fn epe_unit_displacement() {
        let pred = FlowField::constant(3, 3, 1.0, 0.0);
        let gt = FlowField::zeros(3, 3);
        let l = epe(&pred, &gt, None).unwrap();
        assert!((l.value - 1.0).abs() < 1e-15);
    }

    #[test]
    fn epe_two_pixel_example() {
        let pred = FlowField {
            u1: Grid::from_vec(1, 2, vec![3.0, 0.0]).unwrap(),
            u2: Grid::from_vec(1, 2, vec![4.0, 0.0]).unwrap(),
        };
        let gt = FlowField::zeros(1, 2);
        let l = epe(&pred, &gt, None).unwrap();
        assert!((l.value - 2.5).abs() < 1e-15);
    }

    #[test]
    fn epe_symmetric_and_nonnegative() {
        let mut rng = SplitMix64::new(32);
        let a = random_flow(&mut rng, 5, 5);
        let b = random_flow(&mut rng, 5, 5);
        let ab = epe(&a, &b, None).unwrap().value;
        let ba = epe(&b, &a, None).unwrap().value;
        assert_eq!(ab, ba);
        assert!(ab >= 0.0);
    }

    #[test]
    fn epe_respects_mask_and_rejects_empty() {
        let pred = FlowField::constant(1, 2, 2.0, 0.0);
        let gt = FlowField::zeros(1, 2);
        let mask = Grid::from_vec(1, 2, vec![1.0, 0.0]).unwrap();
        let l = epe(&pred, &gt, Some(&mask)).unwrap();
        assert!((l.value - 2.0).abs() < 1e-15);
        assert_eq!(l.grad_flow.u1.at(1, 0), 0.0);

        let none = Grid::zeros(1, 2);
        assert!(epe(&pred, &gt, Some(&none)).is_err());
    }

    #[test]
    fn epe_gradient_matches_finite_differences() {
        let mut rng = SplitMix64::new(33);
        let pred = random_flow(&mut rng, 4, 4);
        let gt = random_flow(&mut rng, 4, 4);
        let l = epe(&pred, &gt, None).unwrap();
        let step = 1e-6;
        for y in 0..4 {
            for x in 0..4 {
                for comp in 0..2 {
                    let eval = |delta: f64| {
                        let mut p = pred.clone();
                        let g = if comp == 0 { &mut p.u1 } else { &mut p.u2 };
                        g.set(x, y, g.at(x, y) + delta);
                        epe(&p, &gt, None).unwrap().value
                    };
                    let num = (eval(step) - eval(-step)) / (2.0 * step);
                    let ana = if comp == 0 {
                        l.grad_flow.u1.at(x, y)
                    } else {
                        l.grad_flow.u2.at(x, y)
                    };
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-12);
                    assert!(rel < 1e-4, "({x},{y},{comp}): {ana} vs {num}");
                }
            }
        }
    }

    #[test]
    fn flow_energy_floor_cases() {
        let img = Grid::filled(4, 4, 0.5);
        let kernels = KernelSet::default();
        let floor = 16.0 * (2.0 + 0.15) * 1e-6;
        let e = flow_energy(&img, &img, &FlowField::zeros(4, 4), 0.15, &kernels).unwrap();
        assert!(e.value <= floor * 1.01, "{} vs floor {}", e.value, floor);

        // A constant flow keeps the TV term at its floor; the data term is
        // zero except on the trailing band the zero-fill warp uncovers.
        let c = FlowField::constant(4, 4, 0.4, 0.4);
        let e2 = flow_energy(&img, &img, &c, 0.15, &kernels).unwrap();
        let warped = warp_bilinear(&img, &c).unwrap();
        let expected: f64 = (0..16)
            .map(|i| {
                let rho = warped.data()[i] - img.data()[i];
                2e-6 + 0.15 * (rho * rho + 1e-12).sqrt()
            })
            .sum();
        assert!((e2.value - expected).abs() < 1e-12);
        assert_eq!(warped.at(1, 1), img.at(1, 1));
    }

    #[test]
    fn flow_energy_matches_summation_oracle_and_fd() {
        let mut rng = SplitMix64::new(34);
        let i0 = random_grid(&mut rng, 4, 4);
        let i1 = random_grid(&mut rng, 4, 4);
        let flow = FlowField {
            u1: Grid::from_fn(4, 4, |_, _| rng.range_f64(0.05, 0.95)),
            u2: Grid::from_fn(4, 4, |_, _| rng.range_f64(-0.95, -0.05)),
        };
        let kernels = KernelSet::default();
        let lambda = 0.15;
        let got = flow_energy(&i0, &i1, &flow, lambda, &kernels).unwrap();

        // Per-pixel summation oracle.
        let warped = warp_bilinear(&i1, &flow).unwrap();
        let fwd = |g: &Grid, x: usize, y: usize, axis: usize| -> f64 {
            if axis == 0 {
                if x + 1 < 4 {
                    g.at(x + 1, y) - g.at(x, y)
                } else {
                    0.0
                }
            } else if y + 1 < 4 {
                g.at(x, y + 1) - g.at(x, y)
            } else {
                0.0
            }
        };
        let mut expect = 0.0;
        for y in 0..4 {
            for x in 0..4 {
                let a = fwd(&flow.u1, x, y, 0);
                let b = fwd(&flow.u1, x, y, 1);
                let c = fwd(&flow.u2, x, y, 0);
                let d = fwd(&flow.u2, x, y, 1);
                let rho = warped.at(x, y) - i0.at(x, y);
                expect += (a * a + b * b + 1e-12).sqrt()
                    + (c * c + d * d + 1e-12).sqrt()
                    + lambda * (rho * rho + 1e-12).sqrt();
            }
        }
        assert!((got.value - expect).abs() < 1e-10);

        // Gradient seed against central finite differences.
        let step = 1e-6;
        for y in 0..4 {
            for x in 0..4 {
                for comp in 0..2 {
                    let eval = |delta: f64| {
                        let mut f = flow.clone();
                        let g = if comp == 0 { &mut f.u1 } else { &mut f.u2 };
                        g.set(x, y, g.at(x, y) + delta);
                        flow_energy(&i0, &i1, &f, lambda, &kernels).unwrap().value
                    };
                    let num = (eval(step) - eval(-step)) / (2.0 * step);
                    let ana = if comp == 0 {
                        got.grad_flow.u1.at(x, y)
                    } else {
                        got.grad_flow.u2.at(x, y)
                    };
                    let rel = (ana - num).abs() / ana.abs().max(num.abs()).max(1e-12);
                    assert!(rel < 1e-4, "({x},{y},{comp}): {ana} vs {num}");
                }
            }
        }
    }

    #[test]
    fn multitask_accepts_epe_in_the_task_slot() {
        let mut rng = SplitMix64::new(36);
        let i0 = random_grid(&mut rng, 4, 4);
        let i1 = random_grid(&mut rng, 4, 4);
        let flow = random_flow(&mut rng, 4, 4);
        let gt = random_flow(&mut rng, 4, 4);
        let task = epe(&flow, &gt, None).unwrap();
        let energy = flow_energy(&i0, &i1, &flow, 0.15, &KernelSet::default()).unwrap();
        let combined = multitask_combine(&task, &energy, DEFAULT_LAMBDA_MIX);
        assert!((combined.value - (task.value + 0.1 * energy.value)).abs() < 1e-12);
        for i in 0..16 {
            let expect = task.grad_flow.u2.data()[i] + 0.1 * energy.grad_flow.u2.data()[i];
            assert!((combined.grad_flow.u2.data()[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn multitask_combines_linearly() {
        let mut rng = SplitMix64::new(35);
        let task = LossValue {
            value: 2.0,
            grad_flow: random_flow(&mut rng, 3, 3),
        };
        let flow = LossValue {
            value: 3.0,
            grad_flow: random_flow(&mut rng, 3, 3),
        };
        let out = multitask_combine(&task, &flow, 0.1);
        assert!((out.value - 2.3).abs() < 1e-15);
        for i in 0..9 {
            let expect = task.grad_flow.u1.data()[i] + 0.1 * flow.grad_flow.u1.data()[i];
            assert!((out.grad_flow.u1.data()[i] - expect).abs() < 1e-15);
        }
        let unchanged = multitask_combine(&task, &flow, 0.0);
        assert_eq!(unchanged.value, task.value);
        assert_eq!(unchanged.grad_flow, task.grad_flow);
    }
}
