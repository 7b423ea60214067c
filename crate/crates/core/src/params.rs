//! Trainable parameters of the unrolled solver: the initialization flow
//! field and the six difference kernels (shared across every iteration,
//! warp, and scale), plus the mirrored gradient container.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Kernel1D, Orientation};

/// The six trainable difference kernels. Horizontal and vertical kernels are
/// independent parameters initialized as transposes of one another.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    /// Image-gradient pair, initialized to the central difference.
    pub img_x: Kernel1D,
    pub img_y: Kernel1D,
    /// Flow-gradient pair, initialized to the forward difference.
    pub flow_x: Kernel1D,
    pub flow_y: Kernel1D,
    /// Divergence pair, initialized to the backward difference.
    pub div_x: Kernel1D,
    pub div_y: Kernel1D,
}

impl Default for KernelSet {
    fn default() -> Self {
        Self {
            img_x: Kernel1D::central(Orientation::Horizontal),
            img_y: Kernel1D::central(Orientation::Vertical),
            flow_x: Kernel1D::forward_diff(Orientation::Horizontal),
            flow_y: Kernel1D::forward_diff(Orientation::Vertical),
            div_x: Kernel1D::backward_diff(Orientation::Horizontal),
            div_y: Kernel1D::backward_diff(Orientation::Vertical),
        }
    }
}

impl KernelSet {
    /// Total tap count (14 with the initial kernel lengths).
    pub fn param_count(&self) -> usize {
        self.img_x.len()
            + self.img_y.len()
            + self.flow_x.len()
            + self.flow_y.len()
            + self.div_x.len()
            + self.div_y.len()
    }
}

/// How the initialization field u0 is parameterized.
#[derive(Debug, Clone, PartialEq)]
pub enum U0Init {
    /// Fixed zero initialization (untrainable).
    Zero,
    /// One trainable displacement vector broadcast to the coarsest level;
    /// works for any input size.
    Constant([f64; 2]),
    /// A full trainable field sized to the coarsest pyramid level; only
    /// valid when every input shares one resolution.
    Field(FlowField),
}

/// Discriminant of [`U0Init`], used where only the shape matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum U0Mode {
    Zero,
    Constant,
    Field,
}

/// Trainable parameters: u0 initialization plus the tied difference kernels.
///
/// At construction the parameters reproduce the classical solver exactly;
/// training may move them to arbitrary finite values.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableParams {
    pub u0: U0Init,
    pub kernels: KernelSet,
}

impl Default for TrainableParams {
    fn default() -> Self {
        Self {
            u0: U0Init::Zero,
            kernels: KernelSet::default(),
        }
    }
}

impl TrainableParams {
    pub fn with_constant_u0() -> Self {
        Self {
            u0: U0Init::Constant([0.0, 0.0]),
            kernels: KernelSet::default(),
        }
    }

    pub fn with_field_u0(height: usize, width: usize) -> Self {
        Self {
            u0: U0Init::Field(FlowField::zeros(height, width)),
            kernels: KernelSet::default(),
        }
    }

    pub fn u0_mode(&self) -> U0Mode {
        match self.u0 {
            U0Init::Zero => U0Mode::Zero,
            U0Init::Constant(_) => U0Mode::Constant,
            U0Init::Field(_) => U0Mode::Field,
        }
    }

    fn u0_param_count(&self) -> usize {
        match &self.u0 {
            U0Init::Zero => 0,
            U0Init::Constant(_) => 2,
            U0Init::Field(f) => 2 * f.u1.len(),
        }
    }

    /// Total number of trainable scalars, in the fixed flattening order:
    /// u0 data first, then kernels in declaration order.
    pub fn param_count(&self) -> usize {
        self.u0_param_count() + self.kernels.param_count()
    }

    fn kernel_slices(&self) -> [&Kernel1D; 6] {
        [
            &self.kernels.img_x,
            &self.kernels.img_y,
            &self.kernels.flow_x,
            &self.kernels.flow_y,
            &self.kernels.div_x,
            &self.kernels.div_y,
        ]
    }

    pub fn param_get(&self, index: usize) -> f64 {
        let nu = self.u0_param_count();
        if index < nu {
            match &self.u0 {
                U0Init::Zero => unreachable!(),
                U0Init::Constant(c) => c[index],
                U0Init::Field(f) => {
                    let n = f.u1.len();
                    if index < n {
                        f.u1.data()[index]
                    } else {
                        f.u2.data()[index - n]
                    }
                }
            }
        } else {
            let mut i = index - nu;
            for k in self.kernel_slices() {
                if i < k.len() {
                    return k.taps()[i];
                }
                i -= k.len();
            }
            panic!("parameter index {index} out of range");
        }
    }

    pub fn param_add(&mut self, index: usize, delta: f64) {
        let nu = self.u0_param_count();
        if index < nu {
            match &mut self.u0 {
                U0Init::Zero => unreachable!(),
                U0Init::Constant(c) => c[index] += delta,
                U0Init::Field(f) => {
                    let n = f.u1.len();
                    if index < n {
                        f.u1.data_mut()[index] += delta;
                    } else {
                        f.u2.data_mut()[index - n] += delta;
                    }
                }
            }
            return;
        }
        let mut i = index - nu;
        let kernels = [
            &mut self.kernels.img_x,
            &mut self.kernels.img_y,
            &mut self.kernels.flow_x,
            &mut self.kernels.flow_y,
            &mut self.kernels.div_x,
            &mut self.kernels.div_y,
        ];
        for k in kernels {
            if i < k.len() {
                k.taps_mut()[i] += delta;
                return;
            }
            i -= k.len();
        }
        panic!("parameter index {index} out of range");
    }

    /// In-place gradient step `p += scale * g`. With `update_kernels` false
    /// only the u0 parameters move (the "train u0 only" protocol).
    pub fn apply_step(&mut self, grads: &GradientSet, scale: f64, update_kernels: bool) {
        match (&mut self.u0, &grads.u0_field) {
            (U0Init::Zero, _) => {}
            (U0Init::Constant(c), _) => {
                c[0] += scale * grads.u0_constant[0];
                c[1] += scale * grads.u0_constant[1];
            }
            (U0Init::Field(f), Some(g)) => f.add_scaled(g, scale),
            (U0Init::Field(_), None) => unreachable!("gradient shape mismatch"),
        }
        if update_kernels {
            let pairs: [(&mut Kernel1D, &Vec<f64>); 6] = [
                (&mut self.kernels.img_x, &grads.img_x),
                (&mut self.kernels.img_y, &grads.img_y),
                (&mut self.kernels.flow_x, &grads.flow_x),
                (&mut self.kernels.flow_y, &grads.flow_y),
                (&mut self.kernels.div_x, &grads.div_x),
                (&mut self.kernels.div_y, &grads.div_y),
            ];
            for (k, g) in pairs {
                for (t, gv) in k.taps_mut().iter_mut().zip(g.iter()) {
                    *t += scale * gv;
                }
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        let u0_ok = match &self.u0 {
            U0Init::Zero => true,
            U0Init::Constant(c) => c.iter().all(|v| v.is_finite()),
            U0Init::Field(f) => f.all_finite(),
        };
        u0_ok
            && self
                .kernel_slices()
                .iter()
                .all(|k| k.taps().iter().all(|v| v.is_finite()))
    }
}

/// Gradient of a scalar loss with respect to every trainable value;
/// mirrors the shape of [`TrainableParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub u0_mode: U0Mode,
    pub u0_constant: [f64; 2],
    pub u0_field: Option<FlowField>,
    pub img_x: Vec<f64>,
    pub img_y: Vec<f64>,
    pub flow_x: Vec<f64>,
    pub flow_y: Vec<f64>,
    pub div_x: Vec<f64>,
    pub div_y: Vec<f64>,
}

impl GradientSet {
    pub fn zeros_like(params: &TrainableParams) -> Self {
        Self {
            u0_mode: params.u0_mode(),
            u0_constant: [0.0, 0.0],
            u0_field: match &params.u0 {
                U0Init::Field(f) => Some(FlowField::zeros(f.height(), f.width())),
                _ => None,
            },
            img_x: vec![0.0; params.kernels.img_x.len()],
            img_y: vec![0.0; params.kernels.img_y.len()],
            flow_x: vec![0.0; params.kernels.flow_x.len()],
            flow_y: vec![0.0; params.kernels.flow_y.len()],
            div_x: vec![0.0; params.kernels.div_x.len()],
            div_y: vec![0.0; params.kernels.div_y.len()],
        }
    }

    /// Flatten in the same order as the parameter flattening.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match self.u0_mode {
            U0Mode::Zero => {}
            U0Mode::Constant => out.extend_from_slice(&self.u0_constant),
            U0Mode::Field => {
                let f = self.u0_field.as_ref().expect("field gradient present");
                out.extend_from_slice(f.u1.data());
                out.extend_from_slice(f.u2.data());
            }
        }
        for k in [
            &self.img_x,
            &self.img_y,
            &self.flow_x,
            &self.flow_y,
            &self.div_x,
            &self.div_y,
        ] {
            out.extend_from_slice(k);
        }
        out
    }

    /// Elementwise `self += other` (shapes must match).
    pub fn accumulate(&mut self, other: &GradientSet) {
        debug_assert_eq!(self.u0_mode, other.u0_mode);
        self.u0_constant[0] += other.u0_constant[0];
        self.u0_constant[1] += other.u0_constant[1];
        if let (Some(a), Some(b)) = (self.u0_field.as_mut(), other.u0_field.as_ref()) {
            a.add_scaled(b, 1.0);
        }
        let pairs: [(&mut Vec<f64>, &Vec<f64>); 6] = [
            (&mut self.img_x, &other.img_x),
            (&mut self.img_y, &other.img_y),
            (&mut self.flow_x, &other.flow_x),
            (&mut self.flow_y, &other.flow_y),
            (&mut self.div_x, &other.div_x),
            (&mut self.div_y, &other.div_y),
        ];
        for (a, b) in pairs {
            for (x, y) in a.iter_mut().zip(b.iter()) {
                *x += y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Validate that a u0 field matches the coarsest-level dimensions.
pub(crate) fn check_u0_field(f: &FlowField, h: usize, w: usize) -> Result<()> {
    if f.height() != h || f.width() != w {
        return Err(Error::DimensionMismatch(format!(
            "u0 field is {}x{} but coarsest pyramid level is {h}x{w}",
            f.height(),
            f.width()
        )));
    }
    Ok(())
}
