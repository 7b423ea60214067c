//! Dense scalar grids and the domain types built from them.
//!
//! Storage is row-major `f64` with `y` (height) as the row index and `x`
//! (width) as the column index. All solver arithmetic is double precision.

use crate::error::{Error, Result};

/// H×W scalar grid, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

/// A grayscale image; brightness values are expected in `[0, 1]`.
pub type Image2D = Grid;

impl Grid {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0.0; height * width],
        }
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn from_vec(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::DimensionMismatch(format!(
                "grid data length {} != {}x{}",
                data.len(),
                height,
                width
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Build from a per-pixel function of `(x, y)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut g = Grid::zeros(height, width);
        for y in 0..height {
            for x in 0..width {
                g.data[y * width + x] = f(x, y);
            }
        }
        g
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] = value;
    }

    #[inline]
    pub fn add_at(&mut self, x: usize, y: usize, value: f64) {
        self.data[y * self.width + x] += value;
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Grid {
        Grid {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self + scale * other`.
    pub fn add_scaled(&mut self, other: &Grid, scale: f64) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += scale * b;
        }
    }

    pub fn check_same_shape(&self, other: &Grid, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::DimensionMismatch(format!(
                "{what}: {}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }
}

/// Per-pixel displacement field; `u1` is horizontal (x) and `u2` vertical (y)
/// displacement in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub u1: Grid,
    pub u2: Grid,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            u1: Grid::zeros(height, width),
            u2: Grid::zeros(height, width),
        }
    }

    pub fn constant(height: usize, width: usize, u1: f64, u2: f64) -> Self {
        Self {
            u1: Grid::filled(height, width, u1),
            u2: Grid::filled(height, width, u2),
        }
    }

    pub fn new(u1: Grid, u2: Grid) -> Result<Self> {
        u1.check_same_shape(&u2, "flow components")?;
        Ok(Self { u1, u2 })
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.u1.height()
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.u1.width()
    }

    pub fn same_shape(&self, other: &FlowField) -> bool {
        self.u1.same_shape(&other.u1)
    }

    pub fn all_finite(&self) -> bool {
        self.u1.all_finite() && self.u2.all_finite()
    }

    pub fn add_scaled(&mut self, other: &FlowField, scale: f64) {
        self.u1.add_scaled(&other.u1, scale);
        self.u2.add_scaled(&other.u2, scale);
    }
}

/// Dual vector field attached to one flow component: `x` pairs with the
/// horizontal derivative, `y` with the vertical one.
#[derive(Debug, Clone, PartialEq)]
pub struct DualField {
    pub x: Grid,
    pub y: Grid,
}

impl DualField {
    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            x: Grid::zeros(height, width),
            y: Grid::zeros(height, width),
        }
    }

    /// Largest per-pixel Euclidean norm, used by the feasibility invariant.
    pub fn max_norm(&self) -> f64 {
        self.x
            .data()
            .iter()
            .zip(self.y.data().iter())
            .map(|(&a, &b)| (a * a + b * b).sqrt())
            .fold(0.0, f64::max)
    }
}

/// Axis a 1-D kernel slides along.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// Trainable 1-D difference kernel (2 or 3 taps).
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel1D {
    taps: Vec<f64>,
    orientation: Orientation,
}

impl Kernel1D {
    pub fn new(taps: Vec<f64>, orientation: Orientation) -> Result<Self> {
        if taps.len() != 2 && taps.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "kernel length must be 2 or 3, got {}",
                taps.len()
            )));
        }
        Ok(Self { taps, orientation })
    }

    /// Central-difference initialization `[0.5, 0, -0.5]`.
    pub fn central(orientation: Orientation) -> Self {
        Self {
            taps: vec![0.5, 0.0, -0.5],
            orientation,
        }
    }

    /// Forward-difference initialization `[-1, 1]`.
    pub fn forward_diff(orientation: Orientation) -> Self {
        Self {
            taps: vec![-1.0, 1.0],
            orientation,
        }
    }

    /// Backward-difference initialization: same taps as [`forward_diff`],
    /// applied to a shifted grid by the divergence operator.
    ///
    /// [`forward_diff`]: Kernel1D::forward_diff
    pub fn backward_diff(orientation: Orientation) -> Self {
        Self::forward_diff(orientation)
    }

    #[inline]
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    #[inline]
    pub fn taps_mut(&mut self) -> &mut [f64] {
        &mut self.taps
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.taps.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    #[inline]
    pub fn orientation(&self) -> Orientation {
        self.orientation
    }
}
