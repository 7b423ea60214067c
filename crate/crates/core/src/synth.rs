//! Synthetic image pairs with exact ground-truth flow, for tests and the
//! `synth` CLI command.

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, Image2D};
use crate::rng::SplitMix64;

/// Kind of synthetic motion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SynthKind {
    /// Band-limited random texture translated by a constant vector; the
    /// second frame is produced with the same bilinear sampler the solver
    /// uses.
    Translate,
    /// Texture under a rotational flow about the image center.
    Rotate,
    /// Gaussian blob on a flat background, translated analytically.
    BlobTranslate,
}

impl SynthKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "translate" => Some(Self::Translate),
            "rotate" => Some(Self::Rotate),
            "blob_translate" => Some(Self::BlobTranslate),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Translate => "translate",
            Self::Rotate => "rotate",
            Self::BlobTranslate => "blob_translate",
        }
    }
}

/// Smooth band-limited texture in `[0, 1]` from a handful of random-phase
/// sinusoids. The function is analytic in the plane, so shifted or rotated
/// frames are exact evaluations with no resampling error and no uncovered
/// border band.
struct Texture {
    comps: Vec<(f64, f64, f64, f64)>,
    total: f64,
}

impl Texture {
    fn new(size: usize, rng: &mut SplitMix64) -> Self {
        const WAVES: usize = 8;
        let mut comps = Vec::with_capacity(WAVES);
        let mut total = 0.0;
        for k in 0..WAVES {
            // The first waves stay below 1.5 cycles per image: a strong
            // low-frequency envelope keeps deeply decimated pyramid levels
            // unambiguous (pure high-frequency content aliases into
            // periodic patterns with spurious lattice matches).
            let band = if k < 3 { 1.5 } else { 4.0 };
            let fx = rng.range_f64(-band, band) / size as f64;
            let fy = rng.range_f64(-band, band) / size as f64;
            let phase = rng.range_f64(0.0, std::f64::consts::TAU);
            let amp = rng.range_f64(0.3, 1.0);
            total += amp;
            comps.push((fx, fy, phase, amp));
        }
        Self { comps, total }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = 0.0;
        for &(fx, fy, phase, amp) in &self.comps {
            v += amp * (std::f64::consts::TAU * (fx * x + fy * y) + phase).sin();
        }
        0.5 + 0.5 * v / self.total
    }
}

/// Analytic multi-blob brightness field: one dominant central blob plus a
/// jittered grid of smaller ones, so every image region carries gradient
/// information. Evaluating the same field at shifted coordinates gives an
/// exactly constancy-preserving second frame.
struct BlobField {
    blobs: Vec<(f64, f64, f64, f64)>,
    base: f64,
}

impl BlobField {
    fn new(size: usize, rng: &mut SplitMix64) -> Self {
        let s = size as f64;
        let mut blobs = Vec::new();
        // Dominant central blob.
        blobs.push((
            (s - 1.0) / 2.0 + rng.range_f64(-0.3, 0.3),
            (s - 1.0) / 2.0 + rng.range_f64(-0.3, 0.3),
            s / 6.0,
            0.5,
        ));
        // 3x3 jittered grid of satellites.
        for gy in 0..3 {
            for gx in 0..3 {
                let cx = (gx as f64 + 0.5) * s / 3.0 + rng.range_f64(-s / 12.0, s / 12.0);
                let cy = (gy as f64 + 0.5) * s / 3.0 + rng.range_f64(-s / 12.0, s / 12.0);
                let sigma = rng.range_f64(s / 14.0, s / 9.0);
                let amp = rng.range_f64(0.15, 0.3) * if rng.below(2) == 0 { 1.0 } else { -1.0 };
                blobs.push((cx, cy, sigma, amp));
            }
        }
        Self { blobs, base: 0.45 }
    }

    fn eval(&self, x: f64, y: f64) -> f64 {
        let mut v = self.base;
        for &(cx, cy, sigma, amp) in &self.blobs {
            let dx = x - cx;
            let dy = y - cy;
            v += amp * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
        }
        v.clamp(0.0, 1.0)
    }

    fn render(&self, size: usize, shift: (f64, f64)) -> Grid {
        Grid::from_fn(size, size, |x, y| {
            self.eval(x as f64 - shift.0, y as f64 - shift.1)
        })
    }
}

/// Generate `(I0, I1, gt_flow)` where `gt` maps frame-0 points onto frame 1
/// (`I1(x + gt) = I0(x)` wherever the motion keeps content in view).
///
/// `magnitude` is the displacement vector for the translation kinds and the
/// peak boundary displacement for `Rotate`; its largest component must not
/// exceed `size / 4`.
pub fn synth_pair(
    kind: SynthKind,
    size: usize,
    magnitude: (f64, f64),
    seed: u64,
) -> Result<(Image2D, Image2D, FlowField)> {
    if size < 4 {
        return Err(Error::InvalidArgument(format!(
            "synth size must be at least 4, got {size}"
        )));
    }
    let limit = size as f64 / 4.0;
    if magnitude.0.abs() > limit || magnitude.1.abs() > limit {
        return Err(Error::InvalidArgument(format!(
            "synth magnitude ({}, {}) exceeds size/4 = {limit}",
            magnitude.0, magnitude.1
        )));
    }
    let mut rng = SplitMix64::new(seed);
    match kind {
        SynthKind::Translate => {
            let tex = Texture::new(size, &mut rng);
            let i0 = Grid::from_fn(size, size, |x, y| tex.eval(x as f64, y as f64));
            let i1 = Grid::from_fn(size, size, |x, y| {
                tex.eval(x as f64 - magnitude.0, y as f64 - magnitude.1)
            });
            let gt = FlowField::constant(size, size, magnitude.0, magnitude.1);
            Ok((i0, i1, gt))
        }
        SynthKind::Rotate => {
            let tex = Texture::new(size, &mut rng);
            let c = (size as f64 - 1.0) / 2.0;
            // Peak displacement at the half-width radius.
            let angle = magnitude.0.hypot(magnitude.1) / (size as f64 / 2.0);
            let (sin, cos) = angle.sin_cos();
            let i0 = Grid::from_fn(size, size, |x, y| tex.eval(x as f64, y as f64));
            // Frame 1 samples the texture at inverse-rotated coordinates,
            // so brightness constancy holds exactly under the forward flow.
            let i1 = Grid::from_fn(size, size, |x, y| {
                let (dx, dy) = (x as f64 - c, y as f64 - c);
                tex.eval(cos * dx + sin * dy + c, -sin * dx + cos * dy + c)
            });
            let gt = FlowField {
                u1: Grid::from_fn(size, size, |x, y| {
                    let (dx, dy) = (x as f64 - c, y as f64 - c);
                    cos * dx - sin * dy - dx
                }),
                u2: Grid::from_fn(size, size, |x, y| {
                    let (dx, dy) = (x as f64 - c, y as f64 - c);
                    sin * dx + cos * dy - dy
                }),
            };
            Ok((i0, i1, gt))
        }
        SynthKind::BlobTranslate => {
            let field = BlobField::new(size, &mut rng);
            let i0 = field.render(size, (0.0, 0.0));
            let i1 = field.render(size, magnitude);
            let gt = FlowField::constant(size, size, magnitude.0, magnitude.1);
            Ok((i0, i1, gt))
        }
    }
}
