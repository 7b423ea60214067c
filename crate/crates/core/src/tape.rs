//! Record of one unrolled forward pass: every intermediate value the exact
//! backward pass needs, grouped scale -> warp -> iteration.
//!
//! Tape size grows linearly in `n_scales * n_warps * n_iters` and in pixel
//! count. A tape belongs to a single forward-backward sequence.

use crate::grid::{DualField, FlowField, Grid};
use crate::params::TrainableParams;
use crate::solver::{SolverConfig, TaylorLinearization};

/// Saved state of one inner iteration: the values at iteration entry. The
/// updated flow is the next record's entry state (or the warp output), and
/// its gradients are bit-exact recomputations, so neither is stored.
#[derive(Debug, Clone)]
pub(crate) struct IterTape {
    pub u_in: FlowField,
    pub p1_in: DualField,
    pub p2_in: DualField,
}

/// One warp: the Taylor data and the iterations. The linearization point
/// is the first iteration's entry state.
#[derive(Debug, Clone)]
pub(crate) struct WarpTape {
    pub lin: TaylorLinearization,
    pub iters: Vec<IterTape>,
    pub u_out: FlowField,
    pub p1_out: DualField,
    pub p2_out: DualField,
}

impl WarpTape {
    /// Flow the warp linearized around.
    pub fn u0(&self) -> &FlowField {
        &self.iters[0].u_in
    }
}

/// One pyramid level in execution (coarse-to-fine) order. Only the second
/// frame is stored: the first enters the graph linearly through the
/// residual constant, so its backward rule needs no saved values.
#[derive(Debug, Clone)]
pub(crate) struct ScaleTape {
    /// Index into the dims table (0 = finest / full resolution).
    pub level: usize,
    pub i1: Grid,
    pub warps: Vec<WarpTape>,
}

/// Ordered record of one forward pass through the unrolled graph.
#[derive(Debug, Clone)]
pub struct Tape {
    pub(crate) cfg: SolverConfig,
    pub(crate) params: TrainableParams,
    /// Level dimensions `(h, w)`, finest first.
    pub(crate) dims: Vec<(usize, usize)>,
    /// Scales in execution order (coarsest first).
    pub(crate) scales: Vec<ScaleTape>,
    /// Iterations of the warp currently being recorded.
    pending_iters: Vec<IterTape>,
}

impl Tape {
    pub(crate) fn new(cfg: SolverConfig, params: TrainableParams, dims: Vec<(usize, usize)>) -> Self {
        Self {
            cfg,
            params,
            dims,
            scales: Vec::new(),
            pending_iters: Vec::new(),
        }
    }

    pub(crate) fn begin_scale(&mut self, level: usize, i1: Grid) {
        self.scales.push(ScaleTape {
            level,
            i1,
            warps: Vec::new(),
        });
    }

    /// Record one iteration of the currently running warp.
    pub(crate) fn push_iter(&mut self, iter: IterTape) {
        self.pending_iters.push(iter);
    }

    /// Close the current warp, taking ownership of its Taylor data and
    /// final state.
    pub(crate) fn end_warp(
        &mut self,
        lin: TaylorLinearization,
        u_out: FlowField,
        p1_out: DualField,
        p2_out: DualField,
    ) {
        let iters = std::mem::take(&mut self.pending_iters);
        debug_assert!(!iters.is_empty());
        self.scales
            .last_mut()
            .expect("begin_scale first")
            .warps
            .push(WarpTape {
                lin,
                iters,
                u_out,
                p1_out,
                p2_out,
            });
    }

    /// Full-resolution output dimensions.
    pub fn output_dims(&self) -> (usize, usize) {
        self.dims[0]
    }

    /// Number of recorded iteration layer groups
    /// (`n_scales * n_warps * n_iters` for a fixed-size forward pass).
    pub fn layer_groups(&self) -> usize {
        self.scales
            .iter()
            .map(|s| s.warps.iter().map(|w| w.iters.len()).sum::<usize>())
            .sum()
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    pub fn params(&self) -> &TrainableParams {
        &self.params
    }

    /// Largest per-pixel dual-field norm observed anywhere in the pass,
    /// covering every iteration state and each warp's final state.
    pub fn max_dual_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for scale in &self.scales {
            for warp in &scale.warps {
                for it in &warp.iters {
                    m = m.max(it.p1_in.max_norm()).max(it.p2_in.max_norm());
                }
                m = m.max(warp.p1_out.max_norm()).max(warp.p2_out.max_norm());
            }
        }
        m
    }
}
