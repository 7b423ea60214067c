//! Differentiable TV-L1 optical flow.
//!
//! The crate provides:
//! - pure grid operators (finite-difference convolutions, divergence,
//!   bilinear warping) with exact vector-Jacobian products,
//! - the classical multi-scale TV-L1 primal-dual solver,
//! - the same solver unrolled into a fixed computation graph whose
//!   initialization field and difference kernels are trainable by
//!   gradient descent,
//! - end-point-error and energy losses, a full-batch trainer,
//! - file formats (Middlebury-style `.flo`, binary PNM, a versioned
//!   parameter file), synthetic data, and flow visualization.

pub mod error;
pub mod grid;
pub mod grid_ops;
pub mod io;
pub mod losses;
pub mod params;
pub mod pyramid;
pub mod rng;
pub mod solver;
pub mod synth;
pub mod tape;
pub mod trainer;
pub mod unrolled;

pub use error::{Error, Result};
pub use grid::{DualField, FlowField, Grid, Image2D, Kernel1D, Orientation};
pub use losses::{epe, flow_energy, multitask_combine, LossValue};
pub use params::{GradientSet, KernelSet, TrainableParams, U0Init, U0Mode};
pub use solver::{
    inner_iterations, linearize, p_update, relaxed_energy, solve_multiscale, solve_single_scale,
    u_update, v_update, SolverConfig, SolverState, TaylorLinearization,
};
pub use tape::Tape;
pub use trainer::{evaluate, train, TrainConfig, TrainMode, TrainPair, TrainRecord};
pub use unrolled::{backward, forward, grad_check};
