//! Full-batch gradient-descent training of the unrolled solver against
//! ground-truth flow, and batch evaluation.
//!
//! Per-pair forward/backward passes run in parallel; loss and gradient
//! accumulation happen afterwards in fixed list order, so training
//! trajectories are bit-reproducible.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{FlowField, Grid, Image2D};
use crate::losses::epe;
use crate::params::{GradientSet, TrainableParams};
use crate::solver::{solve_multiscale, SolverConfig};
use crate::unrolled::{backward, forward};

/// Which parameters the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// Only the u0 initialization is trained; kernel gradients are discarded.
    U0Only,
    /// u0 and all difference kernels are trained.
    All,
}

/// Training protocol settings. Defaults: learning rate 0.05, 3000
/// full-batch iterations.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub log_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::All,
            learning_rate: 0.05,
            max_iterations: 3000,
            log_every: 1,
            seed: 0,
        }
    }
}

/// One training example: image pair, ground-truth flow, optional validity
/// mask (> 0.5 marks pixels with defined ground truth).
#[derive(Debug, Clone)]
pub struct TrainPair {
    pub i0: Image2D,
    pub i1: Image2D,
    pub gt: FlowField,
    pub mask: Option<Grid>,
}

/// One logged training step.
#[derive(Debug, Clone)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Summed EPE loss over the batch (the quantity whose gradient drives
    /// the update).
    pub loss: f64,
    pub per_pair_epe: Vec<f64>,
    pub ms: f64,
}

fn batch_pass(
    pairs: &[TrainPair],
    params: &TrainableParams,
    solver_cfg: &SolverConfig,
) -> Result<(f64, Vec<f64>, GradientSet)> {
    let results: Vec<Result<(f64, GradientSet)>> = pairs
        .par_iter()
        .map(|pair| {
            let (flow, tape) = forward(&pair.i0, &pair.i1, params, solver_cfg)?;
            let lv = epe(&flow, &pair.gt, pair.mask.as_ref())?;
            let (grads, _, _) = backward(&tape, &lv.grad_flow)?;
            Ok((lv.value, grads))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut per_pair = Vec::with_capacity(pairs.len());
    let mut total_grads = GradientSet::zeros_like(params);
    for r in results {
        let (loss, grads) = r?;
        total_loss += loss;
        per_pair.push(loss);
        total_grads.accumulate(&grads);
    }
    Ok((total_loss, per_pair, total_grads))
}

/// Full-batch gradient descent minimizing the summed EPE over `pairs`:
/// each iteration accumulates per-pair gradients in fixed list order and
/// steps `params -= lr * grad`. Records are emitted every `log_every`
/// iterations and at the final one; `on_record` sees each record as it is
/// produced (for streaming logs).
pub fn train_with(
    pairs: &[TrainPair],
    params: &TrainableParams,
    solver_cfg: &SolverConfig,
    train_cfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<(TrainableParams, Vec<TrainRecord>)> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("train: empty pair list".into()));
    }
    if !(train_cfg.learning_rate.is_finite() && train_cfg.learning_rate >= 0.0) {
        return Err(Error::InvalidArgument(format!(
            "train: learning rate must be finite and non-negative, got {}",
            train_cfg.learning_rate
        )));
    }
    if train_cfg.log_every == 0 {
        return Err(Error::InvalidArgument("train: log_every must be positive".into()));
    }
    let start = Instant::now();
    let mut params = params.clone();
    let mut records = Vec::new();
    for iteration in 0..train_cfg.max_iterations {
        let (loss, per_pair, grads) = batch_pass(pairs, &params, solver_cfg)?;
        if !loss.is_finite() {
            let record = TrainRecord {
                iteration,
                loss,
                per_pair_epe: per_pair,
                ms: start.elapsed().as_secs_f64() * 1e3,
            };
            on_record(&record);
            records.push(record);
            return Err(Error::NonFiniteLoss {
                iteration,
                value: loss,
            });
        }
        params.apply_step(
            &grads,
            -train_cfg.learning_rate,
            train_cfg.mode == TrainMode::All,
        );
        if iteration % train_cfg.log_every == 0 || iteration + 1 == train_cfg.max_iterations {
            let record = TrainRecord {
                iteration,
                loss,
                per_pair_epe: per_pair,
                ms: start.elapsed().as_secs_f64() * 1e3,
            };
            on_record(&record);
            records.push(record);
        }
    }
    Ok((params, records))
}

/// [`train_with`] without a streaming callback.
pub fn train(
    pairs: &[TrainPair],
    params: &TrainableParams,
    solver_cfg: &SolverConfig,
    train_cfg: &TrainConfig,
) -> Result<(TrainableParams, Vec<TrainRecord>)> {
    train_with(pairs, params, solver_cfg, train_cfg, |_| {})
}

/// Mean of per-pair EPE values, pairs weighted equally.
pub fn evaluate(
    pairs: &[TrainPair],
    params: &TrainableParams,
    solver_cfg: &SolverConfig,
) -> Result<f64> {
    let epes = per_pair_epe(pairs, params, solver_cfg)?;
    Ok(epes.iter().sum::<f64>() / epes.len() as f64)
}

/// EPE of each pair under the given parameters, in list order. Evaluation
/// honors `solver_cfg.eps_stop`: the classical profile may stop early,
/// while unrolled profiles (eps_stop = 0) run the fixed-size graph.
pub fn per_pair_epe(
    pairs: &[TrainPair],
    params: &TrainableParams,
    solver_cfg: &SolverConfig,
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::InvalidArgument("evaluate: empty pair list".into()));
    }
    pairs
        .par_iter()
        .map(|pair| {
            let flow = solve_multiscale(&pair.i0, &pair.i1, solver_cfg, params)?;
            Ok(epe(&flow, &pair.gt, pair.mask.as_ref())?.value)
        })
        .collect()
}
