//! Flat `key = value` solver configuration files. UTF-8, `#` starts a
//! comment, unknown keys are errors. Command-line flags override file
//! values by being applied afterwards.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::solver::SolverConfig;

/// Apply assignments from config text onto `cfg`.
pub fn apply_config_text(cfg: &mut SolverConfig, text: &str) -> Result<()> {
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {raw:?}", lineno + 1))
        })?;
        let key = key.trim();
        let value = value.trim();
        let parse_f64 = || -> Result<f64> {
            value
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("line {}: bad number {value:?} for {key}", lineno + 1)))
        };
        let parse_usize = || -> Result<usize> {
            value
                .parse::<usize>()
                .map_err(|_| Error::Config(format!("line {}: bad integer {value:?} for {key}", lineno + 1)))
        };
        match key {
            "lambda" => cfg.lambda = parse_f64()?,
            "theta" => cfg.theta = parse_f64()?,
            "tau" => cfg.tau = parse_f64()?,
            "eps_stop" => cfg.eps_stop = parse_f64()?,
            "eps_div" => cfg.eps_div = parse_f64()?,
            "scale_factor" => cfg.scale_factor = parse_f64()?,
            "scales" | "n_scales" => cfg.n_scales = parse_usize()?,
            "warps" | "n_warps" => cfg.n_warps = parse_usize()?,
            "iters" | "n_iters" => cfg.n_iters = parse_usize()?,
            other => {
                return Err(Error::Config(format!(
                    "line {}: unknown key {other:?}",
                    lineno + 1
                )))
            }
        }
    }
    Ok(())
}

/// Load a config file on top of the given base configuration.
pub fn load_config(path: impl AsRef<Path>, base: SolverConfig) -> Result<SolverConfig> {
    let text = fs::read_to_string(path)?;
    let mut cfg = base;
    apply_config_text(&mut cfg, &text)?;
    Ok(cfg)
}
