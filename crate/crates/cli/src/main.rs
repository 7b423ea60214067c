//! Command-line surface: flow extraction, batch evaluation, training,
//! synthetic data generation, and throughput measurement.
//!
//! Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
//! 3 numerical failure (non-finite loss).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use tvflow_core::io::config::load_config;
use tvflow_core::io::{
    flow_to_color, read_flo, read_image, read_params, unknown_mask, write_flo, write_image,
    write_params, RunManifest,
};
use tvflow_core::synth::{synth_pair, SynthKind};
use tvflow_core::trainer::{train_with, TrainConfig, TrainMode, TrainPair, TrainRecord};
use tvflow_core::{solve_multiscale, Error, FlowField, Grid, SolverConfig, TrainableParams};

#[derive(Parser)]
#[command(
    name = "tvflow",
    version,
    about = "TV-L1 optical flow: classical solver and trainable unrolled network"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct SolverArgs {
    /// Flat `key = value` config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of pyramid scales.
    #[arg(long)]
    scales: Option<usize>,
    /// Number of warps per scale.
    #[arg(long)]
    warps: Option<usize>,
    /// Number of inner iterations per warp.
    #[arg(long)]
    iters: Option<usize>,
}

impl SolverArgs {
    fn build(&self) -> Result<SolverConfig, Error> {
        let mut cfg = SolverConfig::default();
        if let Some(path) = &self.config {
            cfg = load_config(path, cfg)?;
        }
        if let Some(s) = self.scales {
            cfg.n_scales = s;
        }
        if let Some(w) = self.warps {
            cfg.n_warps = w;
        }
        if let Some(i) = self.iters {
            cfg.n_iters = i;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Solver overrides for `train`, where `--iters` already means training
/// iterations.
#[derive(Args, Clone)]
struct TrainSolverArgs {
    /// Flat `key = value` config file; flags below override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of pyramid scales.
    #[arg(long)]
    scales: Option<usize>,
    /// Number of warps per scale.
    #[arg(long)]
    warps: Option<usize>,
    /// Number of inner solver iterations per warp.
    #[arg(long)]
    solver_iters: Option<usize>,
}

impl TrainSolverArgs {
    fn build(&self) -> Result<SolverConfig, Error> {
        SolverArgs {
            config: self.config.clone(),
            scales: self.scales,
            warps: self.warps,
            iters: self.solver_iters,
        }
        .build()
    }
}

#[derive(Subcommand)]
enum Command {
    /// Extract optical flow between two PNM images and write a .flo file.
    Flow {
        img0: PathBuf,
        img1: PathBuf,
        /// Output .flo path.
        #[arg(short, long)]
        out: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        /// Optional trained parameter file.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Also write a color-wheel visualization (binary PPM).
        #[arg(long)]
        viz: Option<PathBuf>,
        /// Write a JSON run manifest.
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Average end-point error over (img0, img1, gt.flo) triples.
    Eval {
        /// Text file: one `img0 img1 gt.flo` triple per line, paths
        /// relative to the list file.
        #[arg(long)]
        pairs: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Train the initialization field and difference kernels by full-batch
    /// gradient descent on EPE.
    Train {
        #[arg(long)]
        pairs: PathBuf,
        /// `u0` trains only the initialization; `all` trains kernels too.
        #[arg(long)]
        mode: String,
        /// Learning rate.
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Training iterations.
        #[arg(long, default_value_t = 3000)]
        iters: usize,
        /// Output parameter file.
        #[arg(short, long)]
        out: PathBuf,
        /// CSV training log (columns: iteration, loss, mean_epe, ms).
        #[arg(long)]
        log: Option<PathBuf>,
        /// Log cadence in iterations.
        #[arg(long, default_value_t = 10)]
        log_every: usize,
        /// Initial parameters; defaults to a fresh initialization.
        #[arg(long)]
        params: Option<PathBuf>,
        /// u0 parameterization for fresh initializations:
        /// zero | constant | field.
        #[arg(long, default_value = "constant")]
        u0: String,
        #[command(flatten)]
        solver: TrainSolverArgs,
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Generate a synthetic image pair with exact ground-truth flow.
    Synth {
        /// translate | rotate | blob_translate
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 64)]
        size: usize,
        /// Horizontal displacement in pixels.
        #[arg(long)]
        mag: f64,
        /// Vertical displacement in pixels.
        #[arg(long, default_value_t = 0.0)]
        mag_y: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (frame0.pgm, frame1.pgm, gt.flo, pairs.txt).
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Measure flow-extraction throughput on one image pair.
    Bench {
        img0: PathBuf,
        img1: PathBuf,
        /// Number of repetitions.
        #[arg(long, default_value_t = 10)]
        repeat: usize,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        params: Option<PathBuf>,
    },
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Format { .. } | Error::Io(_) => 2,
        Error::NonFiniteLoss { .. } => 3,
        _ => 1,
    }
}

fn load_params_or_default(path: &Option<PathBuf>) -> Result<TrainableParams, Error> {
    match path {
        Some(p) => read_params(p),
        None => Ok(TrainableParams::default()),
    }
}

fn cfg_manifest_entries(cfg: &SolverConfig) -> BTreeMap<String, String> {
    let mut m = BTreeMap::new();
    m.insert("lambda".into(), format!("{}", cfg.lambda));
    m.insert("theta".into(), format!("{}", cfg.theta));
    m.insert("tau".into(), format!("{}", cfg.tau));
    m.insert("eps_stop".into(), format!("{}", cfg.eps_stop));
    m.insert("eps_div".into(), format!("{}", cfg.eps_div));
    m.insert("scales".into(), format!("{}", cfg.n_scales));
    m.insert("warps".into(), format!("{}", cfg.n_warps));
    m.insert("iters".into(), format!("{}", cfg.n_iters));
    m.insert("scale_factor".into(), format!("{}", cfg.scale_factor));
    m
}

/// Parse a pairs list: `img0 img1 gt.flo` per line, `#` comments, paths
/// resolved against the list file's directory.
fn read_pairs(list: &Path) -> Result<Vec<TrainPair>, Error> {
    let text = std::fs::read_to_string(list)?;
    let base = list.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(Error::InvalidArgument(format!(
                "{}:{}: expected `img0 img1 gt.flo`, got {raw:?}",
                list.display(),
                lineno + 1
            )));
        }
        let i0 = read_image(base.join(fields[0]))?;
        let i1 = read_image(base.join(fields[1]))?;
        let gt = read_flo(base.join(fields[2]))?;
        i0.check_same_shape(&i1, "pair images")?;
        i0.check_same_shape(&gt.u1, "pair image vs ground truth")?;
        let mask = unknown_mask(&gt);
        pairs.push(TrainPair {
            i0,
            i1,
            gt,
            mask: Some(mask),
        });
    }
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no pairs listed",
            list.display()
        )));
    }
    Ok(pairs)
}

fn pair_names(list: &Path) -> Vec<String> {
    std::fs::read_to_string(list)
        .unwrap_or_default()
        .lines()
        .filter_map(|raw| {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            let fields: Vec<&str> = line.split_whitespace().collect();
            (fields.len() == 3).then(|| fields[0].to_string())
        })
        .collect()
}

fn run_flow(
    img0: &Path,
    img1: &Path,
    out: &Path,
    solver: &SolverArgs,
    params_path: &Option<PathBuf>,
    viz: &Option<PathBuf>,
    manifest: &Option<PathBuf>,
) -> Result<(), Error> {
    let cfg = solver.build()?;
    let params = load_params_or_default(params_path)?;
    let i0 = read_image(img0)?;
    let i1 = read_image(img1)?;
    let flow = solve_multiscale(&i0, &i1, &cfg, &params)?;
    write_flo(out, &flow)?;
    if let Some(viz_path) = viz {
        flow_to_color(&flow, None).write_ppm(viz_path)?;
    }
    if let Some(m) = manifest {
        let mut doc = RunManifest::new();
        doc.config = cfg_manifest_entries(&cfg);
        doc.inputs = vec![img0.display().to_string(), img1.display().to_string()];
        if let Some(p) = params_path {
            doc.inputs.push(p.display().to_string());
        }
        doc.outputs = vec![out.display().to_string()];
        if let Some(v) = viz {
            doc.outputs.push(v.display().to_string());
        }
        doc.write(m)?;
    }
    Ok(())
}

fn run_eval(
    pairs_path: &Path,
    solver: &SolverArgs,
    params_path: &Option<PathBuf>,
    manifest: &Option<PathBuf>,
) -> Result<(), Error> {
    let cfg = solver.build()?;
    let params = load_params_or_default(params_path)?;
    let pairs = read_pairs(pairs_path)?;
    let names = pair_names(pairs_path);
    let epes = tvflow_core::trainer::per_pair_epe(&pairs, &params, &cfg)?;
    let label = format!("{}-{}-{}", cfg.n_scales, cfg.n_warps, cfg.n_iters);
    println!("{:<40} {:>8}", "pair", "epe");
    for (name, e) in names.iter().zip(epes.iter()) {
        println!("{name:<40} {e:>8.3}");
    }
    let avg = epes.iter().sum::<f64>() / epes.len() as f64;
    println!(
        "{:<40} {avg:>8.3}",
        format!("average ({label}, {} pairs)", epes.len())
    );
    if let Some(m) = manifest {
        let mut doc = RunManifest::new();
        doc.config = cfg_manifest_entries(&cfg);
        doc.inputs = vec![pairs_path.display().to_string()];
        doc.metrics.insert("average_epe".into(), avg);
        for (name, e) in names.iter().zip(epes.iter()) {
            doc.metrics.insert(format!("epe/{name}"), *e);
        }
        doc.write(m)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    pairs_path: &Path,
    mode: &str,
    lr: f64,
    iters: usize,
    out: &Path,
    log: &Option<PathBuf>,
    log_every: usize,
    params_path: &Option<PathBuf>,
    u0: &str,
    solver: &TrainSolverArgs,
    manifest: &Option<PathBuf>,
) -> Result<(), Error> {
    let cfg = solver.build()?;
    let mode = match mode {
        "u0" => TrainMode::U0Only,
        "all" => TrainMode::All,
        other => {
            return Err(Error::InvalidArgument(format!(
                "--mode must be `u0` or `all`, got {other:?}"
            )))
        }
    };
    let pairs = read_pairs(pairs_path)?;
    let params = match params_path {
        Some(p) => read_params(p)?,
        None => match u0 {
            "zero" => TrainableParams::default(),
            "constant" => TrainableParams::with_constant_u0(),
            "field" => {
                let (h, w) = (pairs[0].i0.height(), pairs[0].i0.width());
                if pairs
                    .iter()
                    .any(|p| p.i0.height() != h || p.i0.width() != w)
                {
                    return Err(Error::InvalidArgument(
                        "--u0 field requires all pairs to share one resolution".into(),
                    ));
                }
                let dims =
                    tvflow_core::pyramid::pyramid_dims(h, w, cfg.scale_factor, cfg.n_scales)?;
                let (ch, cw) = dims[cfg.n_scales - 1];
                TrainableParams::with_field_u0(ch, cw)
            }
            other => {
                return Err(Error::InvalidArgument(format!(
                    "--u0 must be zero, constant, or field, got {other:?}"
                )))
            }
        },
    };
    let tcfg = TrainConfig {
        mode,
        learning_rate: lr,
        max_iterations: iters,
        log_every,
        seed: 0,
    };
    let mut log_file = match log {
        Some(path) => {
            let mut f = File::create(path)?;
            writeln!(f, "iteration,loss,mean_epe,ms")?;
            Some(f)
        }
        None => None,
    };
    let emit = |record: &TrainRecord| {
        let mean_epe = record.per_pair_epe.iter().sum::<f64>() / record.per_pair_epe.len() as f64;
        println!(
            "iter {:>6}  loss {:>12.6}  mean_epe {:>10.6}",
            record.iteration, record.loss, mean_epe
        );
        if let Some(f) = log_file.as_mut() {
            let _ = writeln!(
                f,
                "{},{:.12e},{:.12e},{:.3}",
                record.iteration, record.loss, mean_epe, record.ms
            );
        }
    };
    let (trained, records) = train_with(&pairs, &params, &cfg, &tcfg, emit)?;
    write_params(out, &trained)?;
    if let Some(m) = manifest {
        let mut doc = RunManifest::new();
        doc.config = cfg_manifest_entries(&cfg);
        doc.config.insert("lr".into(), format!("{lr}"));
        doc.config.insert("train_iters".into(), format!("{iters}"));
        doc.inputs = vec![pairs_path.display().to_string()];
        doc.outputs = vec![out.display().to_string()];
        if let Some(r) = records.last() {
            doc.metrics.insert("final_loss".into(), r.loss);
            doc.metrics.insert(
                "final_mean_epe".into(),
                r.per_pair_epe.iter().sum::<f64>() / r.per_pair_epe.len() as f64,
            );
        }
        doc.write(m)?;
    }
    Ok(())
}

fn run_synth(
    kind: &str,
    size: usize,
    mag: f64,
    mag_y: f64,
    seed: u64,
    out: &Path,
) -> Result<(), Error> {
    let kind = SynthKind::parse(kind).ok_or_else(|| {
        Error::InvalidArgument(format!(
            "--kind must be translate, rotate, or blob_translate, got {kind:?}"
        ))
    })?;
    let (i0, i1, gt) = synth_pair(kind, size, (mag, mag_y), seed)?;
    std::fs::create_dir_all(out)?;
    write_image(out.join("frame0.pgm"), &i0)?;
    write_image(out.join("frame1.pgm"), &i1)?;
    write_flo(out.join("gt.flo"), &gt)?;
    std::fs::write(out.join("pairs.txt"), "frame0.pgm frame1.pgm gt.flo\n")?;
    println!(
        "wrote {} pair (size {size}, shift ({mag}, {mag_y})) to {}",
        kind.name(),
        out.display()
    );
    Ok(())
}

fn run_bench(
    img0: &Path,
    img1: &Path,
    repeat: usize,
    solver: &SolverArgs,
    params_path: &Option<PathBuf>,
) -> Result<(), Error> {
    if repeat == 0 {
        return Err(Error::InvalidArgument("--repeat must be positive".into()));
    }
    let cfg = solver.build()?;
    let params = load_params_or_default(params_path)?;
    let i0 = read_image(img0)?;
    let i1 = read_image(img1)?;
    // Warm-up solve, excluded from timing.
    let mut sink: Grid = solve_multiscale(&i0, &i1, &cfg, &params)?.u1;
    let start = Instant::now();
    for _ in 0..repeat {
        let flow: FlowField = solve_multiscale(&i0, &i1, &cfg, &params)?;
        sink = flow.u1;
    }
    let elapsed = start.elapsed().as_secs_f64();
    std::hint::black_box(&sink);
    let fps = repeat as f64 / elapsed;
    println!(
        "{}x{} config {}-{}-{}: {repeat} runs in {elapsed:.3} s -> {fps:.2} frames/s",
        i0.width(),
        i0.height(),
        cfg.n_scales,
        cfg.n_warps,
        cfg.n_iters
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match &cli.command {
        Command::Flow {
            img0,
            img1,
            out,
            solver,
            params,
            viz,
            manifest,
        } => run_flow(img0, img1, out, solver, params, viz, manifest),
        Command::Eval {
            pairs,
            solver,
            params,
            manifest,
        } => run_eval(pairs, solver, params, manifest),
        Command::Train {
            pairs,
            mode,
            lr,
            iters,
            out,
            log,
            log_every,
            params,
            u0,
            solver,
            manifest,
        } => run_train(
            pairs, mode, *lr, *iters, out, log, *log_every, params, u0, solver, manifest,
        ),
        Command::Synth {
            kind,
            size,
            mag,
            mag_y,
            seed,
            out,
        } => run_synth(kind, *size, *mag, *mag_y, *seed, out),
        Command::Bench {
            img0,
            img1,
            repeat,
            solver,
            params,
        } => run_bench(img0, img1, *repeat, solver, params),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if e.use_stderr() => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
        Err(e) => {
            // --help / --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
