//! Behavioral tests of the `tvflow` binary: subcommand round trips, config
//! handling, and exit codes.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tvflow"))
}

fn tmpdir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("cli-{name}"));
    fs::remove_dir_all(&dir).ok();
    fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn assert_code(out: &Output, code: i32) {
    assert_eq!(
        out.status.code(),
        Some(code),
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn identical_frames_give_zero_flow_file() {
    let dir = tmpdir("zero-flow");
    let synth = run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "16",
        "--mag",
        "0",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    assert_code(&synth, 0);
    let out = dir.join("zero.flo");
    let flow = run(&[
        "flow",
        dir.join("d/frame0.pgm").to_str().unwrap(),
        dir.join("d/frame1.pgm").to_str().unwrap(),
        "-o",
        out.to_str().unwrap(),
        "--scales",
        "1",
        "--warps",
        "1",
        "--iters",
        "5",
    ]);
    assert_code(&flow, 0);
    let decoded = tvflow_core::io::read_flo(&out).unwrap();
    assert!(decoded.u1.data().iter().all(|&v| v == 0.0));
    assert!(decoded.u2.data().iter().all(|&v| v == 0.0));
}

#[test]
fn eval_of_matching_flow_prints_zero_epe() {
    let dir = tmpdir("eval-zero");
    run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "32",
        "--mag",
        "1",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    // Produce a flow, then evaluate against that very flow as ground truth.
    let flo = dir.join("d/pred.flo");
    assert_code(
        &run(&[
            "flow",
            dir.join("d/frame0.pgm").to_str().unwrap(),
            dir.join("d/frame1.pgm").to_str().unwrap(),
            "-o",
            flo.to_str().unwrap(),
            "--scales",
            "2",
            "--warps",
            "1",
            "--iters",
            "10",
        ]),
        0,
    );
    fs::write(
        dir.join("d/self.txt"),
        "frame0.pgm frame1.pgm pred.flo\n",
    )
    .unwrap();
    let eval = run(&[
        "eval",
        "--pairs",
        dir.join("d/self.txt").to_str().unwrap(),
        "--scales",
        "2",
        "--warps",
        "1",
        "--iters",
        "10",
    ]);
    assert_code(&eval, 0);
    let stdout = String::from_utf8_lossy(&eval.stdout);
    assert!(stdout.contains("0.000"), "expected zero EPE in:\n{stdout}");
}

#[test]
fn flow_then_eval_reproduces_in_memory_epe() {
    let dir = tmpdir("eval-roundtrip");
    run(&[
        "synth",
        "--kind",
        "translate",
        "--size",
        "32",
        "--mag",
        "2",
        "--seed",
        "5",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    let eval = run(&[
        "eval",
        "--pairs",
        dir.join("d/pairs.txt").to_str().unwrap(),
        "--scales",
        "2",
        "--warps",
        "2",
        "--iters",
        "10",
    ]);
    assert_code(&eval, 0);
    let printed = String::from_utf8_lossy(&eval.stdout);
    let printed_epe: f64 = printed
        .lines()
        .find(|l| l.starts_with("frame0.pgm"))
        .and_then(|l| l.split_whitespace().last())
        .unwrap()
        .parse()
        .unwrap();

    // The same computation through the library.
    let i0 = tvflow_core::io::read_image(dir.join("d/frame0.pgm")).unwrap();
    let i1 = tvflow_core::io::read_image(dir.join("d/frame1.pgm")).unwrap();
    let gt = tvflow_core::io::read_flo(dir.join("d/gt.flo")).unwrap();
    let cfg = tvflow_core::SolverConfig {
        n_scales: 2,
        n_warps: 2,
        n_iters: 10,
        ..Default::default()
    };
    let flow =
        tvflow_core::solve_multiscale(&i0, &i1, &cfg, &tvflow_core::TrainableParams::default())
            .unwrap();
    let mask = tvflow_core::io::unknown_mask(&gt);
    let direct = tvflow_core::epe(&flow, &gt, Some(&mask)).unwrap().value;
    assert!(
        (direct - printed_epe).abs() <= 5e-4,
        "printed {printed_epe} vs direct {direct}"
    );
}

#[test]
fn train_with_zero_learning_rate_preserves_params_bytes() {
    let dir = tmpdir("train-lr0");
    run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "16",
        "--mag",
        "1",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    let first = dir.join("first.bin");
    assert_code(
        &run(&[
            "train",
            "--pairs",
            dir.join("d/pairs.txt").to_str().unwrap(),
            "--mode",
            "all",
            "--lr",
            "0.02",
            "--iters",
            "2",
            "-o",
            first.to_str().unwrap(),
            "--scales",
            "1",
            "--warps",
            "1",
            "--solver-iters",
            "4",
        ]),
        0,
    );
    let second = dir.join("second.bin");
    assert_code(
        &run(&[
            "train",
            "--pairs",
            dir.join("d/pairs.txt").to_str().unwrap(),
            "--mode",
            "all",
            "--lr",
            "0",
            "--iters",
            "3",
            "-o",
            second.to_str().unwrap(),
            "--params",
            first.to_str().unwrap(),
            "--scales",
            "1",
            "--warps",
            "1",
            "--solver-iters",
            "4",
        ]),
        0,
    );
    assert_eq!(fs::read(&first).unwrap(), fs::read(&second).unwrap());
}

#[test]
fn config_file_applies_and_flags_override() {
    let dir = tmpdir("config");
    run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "16",
        "--mag",
        "0",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    fs::write(dir.join("solver.cfg"), "scales = 1\nwarps = 1\niters = 3\n").unwrap();
    let ok = run(&[
        "flow",
        dir.join("d/frame0.pgm").to_str().unwrap(),
        dir.join("d/frame1.pgm").to_str().unwrap(),
        "-o",
        dir.join("a.flo").to_str().unwrap(),
        "--config",
        dir.join("solver.cfg").to_str().unwrap(),
    ]);
    assert_code(&ok, 0);

    fs::write(dir.join("bad.cfg"), "unknown_knob = 1\n").unwrap();
    let bad = run(&[
        "flow",
        dir.join("d/frame0.pgm").to_str().unwrap(),
        dir.join("d/frame1.pgm").to_str().unwrap(),
        "-o",
        dir.join("b.flo").to_str().unwrap(),
        "--config",
        dir.join("bad.cfg").to_str().unwrap(),
    ]);
    assert_code(&bad, 1);
}

#[test]
fn exit_codes_for_usage_io_and_format_errors() {
    let dir = tmpdir("exit-codes");
    // Unknown flag: usage error.
    assert_code(&run(&["flow", "--bogus"]), 1);
    // Missing input file: I/O error.
    assert_code(
        &run(&[
            "flow",
            dir.join("missing0.pgm").to_str().unwrap(),
            dir.join("missing1.pgm").to_str().unwrap(),
            "-o",
            dir.join("x.flo").to_str().unwrap(),
        ]),
        2,
    );
    // Corrupt ground-truth flow: format error.
    run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "16",
        "--mag",
        "0",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    fs::write(dir.join("d/gt.flo"), b"XXXX garbage").unwrap();
    let eval = run(&[
        "eval",
        "--pairs",
        dir.join("d/pairs.txt").to_str().unwrap(),
        "--scales",
        "1",
        "--warps",
        "1",
        "--iters",
        "2",
    ]);
    assert_code(&eval, 2);
}

#[test]
fn diverging_training_exits_with_numerical_failure_code() {
    let dir = tmpdir("blowup");
    run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "16",
        "--mag",
        "1",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    let out = run(&[
        "train",
        "--pairs",
        dir.join("d/pairs.txt").to_str().unwrap(),
        "--mode",
        "all",
        "--lr",
        "1e155",
        "--iters",
        "5",
        "-o",
        dir.join("p.bin").to_str().unwrap(),
        "--scales",
        "1",
        "--warps",
        "1",
        "--solver-iters",
        "3",
    ]);
    assert_code(&out, 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("non-finite loss"));
}

#[test]
fn viz_writes_a_valid_ppm() {
    let dir = tmpdir("viz");
    run(&[
        "synth",
        "--kind",
        "rotate",
        "--size",
        "24",
        "--mag",
        "2",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    let viz = dir.join("flow.ppm");
    assert_code(
        &run(&[
            "flow",
            dir.join("d/frame0.pgm").to_str().unwrap(),
            dir.join("d/frame1.pgm").to_str().unwrap(),
            "-o",
            dir.join("f.flo").to_str().unwrap(),
            "--viz",
            viz.to_str().unwrap(),
            "--scales",
            "1",
            "--warps",
            "1",
            "--iters",
            "5",
        ]),
        0,
    );
    let bytes = fs::read(&viz).unwrap();
    assert!(bytes.starts_with(b"P6\n24 24\n255\n"));
    assert_eq!(bytes.len(), 13 + 24 * 24 * 3);
}

#[test]
fn bench_reports_throughput() {
    let dir = tmpdir("bench");
    run(&[
        "synth",
        "--kind",
        "blob_translate",
        "--size",
        "16",
        "--mag",
        "1",
        "-o",
        dir.join("d").to_str().unwrap(),
    ]);
    let out = run(&[
        "bench",
        dir.join("d/frame0.pgm").to_str().unwrap(),
        dir.join("d/frame1.pgm").to_str().unwrap(),
        "--repeat",
        "2",
        "--scales",
        "1",
        "--warps",
        "1",
        "--iters",
        "5",
    ]);
    assert_code(&out, 0);
    assert!(String::from_utf8_lossy(&out.stdout).contains("frames/s"));
}
