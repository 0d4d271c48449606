use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phase-deblur"));
    c.env_remove("RUST_LOG").env_remove("PHASE_DEBLUR_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn ok_json(args: &[&str]) -> Value {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn p(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

/// Synthesizes `b.png`, `s.png` and `k.txt` in a fresh directory.
fn synth_pair(size: &str, length: &str, angle: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let d = dir.path().to_path_buf();
    ok_json(&[
        "synth",
        "--out-blurred",
        &p(&d, "b.png"),
        "--out-sharp",
        &p(&d, "s.png"),
        "--out-kernel",
        &p(&d, "k.txt"),
        "--size",
        size,
        "--seed",
        "1",
        "--length",
        length,
        "--angle",
        angle,
    ]);
    (dir, d)
}

fn psnr(result: &str, reference: &str) -> f64 {
    ok_json(&["eval", result, reference, "--border", "16"])["psnr_db"]
        .as_f64()
        .unwrap()
}

#[test]
fn estimate_kernel_reports_twenty_px_ten_degree_motion() {
    let (_dir, d) = synth_pair("256", "20", "10");
    let report = ok_json(&[
        "estimate-kernel",
        &p(&d, "b.png"),
        &p(&d, "e.txt"),
        "--dump-spectrum",
        &p(&d, "spec.png"),
    ]);
    let angle = report["angle"].as_f64().unwrap();
    let magnitude = report["magnitude"].as_f64().unwrap();
    assert!((7.0..=13.0).contains(&angle), "{report}");
    assert!((18.5..=21.5).contains(&magnitude), "{report}");
    assert_eq!(report["confidence"], "high");
    let text = std::fs::read_to_string(d.join("e.txt")).unwrap();
    let k = phase_deblur::kernel::Kernel::from_text(&text).unwrap();
    assert!((k.sum() - 1.0).abs() < 1e-9);
    assert!(d.join("spec.png").exists());
}

#[test]
fn constant_input_exits_3() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let flat = phase_deblur::image::Image::filled(64, 64, 0.5);
    phase_deblur::io::write_image(&flat, d.join("flat.png"), phase_deblur::io::BitDepth::Eight)
        .unwrap();
    let out = run(&["estimate-kernel", &p(d, "flat.png"), &p(d, "k.txt")]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(out.stdout.is_empty());
}

#[test]
fn missing_input_exits_2() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "deblur",
        &p(dir.path(), "nope.png"),
        &p(dir.path(), "o.png"),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_dimension_mismatch_exits_4() {
    let (_a, da) = synth_pair("64", "5", "0");
    let (_b, db) = synth_pair("96", "5", "0");
    let out = run(&["eval", &p(&da, "s.png"), &p(&db, "s.png")]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn eval_identical_images_caps_psnr() {
    let (_dir, d) = synth_pair("64", "5", "0");
    let r = ok_json(&[
        "eval",
        &p(&d, "s.png"),
        &p(&d, "s.png"),
        "--image-id",
        "same",
    ]);
    assert_eq!(r["psnr_db"].as_f64(), Some(99.0));
    assert_eq!(r["ssim"].as_f64(), Some(1.0));
    assert_eq!(r["image_id"], "same");
    let schema: phase_deblur::metrics::ReportJson = serde_json::from_value(r).unwrap();
    assert_eq!(schema.ssd, 0.0);
}

#[test]
fn error_ratio_of_ground_truth_is_one() {
    let (_dir, d) = synth_pair("96", "9", "30");
    let k = p(&d, "k.txt");
    let r = ok_json(&[
        "eval",
        &p(&d, "s.png"),
        &p(&d, "s.png"),
        "--gt-kernel",
        &k,
        "--est-kernel",
        &k,
        "--blurry",
        &p(&d, "b.png"),
    ]);
    assert_eq!(r["error_ratio"].as_f64(), Some(1.0));
}

#[test]
fn known_and_blind_deblurring_beat_the_input() {
    let (_dir, d) = synth_pair("256", "15", "45");
    let (b, s) = (p(&d, "b.png"), p(&d, "s.png"));
    let blurry = psnr(&b, &s);

    let known = p(&d, "known.png");
    let r = ok_json(&[
        "deblur",
        &b,
        &known,
        "--kernel",
        &p(&d, "k.txt"),
        "--no-pad",
    ]);
    assert_eq!(r["mode"], "non_blind");
    assert!(psnr(&known, &s) >= blurry + 3.0);

    let blind = p(&d, "blind.png");
    let trace = p(&d, "trace.json");
    let r = ok_json(&[
        "deblur",
        &b,
        &blind,
        "--no-pad",
        "--trace",
        &trace,
        "--kernel-out",
        &p(&d, "ko.txt"),
    ]);
    assert_eq!(r["mode"], "uniform");
    assert!(psnr(&blind, &s) >= blurry + 2.0);
    let rows: Vec<Value> = serde_json::from_str(&std::fs::read_to_string(trace).unwrap()).unwrap();
    assert!(!rows.is_empty());
    for key in [
        "level",
        "iteration",
        "energy",
        "data_term",
        "kernel_term",
        "gradient_term",
    ] {
        assert!(rows[0].get(key).is_some(), "missing {key}");
    }
    assert!(d.join("ko.txt").exists());
}

#[test]
fn single_cell_grid_output_is_bit_identical() {
    let (_dir, d) = synth_pair("96", "7", "20");
    let b = p(&d, "b.png");
    ok_json(&["deblur", &b, &p(&d, "u.png")]);
    let r = ok_json(&["deblur", &b, &p(&d, "g.png"), "--grid", "1x1"]);
    assert_eq!(r["mode"], "non_uniform");
    assert_eq!(
        std::fs::read(d.join("u.png")).unwrap(),
        std::fs::read(d.join("g.png")).unwrap()
    );
}

#[test]
fn outputs_are_deterministic() {
    let (_dir, d) = synth_pair("96", "9", "60");
    let b = p(&d, "b.png");
    let first = run(&[
        "deblur",
        &b,
        &p(&d, "o1.png"),
        "--kernel-out",
        &p(&d, "k1.txt"),
    ]);
    let second = run(&[
        "deblur",
        &b,
        &p(&d, "o2.png"),
        "--kernel-out",
        &p(&d, "k2.txt"),
    ]);
    assert!(first.status.success() && second.status.success());
    assert_eq!(first.stdout, second.stdout);
    for (a, c) in [("o1.png", "o2.png"), ("k1.txt", "k2.txt")] {
        assert_eq!(
            std::fs::read(d.join(a)).unwrap(),
            std::fs::read(d.join(c)).unwrap()
        );
    }
}

#[test]
fn depth_flag_selects_bit_depth() {
    let (_dir, d) = synth_pair("64", "5", "0");
    let b = p(&d, "b.png");
    ok_json(&[
        "deblur",
        &b,
        &p(&d, "o8.png"),
        "--depth",
        "8",
        "--iters",
        "1",
    ]);
    ok_json(&["deblur", &b, &p(&d, "o16.png"), "--iters", "1"]);
    let bit_depth = |name: &str| {
        let bytes = std::fs::read(d.join(name)).unwrap();
        bytes[24]
    };
    assert_eq!(bit_depth("o8.png"), 8);
    assert_eq!(bit_depth("o16.png"), 16);
}

#[test]
fn config_file_supplies_paths_and_rejects_unknown_keys() {
    let (_dir, d) = synth_pair("64", "5", "0");
    let cfg = d.join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "input = {:?}\noutput = {:?}\ndepth = 8\n[deblur]\nouter_iters = 1\n",
            p(&d, "b.png"),
            p(&d, "c.png")
        ),
    )
    .unwrap();
    ok_json(&["deblur", "--config", &cfg.to_string_lossy()]);
    assert!(d.join("c.png").exists());

    std::fs::write(&cfg, "[deblur]\nmu7 = 1\n").unwrap();
    let out = run(&["deblur", "--config", &cfg.to_string_lossy()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn invalid_parameters_fail_cleanly() {
    let (_dir, d) = synth_pair("64", "5", "0");
    let out = run(&["deblur", &p(&d, "b.png"), &p(&d, "o.png"), "--epsilon", "3"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(out.stdout.is_empty());
    assert!(!out.stderr.is_empty());
}

#[test]
fn help_shows_library_defaults() {
    let out = run(&["deblur", "--help"]);
    let help = String::from_utf8(out.stdout).unwrap();
    let d = phase_deblur::optimizer::DeblurParams::default();
    assert!(help.contains(&format!("[default: {}]", d.mu1)));
    assert!(help.contains(&format!("[default: {}]", d.mu2)));
    assert!(help.contains(&format!("[default: {}]", d.epsilon)));
}
