use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ddcnet::flow_io::{read_flo, write_flo, FlowField, RgbImage};
use ddcnet::model::{save_checkpoint, ModelConfig, ModelParams};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ddcnet"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn ddcnet")
}

fn tmp(name: &str) -> PathBuf {
    let d = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("cli").join(name);
    let _ = fs::remove_dir_all(&d);
    fs::create_dir_all(&d).unwrap();
    d
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn error_json(out: &Output) -> serde_json::Value {
    let stderr = String::from_utf8_lossy(&out.stderr);
    let line = stderr.lines().last().expect("an error line");
    serde_json::from_str(line).unwrap_or_else(|_| panic!("not JSON: {line}"))
}

fn datagen(dir: &Path, extra: &[&str]) {
    let mut args = vec!["datagen", "--out", s(dir), "--count", "4", "--size", "16"];
    args.extend_from_slice(extra);
    if !extra.contains(&"--max-disp") {
        args.extend(["--max-disp", "2"]);
    }
    assert_ok(&run(&args));
}

fn compact_checkpoint(path: &Path) {
    let cfg = ModelConfig::compact(2, 4);
    fs::write(path, save_checkpoint(&cfg, &ModelParams::init(&cfg, 0)).unwrap()).unwrap();
}

#[test]
fn identity_datagen_writes_zero_flow() {
    let d = tmp("identity");
    datagen(&d, &["--max-disp", "0", "--max-rot", "0", "--scale-jitter", "0"]);
    for i in 0..4 {
        let f = read_flo(&fs::read(d.join(format!("{i:05}_flow.flo"))).unwrap()).unwrap();
        assert!(f.uv().iter().all(|&v| v == 0.0));
        let a = fs::read(d.join(format!("{i:05}_img1.png"))).unwrap();
        let b = fs::read(d.join(format!("{i:05}_img2.png"))).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn datagen_is_reproducible() {
    let (a, b) = (tmp("repro_a"), tmp("repro_b"));
    datagen(&a, &["--seed", "7"]);
    datagen(&b, &["--seed", "7"]);
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert!(names.len() >= 16);
    for n in names {
        assert_eq!(fs::read(a.join(&n)).unwrap(), fs::read(b.join(&n)).unwrap(), "{n:?}");
    }
}

#[test]
fn missing_data_is_a_clean_data_error() {
    let d = tmp("missing");
    let out = run(&["train", "--data", s(&d.join("nope")), "--out", s(&d.join("m.ckpt"))]);
    assert_eq!(out.status.code(), Some(3));
    let e = error_json(&out);
    assert_eq!(e["error"], "data");
    assert_eq!(e["exit_code"], 3);
    assert!(!d.join("m.ckpt").exists());
}

#[test]
fn corrupt_checkpoint_is_rejected() {
    let d = tmp("corrupt");
    fs::write(d.join("bad.ckpt"), b"DDCMxxxx").unwrap();
    RgbImage::filled(8, 8, 0.5).save_png(d.join("a.png")).unwrap();
    let out = run(&[
        "infer", "--ckpt", s(&d.join("bad.ckpt")), "--img1", s(&d.join("a.png")), "--img2", s(&d.join("a.png")),
        "--out", s(&d.join("o.flo")),
    ]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(error_json(&out)["error"], "data");
}

#[test]
fn usage_errors_exit_2() {
    let out = run(&["train"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(error_json(&out)["error"], "usage");
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert!(run(&["--help"]).status.success());
}

#[test]
fn viz_of_zero_flow_is_white() {
    let d = tmp("viz");
    fs::write(d.join("z.flo"), write_flo(&FlowField::zeros(5, 7))).unwrap();
    assert_ok(&run(&["viz", "--flow", s(&d.join("z.flo")), "--out", s(&d.join("z.png"))]));
    let img = image::open(d.join("z.png")).unwrap().to_rgb8();
    assert_eq!(img.dimensions(), (7, 5));
    assert!(img.pixels().all(|p| p.0 == [255, 255, 255]));
}

#[test]
fn eval_of_ground_truth_scores_zero() {
    let d = tmp("eval");
    datagen(&d, &[]);
    let report = d.join("report.json");
    let out = run(&["eval", "--pred", s(&d), "--data", s(&d), "--report", s(&report)]);
    assert_ok(&out);
    let r: serde_json::Value = serde_json::from_slice(&fs::read(report).unwrap()).unwrap();
    assert_eq!(r["aee"], 0.0);
    assert_eq!(r["fl_all"], 0.0);
    assert_eq!(r["per_sample"].as_array().unwrap().len(), 4);
}

#[test]
fn infer_pads_odd_sizes_and_crops_back() {
    let d = tmp("infer");
    let ckpt = d.join("m.ckpt");
    compact_checkpoint(&ckpt);
    let img = RgbImage::new(18, 14, (0..3 * 18 * 14).map(|i| (i % 11) as f32 / 10.0).collect()).unwrap();
    img.save_png(d.join("a.png")).unwrap();
    img.save_png(d.join("b.png")).unwrap();
    let out = run(&[
        "infer", "--ckpt", s(&ckpt), "--img1", s(&d.join("a.png")), "--img2", s(&d.join("b.png")),
        "--out", s(&d.join("o.flo")), "--viz", s(&d.join("o.png")),
    ]);
    assert_ok(&out);
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let f = read_flo(&fs::read(d.join("o.flo")).unwrap()).unwrap();
    assert_eq!((f.h, f.w), (18, 14));
    assert!(d.join("o.png").exists());
}

#[test]
fn erf_writes_maps_profiles_and_summary() {
    let d = tmp("erf");
    let ckpt = d.join("m.ckpt");
    compact_checkpoint(&ckpt);
    let out_dir = d.join("out");
    let out = run(&["erf", "--ckpt", s(&ckpt), "--out", s(&out_dir), "--size", "32", "--samples", "2", "--max-disp", "2"]);
    assert_ok(&out);
    for stage in ["coarsest", "fine", "finest"] {
        assert!(out_dir.join(format!("erf_{stage}.png")).exists());
        assert!(out_dir.join(format!("erf_{stage}_profile.csv")).exists());
    }
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out_dir.join("erf_summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 3);
}

fn train_args<'a>(data: &'a str, model: &'a str, config: &'a str, out: &'a str) -> Vec<&'a str> {
    vec!["train", "--data", data, "--model", model, "--config", config, "--out", out]
}

#[test]
fn train_then_resume_matches_a_single_run() {
    let d = tmp("train");
    let data = d.join("data");
    datagen(&data, &[]);
    let model = d.join("model.json");
    fs::write(&model, serde_json::to_vec(&ModelConfig::compact(2, 4)).unwrap()).unwrap();
    let config = d.join("train.json");
    fs::write(&config, r#"{"batch_size": 2, "max_iters": 6, "eval_every": 3, "augment": null}"#).unwrap();

    let whole = d.join("whole.ckpt");
    assert_ok(&run(&train_args(s(&data), s(&model), s(&config), s(&whole))));

    // the first leg stops at 3; the resumed leg reads batch size and the rest from the saved state
    let split = d.join("split.ckpt");
    let mut first = train_args(s(&data), s(&model), s(&config), s(&split));
    first.extend(["--max-iters", "3"]);
    assert_ok(&run(&first));
    let out = run(&["train", "--data", s(&data), "--out", s(&split), "--resume", "--max-iters", "6"]);
    assert_ok(&out);
    let summary: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(summary["iters"], 6);

    assert_eq!(fs::read(&whole).unwrap(), fs::read(&split).unwrap());
    let log = |p: &Path| fs::read_to_string(p.with_extension("ckpt.csv")).unwrap();
    assert_eq!(log(&whole), log(&split));
    assert_eq!(log(&split).lines().filter(|l| l.starts_with("iter")).count(), 1);
}
