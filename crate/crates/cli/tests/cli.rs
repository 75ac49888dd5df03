use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use egoscene::io::read_ply;
use egoscene::optimizer::contact_energy;
use egoscene::synth::Manifest;
use egoscene::Pose;
use serde_json::Value;

fn egoscene(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_egoscene"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = egoscene(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn generate(dir: &Path, frames: usize) {
    ok(&["generate", "--out", path(dir), "--frames", &frames.to_string(), "--seed", "7", "--image-size", "128"]);
}

#[test]
fn generate_writes_a_manifest_into_a_new_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("nested/a"), tmp.path().join("b"));
    let printed = ok(&["generate", "--out", path(&a), "--frames", "5", "--seed", "7"]);
    assert_eq!(printed.trim(), path(&a.join("manifest.json")));
    let manifest = Manifest::read(a.join("manifest.json")).unwrap();
    assert_eq!(manifest.frames.len(), 5);
    ok(&["generate", "--out", path(&b), "--frames", "5", "--seed", "7"]);
    assert_eq!(fs::read(a.join("manifest.json")).unwrap(), fs::read(b.join("manifest.json")).unwrap());
}

#[test]
fn flags_override_the_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("cfg.json");
    let data = tmp.path().join("data");
    fs::write(&cfg, format!(r#"{{"frames": 2, "image_size": 96, "output": {:?}}}"#, path(&data))).unwrap();
    ok(&["--config", path(&cfg), "generate"]);
    assert_eq!(Manifest::read(data.join("manifest.json")).unwrap().frames.len(), 2);
    ok(&["--config", path(&cfg), "generate", "--frames", "3"]);
    let manifest = Manifest::read(data.join("manifest.json")).unwrap();
    assert_eq!((manifest.frames.len(), manifest.image_size), (3, 96));

    fs::write(&cfg, r#"{"frams": 2}"#).unwrap();
    assert!(!egoscene(&["--config", path(&cfg), "generate"]).status.success());
}

fn report(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn run_scores_every_frame() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 5);
    let out = tmp.path().join("run");
    ok(&["run", "--dataset", path(&data), "--out", path(&out), "--visualize"]);
    let r = report(&out);
    let frames = r["frames"].as_array().unwrap();
    assert_eq!(frames.len(), 5);
    let bound = 2.4 / 64.0 * 1000.0;
    for f in frames {
        assert!(f["error"].is_null());
        assert!(f["mpjpe_mm"].as_f64().unwrap() <= bound, "{f}");
        let id = f["frame"].as_str().unwrap();
        assert!(out.join(format!("vis/{id}_masked.pgm")).is_file());
        assert!(out.join(format!("vis/{id}_scene.pgm")).is_file());
    }
    assert_eq!(r["summary"]["contact_pct"].as_f64(), Some(100.0));
    let csv = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 6);

    let raw = tmp.path().join("raw");
    ok(&["run", "--dataset", path(&data), "--out", path(&raw), "--no-inpaint"]);
    let raw = report(&raw);
    for (a, b) in frames.iter().zip(raw["frames"].as_array().unwrap()) {
        assert!(b["abs_rel_body"].as_f64().unwrap() > a["abs_rel_body"].as_f64().unwrap());
    }
}

#[test]
fn run_reports_broken_frames_and_exits_nonzero() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 2);
    let manifest = Manifest::read(data.join("manifest.json")).unwrap();
    fs::remove_file(data.join(&manifest.frames[1].depth_body)).unwrap();
    let out = tmp.path().join("run");
    let result = egoscene(&["run", "--dataset", path(&data), "--out", path(&out)]);
    assert_eq!(result.status.code(), Some(2));
    let r = report(&out);
    assert!(r["frames"][0]["error"].is_null());
    assert!(r["frames"][1]["error"].is_string());
    assert_eq!(r["summary"]["failed_frames"].as_u64(), Some(1));
    assert!(!egoscene(&["run", "--dataset", path(&tmp.path().join("missing")), "--out", path(&out)]).status.success());
}

#[test]
fn optimize_pulls_a_floating_pose_onto_the_floor() {
    let tmp = tempfile::tempdir().unwrap();
    let fx = tmp.path().join("fixture");
    ok(&["fixture", "--float-height", "0.03", "--out", path(&fx)]);
    let out = tmp.path().join("opt");
    let files = ["init_pose.json", "detections.json", "cloud.ply", "calibration.json"].map(|f| fx.join(f));
    let base = [
        "optimize",
        "--pose",
        path(&files[0]),
        "--detections",
        path(&files[1]),
        "--cloud",
        path(&files[2]),
        "--calibration",
        path(&files[3]),
        "--out",
        path(&out),
    ];
    ok(&base);
    let cloud = read_ply(fx.join("cloud.ply")).unwrap();
    let init = Pose::read(fx.join("init_pose.json")).unwrap();
    let fin = Pose::read(out.join("pose.json")).unwrap();
    assert!(contact_energy(&fin, &cloud, 0.05).unwrap() < contact_energy(&init, &cloud, 0.05).unwrap());

    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let rows: Vec<&str> = trace.lines().skip(1).collect();
    assert_eq!(trace.lines().next(), Some("iteration,total,reprojection,prior,contact"));
    let totals: Vec<f64> = rows.iter().map(|r| r.split(',').nth(1).unwrap().parse().unwrap()).collect();
    assert!(totals.windows(2).all(|w| w[1] < w[0]));
    let last_iteration: usize = rows.last().unwrap().split(',').next().unwrap().parse().unwrap();
    assert_eq!(rows.len(), last_iteration + 1);

    let mut capped = base.to_vec();
    capped.extend(["--max-iters", "3"]);
    ok(&capped);
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 1 + 3 + 1);

    let mut zero = base.to_vec();
    zero.extend(["--max-iters", "0"]);
    assert!(!egoscene(&zero).status.success());
}

#[test]
fn inpaint_and_eval_commands() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    generate(&data, 1);
    let manifest = Manifest::read(data.join("manifest.json")).unwrap();
    let frame = &manifest.frames[0];
    let filled = tmp.path().join("out/filled.bin");
    ok(&["inpaint", "--depth", path(&data.join(&frame.depth_body)), "--mask", path(&data.join(&frame.mask)), "--out", path(&filled)]);
    assert!(filled.is_file());

    let gt = data.join(&frame.pose);
    let json = ok(&[
        "eval",
        "--pred",
        path(&gt),
        "--gt",
        path(&gt),
        "--scene-depth",
        path(&data.join(&frame.depth_scene)),
        "--calibration",
        path(&data.join(&manifest.calibration)),
    ]);
    let v: Value = serde_json::from_str(&json).unwrap();
    assert_eq!(v["mpjpe_mm"].as_f64(), Some(0.0));
    assert_eq!(v["penetration_free"].as_bool(), Some(true));
    assert!(v["contact"].is_null());
}
