use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_occrender"));
    c.env_remove("OCCRENDER_WORKERS");
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
    serde_json::from_slice(&out.stdout).expect("json report")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

// one default scene shared by every test in this binary
fn dataset() -> &'static Path {
    static DIR: OnceLock<(tempfile::TempDir, PathBuf)> = OnceLock::new();
    &DIR.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().join("scene");
        let report = ok_json(&["gen-scene", "--out", s(&dir), "--seed", "5"]);
        assert_eq!(report["label_pairs"], 42);
        (tmp, dir)
    })
    .1
}

const FAST: &[&str] = &[
    "--set",
    "raypool.rays_per_batch=128",
    "--set",
    "trainer.eval_every=0",
];

fn train(out: &Path, extra: &[&str]) -> Value {
    let mut args = vec!["train", "--data", s(dataset()), "--out", s(out)];
    args.extend_from_slice(FAST);
    args.extend_from_slice(extra);
    ok_json(&args)
}

#[test]
fn gen_scene_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let again = tmp.path().join("again");
    ok_json(&["gen-scene", "--out", s(&again), "--seed", "5"]);
    for rel in [
        "manifest.json",
        "occ/frame_003.occ",
        "labels/frame_002_cam_4_sem.pgm",
        "labels/frame_006_cam_1_depth.pgm",
    ] {
        let a = std::fs::read(dataset().join(rel)).unwrap();
        let b = std::fs::read(again.join(rel)).unwrap();
        assert!(a == b, "{rel} differs");
    }
    let info = ok_json(&["info", "--file", s(dataset())]);
    assert_eq!(info["kind"], "dataset");
    assert_eq!(info["frames"], 7);
}

#[test]
fn missing_spec_exits_with_code_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "gen-scene",
        "--spec",
        s(&tmp.path().join("nope.json")),
        "--out",
        s(tmp.path()),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn zero_iterations_write_the_initial_field() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let r = train(&out, &["--iterations", "0", "--set", "raypool.m_aux=2"]);
    assert_eq!(r["iterations"], 0);
    let cfg: Value =
        serde_json::from_slice(&std::fs::read(out.join("config.json")).unwrap()).unwrap();
    assert_eq!(cfg["raypool"]["m_aux"], 2);
    let info = ok_json(&["info", "--file", s(&out.join("field.sdf"))]);
    assert_eq!(info["kind"], "field");
    // every voxel carries the same initial density, so extraction is uniform
    let occ = tmp.path().join("all.occ");
    let rep = ok_json(&[
        "extract-occ",
        "--field",
        s(&out.join("field.sdf")),
        "--tau",
        "0",
        "--out",
        s(&occ),
    ]);
    let grid = ok_json(&["info", "--file", s(&occ)]);
    assert_eq!(grid["kind"], "occupancy");
    assert_eq!(rep["empty"], 0);
}

#[test]
fn resumed_run_matches_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let half = tmp.path().join("half");
    let ckpt = ["--set", "trainer.checkpoint_every=3"];
    train(&full, &[&["--iterations", "6"][..], &ckpt[..]].concat());
    train(&half, &[&["--iterations", "3"][..], &ckpt[..]].concat());
    let resumed = tmp.path().join("resumed");
    let from = half.join("checkpoints/iter_000003.ckpt");
    train(&resumed, &["--iterations", "6", "--resume", s(&from)]);
    let a = std::fs::read(full.join("field.sdf")).unwrap();
    let b = std::fs::read(resumed.join("field.sdf")).unwrap();
    assert!(a == b, "resumed field differs");
}

#[test]
fn eval_of_identical_grids_is_perfect() {
    let gt = dataset().join("occ/frame_003.occ");
    let r = ok_json(&["eval", "--pred", s(&gt), "--gt", s(&gt)]);
    assert_eq!(r["miou"], 1.0);
}

#[test]
fn gradient_check_passes() {
    let r = ok_json(&["check-grad"]);
    assert_eq!(r["passed"], true);
}

#[test]
fn schema_and_help_list_every_key() {
    let schema = run(&["config-schema"]);
    assert!(schema.status.success());
    let help = String::from_utf8(run(&["--help"]).stdout).unwrap();
    let text = String::from_utf8(schema.stdout).unwrap();
    for key in [
        "raypool.m_aux",
        "raypool.rays_per_batch",
        "loss.w_depth",
        "trainer.learning_rate",
        "render.sampler",
        "field.tau",
        "raypool.lambda_s",
    ] {
        assert!(text.contains(key), "schema lacks {key}");
        assert!(help.contains(key), "help lacks {key}");
    }
}

#[test]
fn unknown_override_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = run(&[
        "train",
        "--data",
        s(dataset()),
        "--out",
        s(tmp.path()),
        "--set",
        "raypool.bogus=1",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn corrupted_files_exit_with_code_4() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.sdf");
    std::fs::write(&bad, b"SDF1 truncated").unwrap();
    let occ = tmp.path().join("x.occ");
    let out = run(&["extract-occ", "--field", s(&bad), "--out", s(&occ)]);
    assert_eq!(out.status.code(), Some(4));
    let out = run(&["info", "--file", s(&bad)]);
    assert_eq!(out.status.code(), Some(4));
}
