use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn dpfg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dpfg"))
        .args(args)
        .env("DPFG_THREADS", "2")
        .output()
        .unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

const SYNTH: &[&str] = &[
    "--dataset", "synth", "--synth-count", "300", "--synth-test-count", "100", "--features", "4",
    "--classes", "3", "--steps", "12", "--eval-every", "4",
];

fn with_out<'a>(cmd: &'a str, out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut v = vec![cmd];
    v.extend_from_slice(SYNTH);
    v.extend_from_slice(&["--out", out]);
    v.extend_from_slice(extra);
    v
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn run_succeeds_with_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    let out = dpfg(&with_out("run", out_dir, &[]));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));

    let m = manifest(dir.path());
    let configs = m["spec"]["configs"].as_array().unwrap();
    let names: Vec<&str> = configs.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["clip-C1", "tanh-c1-k1"]);
    for c in configs {
        let c = &c["config"];
        assert_eq!(c["learning_rate"], 0.1);
        assert_eq!(c["noise_multiplier"], 1.1);
        assert_eq!(c["delta"], 1e-5);
        assert_eq!(c["microbatch_size"], 1);
        assert_eq!(c["steps"], 12);
    }
    assert_eq!(m["spec"]["model"]["kind"], "logreg");
    assert_eq!(m["mode"], "run");
    for f in ["clip-C1_0.csv", "tanh-c1-k1_0.csv", "summary.csv"] {
        assert!(dir.path().join(f).is_file(), "{f}");
    }
}

#[test]
fn compare_prints_table_and_replay_matches() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("first");
    let out = dpfg(&with_out(
        "compare",
        out_dir.to_str().unwrap(),
        &["--transform", "tanh", "--k", "1,10", "--seed", "0,1", "--model", "mlp", "--hidden", "8"],
    ));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("name,final_accuracy_mean"));
    assert_eq!(stdout.lines().count(), 3);

    let second = dir.path().join("second");
    let out = dpfg(&[
        "replay",
        out_dir.join("manifest.json").to_str().unwrap(),
        "--out",
        second.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["tanh-c1-k1_0.csv", "tanh-c1-k10_1.csv", "summary.csv", "compare.csv"] {
        assert_eq!(fs::read(out_dir.join(f)).unwrap(), fs::read(second.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.conf");
    fs::write(&cfg, "# sweep\ntransform = tanh\nc = 2\nsigma = 0.5, 2\nlr = 0.3\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = dpfg(&with_out(
        "run",
        out_dir.to_str().unwrap(),
        &["--config", cfg.to_str().unwrap(), "--lr", "0.05"],
    ));
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let m = manifest(&out_dir);
    let configs = m["spec"]["configs"].as_array().unwrap();
    let names: Vec<&str> = configs.iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["tanh-c2-k1-sigma0.5", "tanh-c2-k1-sigma2"]);
    assert!(configs.iter().all(|c| c["config"]["learning_rate"] == 0.05));
}

#[test]
fn invalid_specs_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().to_str().unwrap();
    for extra in [
        &["--k", "0"][..],
        &["--sigma", "-1"],
        &["--q", "1.5"],
        &["--steps", "0"],
        &["--transform", "median"],
        &["--lr", "fast"],
        &["--bogus", "1"],
    ] {
        let out = dpfg(&with_out("run", out_dir, extra));
        assert_eq!(code(&out), 1, "{extra:?}");
    }
    let cfg = dir.path().join("bad.conf");
    fs::write(&cfg, "colour = blue\n").unwrap();
    let out = dpfg(&with_out("run", out_dir, &["--config", cfg.to_str().unwrap()]));
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("colour"));

    let lonely = dpfg(&with_out("compare", out_dir, &["--transform", "clip"]));
    assert_eq!(code(&lonely), 1);
}

#[test]
fn missing_dataset_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dpfg(&[
        "run",
        "--dataset",
        "mnist",
        "--data-dir",
        dir.path().join("absent").to_str().unwrap(),
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("absent"));

    let out = dpfg(&["replay", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn epsilon_subcommand_reports_the_golden_value() {
    let out = dpfg(&["epsilon", "--q", "0.00427", "--steps", "234"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    let eps: f64 = text
        .split_whitespace()
        .find_map(|t| t.strip_prefix("epsilon="))
        .unwrap()
        .parse()
        .unwrap();
    assert!((eps - 1.0344425270865231).abs() < 1e-9, "{text}");
    assert!(text.contains("order=13"));
}

#[test]
fn help_and_version_exit_cleanly() {
    assert_eq!(code(&dpfg(&["--help"])), 0);
    assert_eq!(code(&dpfg(&["--version"])), 0);
    assert_eq!(code(&dpfg(&[])), 1);
}
