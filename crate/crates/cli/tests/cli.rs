use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use brakecast::pipeline::{self, Manifest};

fn brakecast(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_brakecast"))
        .current_dir(dir)
        .env_remove(pipeline::OUT_DIR_ENV)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let out = brakecast(dir, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

const SMALL: &str = "[synth]\ntrials = 12\n\n[predict.train]\nepochs = 30\n\n[ablation]\narms = [\"brake-only\", \"ic\"]\n";

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "7", "--out", "a"]);
    ok(d, &["synth", "--seed", "7", "--out", "b"]);
    ok(d, &["synth", "--seed", "8", "--out", "c"]);
    for f in ["trials.nbrk", "truth.nbtr"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
    assert_ne!(fs::read(d.join("a/trials.nbrk")).unwrap(), fs::read(d.join("c/trials.nbrk")).unwrap());
    let manifest = |dir: &str| Manifest::from_toml(&fs::read_to_string(d.join(dir).join("manifest.synth.toml")).unwrap()).unwrap();
    let (ma, mb) = (manifest("a"), manifest("b"));
    assert_eq!(ma.seed, 7);
    assert_eq!(ma.outputs.len(), 2);
    for (x, y) in ma.outputs.iter().zip(&mb.outputs) {
        assert_eq!(x.sha256, y.sha256);
    }
}

#[test]
fn horizon_sweep_names_planted_lag() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(d, &["synth", "--seed", "0", "--out", "s"]);
    ok(d, &["preprocess", "--input", "s/trials.nbrk", "--out", "p"]);
    ok(d, &["ica", "--epochs", "p/epochs.nbep", "--out", "i"]);
    ok(d, &["select", "--epochs", "p/epochs.nbep", "--decomposition", "i/decomposition.nbica", "--horizon", "200,300,400", "--out", "sel"]);
    let text = fs::read_to_string(d.join("sel/select_report.txt")).unwrap();
    let kv = pipeline::parse_key_values(&text).unwrap();
    assert_eq!(kv["horizon_sweep"]["argmax_horizon_ms"], "200");
    let scores = fs::read_to_string(d.join("sel/scores.csv")).unwrap();
    assert!(scores.lines().skip(1).any(|l| l.ends_with(",true")));
}

#[test]
fn pipeline_report_parses_with_ic_rmse() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("cfg.toml"), SMALL).unwrap();
    let c = ["--config", "cfg.toml"];
    let run = |rest: &[&str]| ok(d, &[&c[..], rest].concat());
    run(&["synth", "--seed", "3", "--out", "s"]);
    run(&["preprocess", "--input", "s/trials.nbrk", "--out", "p"]);
    run(&["ablate", "--epochs", "p/epochs.nbep", "--subject", "s3", "--out", "a"]);
    run(&["report", "--input", "a/reports.csv", "--out", "r"]);
    let kv = pipeline::parse_key_values(&fs::read_to_string(d.join("a/report.txt")).unwrap()).unwrap();
    assert!(kv["s3.ic"]["rmse"].parse::<f64>().unwrap() >= 0.0);
    let rows = pipeline::reports_from_csv(&fs::read_to_string(d.join("r/summary.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().any(|r| r.0 == "all" && r.1 == "ic"));
    assert!(d.join("a/models/s3/ic.nbma").is_file());
}

#[test]
fn out_dir_variable_anchors_relative_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let base = tmp.path().join("base");
    let out = Command::new(env!("CARGO_BIN_EXE_brakecast"))
        .current_dir(tmp.path())
        .env(pipeline::OUT_DIR_ENV, &base)
        .args(["synth", "--seed", "1", "--out", "x"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(base.join("x/trials.nbrk").is_file());
    assert!(!tmp.path().join("x").exists());
}

#[test]
fn failures_exit_nonzero_with_cause() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let out = brakecast(d, &["ica", "--epochs", "missing.nbep", "--out", "o"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("error[ica]") && err.contains("missing.nbep"), "{err}");

    let out = brakecast(d, &["train", "--frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    fs::write(d.join("junk.nbep"), b"not an epoch file").unwrap();
    let out = brakecast(d, &["ica", "--epochs", "junk.nbep", "--out", "o"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("byte"));

    fs::write(d.join("bad.toml"), "[select]\ntop_fraction = 2.0\n").unwrap();
    let out = brakecast(d, &["--config", "bad.toml", "synth", "--out", "o"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("error[config]"));

    ok(d, &["synth", "--seed", "2", "--out", "s"]);
    ok(d, &["preprocess", "--input", "s/trials.nbrk", "--out", "p"]);
    let out = brakecast(d, &["train", "--epochs", "p/epochs.nbep", "--arm", "icx", "--out", "t"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("icx"));
}
