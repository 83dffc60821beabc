use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn tps(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tps")).args(args).output().expect("binary runs")
}

const SMALL: &[&str] = &[
    "--set", "synth.num_identities=8",
    "--set", "synth.num_scenes=16",
    "--set", "train.epochs=2",
    "--set", "train.guide_warmup=1",
    "--set", "train.ids_per_batch=4",
];

#[test]
fn gradcheck_exits_zero() {
    let out = tps(&["gradcheck"]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("composite"));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let out = tps(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = tps(&["eval", "--run", "/nonexistent/run"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
}

#[test]
fn bad_override_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = tps(&["train", "--out", run.to_str().unwrap(), "--set", "train.nope=1"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(!run.join("checkpoint.bin").exists());
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(dir.join("eval_report.json")).unwrap()).unwrap()
}

#[test]
fn train_then_eval_writes_a_full_report() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut args = vec!["train", "--out", run.to_str().unwrap()];
    args.extend_from_slice(SMALL);
    let out = tps(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["config.json", "checkpoint.bin", "train_log.csv"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }

    let out = tps(&["eval", "--run", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let r = report(&run);
    for key in [
        "map", "cmc", "num_queries", "num_valid_queries", "excluded_queries", "gallery_size",
        "detector", "protocol", "per_query",
    ] {
        assert!(r.get(key).is_some(), "report lacks {key}");
    }
    let map = r["map"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&map));
    let ranks: Vec<u64> = r["cmc"].as_array().unwrap().iter().map(|p| p["rank"].as_u64().unwrap()).collect();
    assert_eq!(ranks, [1, 5, 10]);
    assert!(run.join("rankings.csv").is_file());

    // the sequential path writes the same report
    let seq = dir.path().join("seq");
    let out = tps(&["--sequential", "eval", "--run", run.to_str().unwrap(), "--out", seq.to_str().unwrap()]);
    assert!(out.status.success());
    assert_eq!(report(&seq), r);

    let out = tps(&["rank", "--run", run.to_str().unwrap(), "--query", "red shirt", "--top", "3"]);
    let text = String::from_utf8_lossy(&out.stdout);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn synth_then_validate() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus");
    let mut args = vec!["synth", "--out", corpus.to_str().unwrap()];
    args.extend_from_slice(&SMALL[..4]);
    assert!(tps(&args).status.success());
    let out = tps(&["validate", "--corpus", corpus.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let out = tps(&["validate", "--corpus", corpus.to_str().unwrap(), "--captions-per-box", "3"]);
    assert_eq!(out.status.code(), Some(1));
}
