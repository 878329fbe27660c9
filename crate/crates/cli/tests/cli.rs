//! The `zoo-ood` binary: outputs, exit codes and rerun stability.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use zoo_ood::sim::{write_bundle, SynthBenchConfig};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zoo-ood"))
        .args(args)
        .output()
        .expect("run zoo-ood")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn small() -> SynthBenchConfig {
    SynthBenchConfig {
        n_train: 300,
        n_val: 1000,
        n_test: 400,
        k: 10,
        ..SynthBenchConfig::default()
    }
}

fn bundle(dir: &Path) -> PathBuf {
    write_bundle(&small(), &dir.join("bundle")).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn score_writes_one_column_per_model() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    let out = dir.path().join("scores");
    let res = run(&["--quiet", "--out", s(&out), "score", "--manifest", s(&manifest), "--split", "id_val"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let m = zoo_ood::ingest::read_matrix(out.join("scores_id_val.zfm"), true).unwrap();
    assert_eq!((m.rows(), m.cols()), (1000, 2));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("scores_id_val.json")).unwrap()).unwrap();
    assert_eq!(sidecar["columns"][0]["name"], "view_a");
    assert_eq!(sidecar["split"], "id_val");
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    let m = s(&manifest);
    let cases: Vec<Vec<&str>> = vec![
        vec!["score", "--manifest", "/nonexistent/manifest.json", "--split", "id_val"],
        vec!["score", "--manifest", m, "--split", "unknown_name"],
        vec!["bench", "--manifest", m, "--tpr0", "1.5"],
        vec!["bench", "--manifest", m, "--schemes", "fisher"],
        vec!["bench", "--manifest", m, "--ood", "test_id"],
        vec!["explain", "--manifest", m, "--ood", "shift_a", "--index", "400"],
        vec!["simulate", "mixture", "--m", "10", "--pi", "0", "--g-shape", "0.1"],
        vec!["simulate", "id-uniform", "--m", "0"],
        vec!["no-such-command"],
    ];
    for args in cases {
        let res = run(&args);
        assert_eq!(code(&res), 1, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
        assert!(!res.stderr.is_empty());
    }
}

#[test]
fn runtime_failures_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    // headers stay valid, so the manifest loads; the payload then holds a NaN
    let path = dir.path().join("bundle/view_a_shift_a.zfm");
    let mut bytes = fs::read(&path).unwrap();
    bytes[21..25].copy_from_slice(&f32::NAN.to_le_bytes());
    fs::write(&path, bytes).unwrap();
    let res = run(&["--quiet", "--out", s(dir.path()), "bench", "--manifest", s(&manifest)]);
    assert_eq!(code(&res), 2, "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn help_exits_0() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["simulate", "--help"])), 0);
}

#[test]
fn bench_accepts_imagenet_level_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    let report = dir.path().join("out/report.csv");
    let res = run(&[
        "bench", "--manifest", s(&manifest), "--tpr0", "0.935", "--schemes", "bh", "--report", s(&report),
    ]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let csv = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "method,dataset,tpr,fpr,auc");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("bh,shift_a,") && lines[3].starts_with("bh,Average,"));
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(report.with_extension("json")).unwrap()).unwrap();
    assert_eq!(json["metadata"]["tpr0"], 0.935);
    assert!(String::from_utf8_lossy(&res.stdout).contains("Average"));
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    let cfg_path = dir.path().join("synth.json");
    fs::write(&cfg_path, serde_json::to_string(&small()).unwrap()).unwrap();
    let commands: [Vec<&str>; 4] = [
        vec!["simulate", "id-uniform", "--m", "7", "--trials", "50000", "--seed", "1"],
        vec!["simulate", "mixture", "--m", "100", "--pi", "0.2", "--g-shape", "0.1", "--trials", "5000"],
        vec!["simulate", "synth", "--config", s(&cfg_path)],
        vec!["bench", "--manifest", s(&manifest), "--schemes", "bh,voting", "--singles"],
    ];
    for args in commands {
        let outputs: Vec<Vec<(String, Vec<u8>)>> = ["1", "3"]
            .iter()
            .enumerate()
            .map(|(i, threads)| {
                let out = dir.path().join(format!("{}-{i}", args[0..2].join("-")));
                let res = run(&[&["--quiet", "--threads", threads, "--out", s(&out)], &args[..]].concat());
                assert_eq!(code(&res), 0, "{args:?}: {}", String::from_utf8_lossy(&res.stderr));
                let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(&out)
                    .unwrap()
                    .map(|e| {
                        let e = e.unwrap();
                        (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
                    })
                    .collect();
                files.sort();
                files
            })
            .collect();
        assert!(!outputs[0].is_empty());
        assert_eq!(outputs[0], outputs[1], "{args:?}");
    }
}

#[test]
fn explain_names_the_solo_detector() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    // shift_b is invisible to view_a, so a detected point is view_b's alone
    let res = run(&["explain", "--manifest", s(&manifest), "--ood", "shift_b", "--index", "0"]);
    assert_eq!(code(&res), 0, "{}", String::from_utf8_lossy(&res.stderr));
    let record: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
    let attribution = &record["attribution"];
    if attribution["label"] == "OOD" {
        assert_eq!(attribution["contributors"], serde_json::json!(["view_b"]));
        assert_eq!(attribution["solo_detector"], true);
    } else {
        assert_eq!(record["summary"], "ID, no contributors");
    }
}

#[test]
fn explain_reports_id_samples() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = bundle(dir.path());
    let mut saw_id = false;
    for index in 0..20 {
        let idx = index.to_string();
        let res = run(&["explain", "--manifest", s(&manifest), "--ood", "test_id", "--index", &idx]);
        assert_eq!(code(&res), 0);
        let record: serde_json::Value = serde_json::from_slice(&res.stdout).unwrap();
        if record["attribution"]["label"] == "ID" {
            assert_eq!(record["summary"], "ID, no contributors");
            assert_eq!(record["attribution"]["contributors"], serde_json::json!([]));
            saw_id = true;
        }
    }
    assert!(saw_id);
}
