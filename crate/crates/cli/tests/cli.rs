use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn segalign(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_segalign"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn json_stdout(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "exit {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("stdout is JSON")
}

fn failure_kind(out: &Output) -> String {
    let err: Value = serde_json::from_slice(&out.stderr).expect("stderr is JSON");
    err["kind"].as_str().unwrap().to_string()
}

fn write_labels(dir: &Path, name: &str, labels: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, labels.split_whitespace().collect::<Vec<_>>().join("\n")).unwrap();
    path
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Writes one synthetic instance and returns its probability and transcript paths.
fn synth_one(dir: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let out = dir.join("inst");
    let mut args = vec!["synth", "--output", path(&out), "--seed", "4"];
    args.extend_from_slice(extra);
    let written = json_stdout(&segalign(&args));
    let first = &written[0];
    let get = |k: &str| PathBuf::from(first[k].as_str().unwrap());
    (get("probs"), get("transcript"))
}

#[test]
fn missing_probability_file_is_an_io_error() {
    let out = segalign(&[
        "infer",
        "--probs",
        "/nonexistent/p.csv",
        "--transcript",
        "/nonexistent/t.txt",
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(failure_kind(&out), "io");
}

#[test]
fn bad_flags_are_usage_errors() {
    let out = segalign(&["infer", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(failure_kind(&out), "usage");
    assert!(segalign(&["--help"]).status.success());
}

// Masks are evaluated at integer frames with plateau edges on the segment
// boundaries, so a one-hot frame pair straddling a boundary is balanced when
// the real boundary sits half a frame early. Rounding then decides the
// boundary frame, and FIFA can differ from the exact decoder by a frame or
// two per boundary.
#[test]
fn both_decoders_recover_noiseless_instances() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("inst");
    let written = json_stdout(&segalign(&[
        "synth",
        "--output",
        path(&out),
        "--count",
        "10",
        "--seed",
        "40",
        "--noise-temp",
        "0",
        "--confusion-prob",
        "0",
    ]));
    for inst in written.as_array().unwrap() {
        let get = |k: &str| inst[k].as_str().unwrap().to_string();
        let result = json_stdout(&segalign(&[
            "infer",
            "--probs",
            &get("probs"),
            "--transcript",
            &get("transcript"),
            "--method",
            "both",
        ]));
        let results = result["results"].as_array().unwrap();
        assert_eq!(results.len(), 2);
        let labels = |r: &Value| -> Vec<String> { serde_json::from_value(r["labels"].clone()).unwrap() };
        let truth: Vec<String> = fs::read_to_string(get("gt"))
            .unwrap()
            .lines()
            .map(String::from)
            .collect();
        let (exact, fifa) = (labels(&results[0]), labels(&results[1]));
        assert_eq!(results[0]["method"], "exact");
        assert_eq!(exact, truth);
        let agree = exact.iter().zip(&fifa).filter(|(a, b)| a == b).count() as f64 / exact.len() as f64;
        assert!(agree >= 0.95, "{}: FIFA agrees on {agree}", get("video_id"));
    }
}

#[test]
fn zero_steps_returns_the_initial_lengths() {
    let dir = TempDir::new().unwrap();
    let (probs, transcript) = synth_one(dir.path(), &["--frames", "200", "--segments", "5"]);
    let result = json_stdout(&segalign(&[
        "infer",
        "--probs",
        path(&probs),
        "--transcript",
        path(&transcript),
        "--steps",
        "0",
        "--init",
        "equal",
    ]));
    assert_eq!(result["results"][0]["lengths"], serde_json::json!([40, 40, 40, 40, 40]));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = TempDir::new().unwrap();
    let (probs, transcript) = synth_one(dir.path(), &[]);
    let config = dir.path().join("cfg.json");
    fs::write(&config, r#"{"fifa": {"steps": 3}, "init": "equal"}"#).unwrap();
    let trace_rows = |extra: &[&str]| {
        let trace = dir.path().join("trace.csv");
        let mut args = vec![
            "infer",
            "--probs",
            path(&probs),
            "--transcript",
            path(&transcript),
            "--config",
            path(&config),
            "--trace",
            path(&trace),
        ];
        args.extend_from_slice(extra);
        json_stdout(&segalign(&args));
        fs::read_to_string(&trace).unwrap().lines().count() - 1
    };
    // The trace holds the starting point plus one row per step.
    assert_eq!(trace_rows(&[]), 4);
    assert_eq!(trace_rows(&["--steps", "7"]), 8);

    fs::write(&config, r#"{"fifa": {"stepz": 3}}"#).unwrap();
    let out = segalign(&[
        "infer",
        "--probs",
        path(&probs),
        "--transcript",
        path(&transcript),
        "--config",
        path(&config),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn trace_with_exact_method_is_rejected() {
    let dir = TempDir::new().unwrap();
    let (probs, transcript) = synth_one(dir.path(), &[]);
    let out = segalign(&[
        "infer",
        "--probs",
        path(&probs),
        "--transcript",
        path(&transcript),
        "--method",
        "exact",
        "--trace",
        path(&dir.path().join("t.csv")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(failure_kind(&out), "usage");
}

fn eval(dir: &Path, pred: &str, gt: &str) -> Value {
    let p = write_labels(dir, "pred.txt", pred);
    let g = write_labels(dir, "gt.txt", gt);
    json_stdout(&segalign(&["eval", "--pred", path(&p), "--gt", path(&g)]))
}

#[test]
fn eval_identity_disjoint_and_worked_example() {
    let dir = TempDir::new().unwrap();
    let same = eval(dir.path(), "a a b b c", "a a b b c");
    for key in ["mof", "iou", "iod", "edit", "f1_10", "f1_25", "f1_50"] {
        assert_eq!(same[key], 1.0, "{key}");
    }

    let disjoint = eval(dir.path(), "x x y y", "a a b b");
    for key in ["mof", "iou", "iod", "edit", "f1_10", "f1_25", "f1_50"] {
        assert_eq!(disjoint[key], 0.0, "{key}");
    }

    let r = eval(dir.path(), "a a a b b b b b", "a a a a b b b b");
    let close = |key: &str, want: f64| {
        let got = r[key].as_f64().unwrap();
        assert!((got - want).abs() < 1e-12, "{key}: {got} vs {want}");
    };
    close("mof", 7.0 / 8.0);
    close("iou", (3.0 / 4.0 + 4.0 / 5.0) / 2.0);
    close("iod", (1.0 + 4.0 / 5.0) / 2.0);
    close("edit", 1.0);
    close("f1_50", 1.0);
}

#[test]
fn eval_rejects_length_mismatch() {
    let dir = TempDir::new().unwrap();
    let p = write_labels(dir.path(), "pred.txt", "a a b");
    let g = write_labels(dir.path(), "gt.txt", "a a b b");
    let out = segalign(&["eval", "--pred", path(&p), "--gt", path(&g)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_is_deterministic_and_round_trips() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        json_stdout(&segalign(&[
            "synth",
            "--output",
            path(out),
            "--count",
            "3",
            "--seed",
            "11",
        ]));
    }
    let mut names: Vec<_> = fs::read_dir(&a).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 12);
    for name in &names {
        assert_eq!(
            fs::read(a.join(name)).unwrap(),
            fs::read(b.join(name)).unwrap(),
            "{name:?}"
        );
    }

    let instances = segalign::data::load_instance_dir(&a).unwrap();
    assert_eq!(instances.len(), 3);
    for inst in &instances {
        let gt = inst.gt.as_ref().unwrap();
        assert_eq!(gt.len(), inst.probs.frames());
        assert_eq!(inst.transcript.as_ref(), Some(&gt.to_segmentwise().0));
    }
}

#[test]
fn synth_rejects_more_segments_than_frames() {
    let dir = TempDir::new().unwrap();
    let out = segalign(&[
        "synth",
        "--output",
        path(dir.path()),
        "--frames",
        "3",
        "--segments",
        "4",
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn estimate_lengths_averages_segments_per_class() {
    let dir = TempDir::new().unwrap();
    write_labels(dir.path(), "v1.gt.txt", "x x y y y");
    write_labels(dir.path(), "v2.gt.txt", "y x");
    write_labels(dir.path(), "ignored.txt", "x x x x x x");
    let model = json_stdout(&segalign(&["estimate-lengths", "--train", path(dir.path())]));
    assert_eq!(model["class_names"], serde_json::json!(["x", "y"]));
    assert_eq!(model["expected"], serde_json::json!([1.5, 2.0]));
    assert_eq!(model["family"], "poisson");

    let names = dir.path().join("classes.json");
    fs::write(&names, r#"["z", "y", "x"]"#).unwrap();
    let out = segalign(&[
        "estimate-lengths",
        "--train",
        path(dir.path()),
        "--class-names",
        path(&names),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let model = json_stdout(&segalign(&[
        "estimate-lengths",
        "--train",
        path(dir.path()),
        "--class-names",
        path(&names),
        "--fill-missing",
        "9",
    ]));
    assert_eq!(model["expected"], serde_json::json!([9.0, 2.0, 1.5]));
}

const COLUMNS: [&str; 18] = [
    "scenario",
    "point",
    "method",
    "param",
    "value",
    "repeat",
    "instances",
    "failures",
    "workers",
    "mof",
    "mof_bg",
    "iou",
    "iod",
    "edit",
    "f1_10",
    "f1_25",
    "f1_50",
    "seconds",
];

#[test]
fn bench_writes_the_documented_csv() {
    let dir = TempDir::new().unwrap();
    let csv_path = dir.path().join("bench.csv");
    let out = segalign(&[
        "bench",
        "--scenario",
        "init-ablation",
        "--count",
        "3",
        "--train-count",
        "20",
        "--frames",
        "120",
        "--segments",
        "4",
        "--repeats",
        "2",
        "--workers",
        "1",
        "--output",
        path(&csv_path),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let mut reader = csv::Reader::from_path(&csv_path).unwrap();
    assert_eq!(reader.headers().unwrap().iter().collect::<Vec<_>>(), COLUMNS);
    let rows: Vec<csv::StringRecord> = reader.records().map(Result::unwrap).collect();
    // 2 init modes x 2 decoders x (2 repeats + median).
    assert_eq!(rows.len(), 12);
    for row in &rows {
        assert_eq!(&row[0], "init-ablation");
        assert!(["model", "equal"].contains(&&row[4]));
        assert!(["exact", "fifa"].contains(&&row[2]));
        assert!(["0", "1", "median"].contains(&&row[5]));
        assert_eq!(&row[6], "3");
        assert_eq!(&row[7], "0");
        for k in 9..17 {
            let v: f64 = row[k].parse().unwrap();
            assert!((0.0..=1.0).contains(&v), "{} = {v}", COLUMNS[k]);
        }
        assert!(row[17].parse::<f64>().unwrap() >= 0.0);
    }
    // Decoding is deterministic, so repeats differ only in timing.
    for group in rows.chunks(3) {
        assert_eq!(&group[2][5], "median");
        assert_eq!(
            group[0].iter().skip(9).take(8).collect::<Vec<_>>(),
            group[1].iter().skip(9).take(8).collect::<Vec<_>>()
        );
    }
}

#[test]
fn bench_rejects_bad_grid_points() {
    let out = segalign(&["bench", "--scenario", "steps-sweep", "--grid", "ten", "--count", "1"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(failure_kind(&out), "usage");
}
