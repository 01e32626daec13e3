use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn sidefuse(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sidefuse"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = sidefuse(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &str = r#"{
  "synth": {"lots_classes": 4, "one_example_classes": 3, "samples_per_class": 8, "feature_dim": 6, "seed": 3},
  "train": {"trials": 3, "iterations": 4, "batch_size": 6, "finetune_iters": 2}
}"#;

fn small_config(dir: &TempDir) -> PathBuf {
    let p = dir.path().join("cfg.json");
    fs::write(&p, SMALL).unwrap();
    p
}

fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines().map(|l| l.split(',').map(str::to_string).collect::<Vec<_>>());
    (lines.next().unwrap(), lines.collect())
}

#[test]
fn synth_writes_dataset_and_side_information() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(&spec, r#"{"lots_classes": 3, "one_example_classes": 2, "samples_per_class": 4, "feature_dim": 5}"#)
        .unwrap();
    let out = dir.path().join("data");
    ok(&["synth", "--spec", s(&spec), "--out", s(&out)]);

    let (header, rows) = read_csv(&out.join("features.csv"));
    assert_eq!(header, ["f0", "f1", "f2", "f3", "f4"]);
    assert_eq!(rows.len(), 20);
    let labels = fs::read_to_string(out.join("labels.csv")).unwrap();
    assert_eq!(labels.lines().next(), Some("class"));
    assert_eq!(labels.lines().count(), 21);
    let split: Value = serde_json::from_str(&fs::read_to_string(out.join("split.json")).unwrap()).unwrap();
    assert_eq!(split["lots"].as_array().unwrap().len(), 3);
    assert_eq!(split["one_example"].as_array().unwrap().len(), 2);
    for f in ["embed0.csv", "embed1.csv", "hierarchy.tree"] {
        assert!(out.join("sideinfo").join(f).is_file(), "{f}");
    }

    let again = dir.path().join("again");
    ok(&["synth", "--spec", s(&spec), "--out", s(&again)]);
    for f in ["features.csv", "labels.csv", "split.json", "sideinfo/embed0.csv", "sideinfo/hierarchy.tree"] {
        assert_eq!(fs::read(out.join(f)).unwrap(), fs::read(again.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn train_then_eval_produces_report() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir);
    let run = dir.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&run)]);
    let log = fs::read_to_string(run.join("log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
    for (i, line) in log.lines().enumerate() {
        let rec: Value = serde_json::from_str(line).unwrap();
        assert_eq!(rec["iter"], i);
        for key in ["o1", "o2", "o3", "total"] {
            assert!(rec[key].is_f64(), "{key} in {line}");
        }
    }
    let model: Value = serde_json::from_str(&fs::read_to_string(run.join("model.json")).unwrap()).unwrap();
    assert!(model.is_object());

    let eval = dir.path().join("eval");
    ok(&["eval", "--config", s(&cfg), "--out", s(&eval)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(eval.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["trials"], 3);
    let mean = report["accuracy_mean"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mean));
    assert!(report["accuracy_std"].as_f64().unwrap() >= 0.0);

    let (header, rows) = read_csv(&eval.join("confusion.csv"));
    assert_eq!(header.len(), 4);
    assert_eq!(rows.len(), 3);
    for row in rows {
        let total: f64 = row[1..].iter().map(|v| v.parse::<f64>().unwrap()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    let (header, rows) = read_csv(&eval.join("kernel.csv"));
    assert_eq!((header.len(), rows.len()), (4, 3));
}

#[test]
fn eval_is_byte_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["eval", "--config", s(&cfg), "--out", s(&a)]);
    ok(&["eval", "--config", s(&cfg), "--out", s(&b)]);
    for f in ["report.json", "confusion.csv", "kernel.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_from_data_directory_matches_inline_synth() {
    let dir = TempDir::new().unwrap();
    let spec = dir.path().join("spec.json");
    fs::write(
        &spec,
        r#"{"lots_classes": 4, "one_example_classes": 3, "samples_per_class": 8, "feature_dim": 6, "seed": 3}"#,
    )
    .unwrap();
    ok(&["synth", "--spec", s(&spec), "--out", s(&dir.path().join("data"))]);
    let cfg = dir.path().join("dir.json");
    fs::write(
        &cfg,
        r#"{"data_dir": "data", "train": {"trials": 3, "iterations": 4, "batch_size": 6, "finetune_iters": 2}}"#,
    )
    .unwrap();
    let inline = small_config(&dir);
    ok(&["eval", "--config", s(&cfg), "--out", s(&dir.path().join("a"))]);
    ok(&["eval", "--config", s(&inline), "--out", s(&dir.path().join("b"))]);
    let a: Value = serde_json::from_slice(&fs::read(dir.path().join("a/report.json")).unwrap()).unwrap();
    let b: Value = serde_json::from_slice(&fs::read(dir.path().join("b/report.json")).unwrap()).unwrap();
    assert_eq!(a["accuracies"], b["accuracies"]);
}

#[test]
fn generalized_report_widens_label_space() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir);
    let out = dir.path().join("g");
    ok(&["eval-generalized", "--config", s(&cfg), "--out", s(&out)]);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["generalized"], true);
    assert_eq!(report["confusion_cols"].as_array().unwrap().len(), 7);
}

#[test]
fn sweeps_write_one_row_per_grid_point() {
    let dir = TempDir::new().unwrap();
    let cfg = small_config(&dir);
    let alpha = dir.path().join("alpha.csv");
    ok(&["sweep-alpha", "--config", s(&cfg), "--out", s(&alpha), "--grid", "0.5,0,0.5"]);
    let (header, rows) = read_csv(&alpha);
    assert_eq!(header, ["alpha", "accuracy_mean", "accuracy_std"]);
    assert_eq!(rows.iter().map(|r| r[0].as_str()).collect::<Vec<_>>(), ["0", "0.5"]);

    let shots = dir.path().join("shots.csv");
    ok(&["sweep-shots", "--config", s(&cfg), "--out", s(&shots), "--grid", "1,3"]);
    let (header, rows) = read_csv(&shots);
    assert_eq!(header[0], "shots");
    assert_eq!(rows.len(), 2);
}

#[test]
fn treecov_of_six_leaf_fixture() {
    let text = ok(&["treecov", "--tree", s(&fixture("six_leaf.tree"))]);
    let mut lines = text.lines();
    let names: Vec<&str> = lines.next().unwrap().split(',').skip(1).collect();
    let group = |n: &str| ["cat", "dog", "horse"].contains(&n);
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[0], names[i]);
        for (j, v) in cells[1..].iter().enumerate() {
            let expected = if i == j {
                3.0
            } else if group(names[i]) == group(names[j]) {
                2.0
            } else {
                0.0
            };
            assert_eq!(v.parse::<f64>().unwrap(), expected, "{} {}", names[i], names[j]);
        }
        seen += 1;
    }
    assert_eq!(seen, 6);

    let dir = TempDir::new().unwrap();
    let out = dir.path().join("b.csv");
    ok(&["treecov", "--tree", s(&fixture("six_leaf.tree")), "--normalize", "--out", s(&out)]);
    let (_, rows) = read_csv(&out);
    let cat = rows.iter().position(|r| r[0] == "cat").unwrap();
    let dog = rows.iter().position(|r| r[0] == "dog").unwrap();
    let v: f64 = rows[cat][dog + 1].parse().unwrap();
    assert!((v - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn hsic_matches_explicit_trace() {
    let kg = [[2.0, 1.0, 0.0], [1.0, 2.0, 1.0], [0.0, 1.0, 2.0]];
    let kr = [[1.0, 0.5, 0.2], [0.5, 1.0, 0.1], [0.2, 0.1, 1.0]];
    let dir = TempDir::new().unwrap();
    let write = |name: &str, k: &[[f64; 3]; 3]| {
        let mut text = String::from("g0,g1,g2\n");
        for row in k {
            text.push_str(&format!("{},{},{}\n", row[0], row[1], row[2]));
        }
        let p = dir.path().join(name);
        fs::write(&p, text).unwrap();
        p
    };
    let a = write("kg.csv", &kg);
    let b = write("kr.csv", &kr);
    let got: f64 = ok(&["hsic", "--kg", s(&a), "--kr", s(&b)]).trim().parse().unwrap();

    let h = |i: usize, j: usize| if i == j { 2.0 / 3.0 } else { -1.0 / 3.0 };
    let mut hkh = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for p in 0..3 {
                for q in 0..3 {
                    hkh[i][j] += h(i, p) * kg[p][q] * h(q, j);
                }
            }
        }
    }
    let trace: f64 = (0..3).flat_map(|i| (0..3).map(move |j| (i, j))).map(|(i, j)| hkh[i][j] * kr[j][i]).sum();
    assert!((got - trace / 4.0).abs() < 1e-12, "{got} vs {}", trace / 4.0);
}

#[test]
fn gradcheck_exits_zero_when_suite_passes() {
    let text = ok(&["gradcheck", "--points", "1", "--seed", "9"]);
    assert_eq!(text.lines().filter(|l| l.ends_with(" ok")).count(), 9);
}

#[test]
fn usage_errors_exit_two() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.json");
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"synth": {}, "train": {"learning_rate": 1}}"#).unwrap();
    let both = dir.path().join("both.json");
    fs::write(&both, r#"{"synth": {}, "data_dir": "x"}"#).unwrap();
    let out = s(dir.path());
    for args in [
        vec!["eval", "--config", out, "--bogus"],
        vec!["frobnicate"],
        vec!["eval", "--config", s(&missing), "--out", out],
        vec!["eval", "--config", s(&bad), "--out", out],
        vec!["eval", "--config", s(&both), "--out", out],
        vec!["treecov", "--tree", s(&missing)],
    ] {
        let res = sidefuse(&args);
        assert_eq!(res.status.code(), Some(2), "{args:?}");
        assert!(!res.stderr.is_empty());
    }
}

#[test]
fn runtime_failure_exits_one() {
    let dir = TempDir::new().unwrap();
    let tree = dir.path().join("flat.tree");
    fs::write(&tree, "r\tROOT\t0\na\tr\t0\ta\nb\tr\t1\tb\n").unwrap();
    let res = sidefuse(&["treecov", "--tree", s(&tree), "--normalize"]);
    assert_eq!(res.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&res.stderr).contains("normalize"));
}
