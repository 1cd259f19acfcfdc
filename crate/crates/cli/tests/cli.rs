//! Command-line behaviour: outputs, exit codes and determinism.

use std::collections::HashMap;
use std::path::Path;
use std::process::{Command, Output};

fn kcgc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kcgc"))
        .args(args)
        .env("KCGC_LOG", "warn")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let o = kcgc(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn gen_data_writes_one_file_per_language() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    let stats = ok(&["gen-data", "--out", &s(&out), "--entities", "200", "--triples", "500", "--languages", "3"]);
    for f in ["de.tsv", "fi.tsv", "fr.tsv", "dataset.json", "split.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let ratios: Vec<f64> = stats
        .lines()
        .find(|l| l.starts_with("T/E ratio"))
        .unwrap()
        .split_whitespace()
        .skip(2)
        .map(|x| x.parse().unwrap())
        .collect();
    assert_eq!(ratios.len(), 3);
    assert!(ratios.iter().all(|&r| r >= 0.5), "{ratios:?}");
    let again = dir.path().join("e");
    ok(&["gen-data", "--out", &s(&again), "--entities", "200", "--triples", "500", "--languages", "3"]);
    for f in ["de.tsv", "fi.tsv", "fr.tsv", "dataset.json", "split.json"] {
        assert_eq!(std::fs::read(out.join(f)).unwrap(), std::fs::read(again.join(f)).unwrap());
    }
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(kcgc(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(kcgc(&["--help"]).status.code(), Some(0));
    let o = kcgc(&["train", "--set", "learning_rate=1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("learning_rate"));
    let missing = dir.path().join("missing.cfg");
    assert_eq!(kcgc(&["train", "--config", &s(&missing)]).status.code(), Some(1));
    let data = dir.path().join("d");
    ok(&["gen-data", "--out", &s(&data), "--entities", "30", "--triples", "40", "--languages", "1"]);
    let o = kcgc(&["eval", "--set", &format!("data_dir={}", s(&data)), "--set", &format!("out_dir={}", s(&dir.path().join("none")))]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(kcgc(&["gen-data", "--out", &s(&data), "--entities", "1"]).status.code(), Some(2));
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d");
    let run = dir.path().join("r");
    ok(&[
        "gen-data", "--out", &s(&data), "--entities", "40", "--relations", "4", "--triples", "30", "--languages", "2",
        "--align", "--seed", "2",
    ]);
    let sets = [
        format!("data_dir={}", s(&data)),
        format!("out_dir={}", s(&run)),
        "epochs=150".into(),
        "batch_size=8".into(),
        "lr=0.001".into(),
        "d_model=32".into(),
        "d_ff=64".into(),
    ];
    let mut args: Vec<&str> = vec!["train"];
    for x in &sets {
        args.push("--set");
        args.push(x);
    }
    ok(&args);
    args[0] = "eval";
    let table = ok(&args);
    assert!(table.contains("AVG"));
    let first = std::fs::read(run.join("eval-test-kgc/report.json")).unwrap();
    ok(&args);
    assert_eq!(first, std::fs::read(run.join("eval-test-kgc/report.json")).unwrap());

    // alignment mode: exactly the alignment-relation test queries
    args.extend(["--mode", "alignment"]);
    ok(&args);
    let preds = std::fs::read_to_string(run.join("eval-test-alignment/predictions.jsonl")).unwrap();
    assert!(preds.lines().count() > 0);
    for l in preds.lines() {
        let v: serde_json::Value = serde_json::from_str(l).unwrap();
        assert!(v["relation"].as_str().unwrap().starts_with("same_as_"));
    }

    // a memorized training fact with a single answer comes back first
    let tsv = std::fs::read_to_string(data.join("de.tsv")).unwrap();
    let facts: Vec<Vec<&str>> = tsv.lines().map(|l| l.split('\t').collect()).collect();
    let mut count: HashMap<(&str, &str), usize> = HashMap::new();
    for f in &facts {
        *count.entry((f[0], f[1])).or_default() += 1;
    }
    let split: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(data.join("split.json")).unwrap()).unwrap();
    let train: Vec<usize> = split["train"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap() as usize).collect();
    let f = train
        .iter()
        .filter(|&&i| i < facts.len())
        .map(|&i| &facts[i])
        .find(|f| count[&(f[0], f[1])] == 1)
        .unwrap();
    let out = ok(&[
        "predict",
        "--set",
        &sets[0],
        "--set",
        &sets[1],
        "--head",
        f[0],
        "--relation",
        f[1],
        "--lang",
        "de",
        "-k",
        "3",
    ]);
    let top = out.lines().next().unwrap().split('\t').nth(1).unwrap();
    assert_eq!(top, f[2]);

    let report = ok(&["report", &s(&run.join("eval-test-kgc/report.json")), &s(&run.join("eval-test-alignment/report.json"))]);
    assert_eq!(report.lines().count(), 3);
}
