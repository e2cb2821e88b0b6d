use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn annot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_annot"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> PathBuf {
    let path = dir.join(name);
    fs::write(&path, body).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const MINIMAL_SYNTH: &str = r#"
seed = 11
[data]
synthetic = { instances = 10, annotations_per_instance = 2, groups = [{ name = "g", count = 3, threshold = 0.0, noise = 0.1 }] }
"#;

const SMALL_RUN: &str = r#"
seed = 5
architectures = ["baseline", "multi-task"]
[data]
synthetic = { instances = 40, annotations_per_instance = 3, groups = [{ name = "g", count = 4, threshold = 0.0, noise = 0.1 }] }
[train]
epochs = 2
hidden_dim = 8
embed_dim = 8
[eval]
mode = "cv"
iterations = 1
k = 2
[uncertainty]
estimators = ["annotation-variance", "softmax"]
"#;

#[test]
fn synth_writes_corpus_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.toml", MINIMAL_SYNTH);
    let out = dir.path().join("out");
    let o = annot(&["synth", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("instances                 10"), "{stdout}");
    assert!(stdout.contains("annotators                3"), "{stdout}");
    let stats: Value =
        serde_json::from_str(&fs::read_to_string(out.join("stats.json")).unwrap()).unwrap();
    assert_eq!(stats["instances"], 10);
    assert_eq!(stats["annotators"], 3);
    for f in ["corpus.jsonl", "truth.jsonl", "config.toml"] {
        assert!(out.join(f).exists(), "{f} missing");
    }
    assert_eq!(
        fs::read_to_string(out.join("corpus.jsonl"))
            .unwrap()
            .lines()
            .count(),
        20
    );
}

#[test]
fn synth_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "synth.toml", MINIMAL_SYNTH);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(annot(&["synth", s(&cfg), "--out", s(&a)]).status.success());
    assert!(annot(&["synth", s(&cfg), "--out", s(&b)]).status.success());
    for f in ["corpus.jsonl", "truth.jsonl"] {
        assert_eq!(
            fs::read(a.join(f)).unwrap(),
            fs::read(b.join(f)).unwrap(),
            "{f}"
        );
    }
    let c = dir.path().join("c");
    assert!(annot(&["synth", s(&cfg), "--out", s(&c), "--seed", "12"])
        .status
        .success());
    assert_ne!(
        fs::read(a.join("corpus.jsonl")).unwrap(),
        fs::read(c.join("corpus.jsonl")).unwrap()
    );
}

#[test]
fn synth_rejects_more_annotations_than_annotators() {
    let dir = tempfile::tempdir().unwrap();
    let body = MINIMAL_SYNTH.replace(
        "annotations_per_instance = 2",
        "annotations_per_instance = 4",
    );
    let cfg = write_config(dir.path(), "synth.toml", &body);
    let o = annot(&["synth", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert_eq!(err["error"], "config");
    assert!(err["message"]
        .as_str()
        .unwrap()
        .contains("annotations_per_instance"));
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace("epochs = 2", "epocs = 2");
    let cfg = write_config(dir.path(), "run.toml", &body);
    let o = annot(&["train", s(&cfg), "--out", s(&dir.path().join("out"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epocs"));
}

#[test]
fn missing_data_file_names_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "run.toml",
        "architectures = [\"baseline\"]\n[data]\npath = \"absent.jsonl\"\n",
    );
    let out = dir.path().join("out");
    let o = annot(&["train", s(&cfg), "--out", s(&out)]);
    assert_ne!(o.status.code(), Some(0));
    let err: Value = serde_json::from_slice(&o.stderr).unwrap();
    assert!(err["message"].as_str().unwrap().contains("absent.jsonl"));
    let record: Value =
        serde_json::from_str(&fs::read_to_string(out.join("error.json")).unwrap()).unwrap();
    assert_eq!(record, err);
}

#[test]
fn train_then_eval() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = dir.path().join("run");
    let o = annot(&["train", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut names: Vec<String> = fs::read_dir(out.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert_eq!(
        names,
        [
            "baseline-it0-f0.json",
            "baseline-it0-f1.json",
            "multi-task-it0-f0.json",
            "multi-task-it0-f1.json"
        ]
    );
    assert_eq!(fs::read_dir(out.join("traces")).unwrap().count(), 4);

    // a second training run reproduces every checkpoint
    let again = dir.path().join("again");
    assert!(annot(&["train", s(&cfg), "--out", s(&again)])
        .status
        .success());
    for n in &names {
        assert_eq!(
            fs::read(out.join("checkpoints").join(n)).unwrap(),
            fs::read(again.join("checkpoints").join(n)).unwrap(),
            "{n}"
        );
    }

    let o = annot(&["eval", s(&cfg), "--out", s(&out)]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let runs = report["runs"].as_array().unwrap();
    assert_eq!(runs.len(), 4);
    for r in runs {
        assert!(r["majority"].is_object());
        if r["model"]["model"] == "baseline" {
            assert!(r["individual"].is_null());
        } else {
            assert!(r["individual"].is_object());
        }
    }
    let series: Vec<&str> = report["correlations"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["series"].as_str().unwrap())
        .collect();
    assert!(series.contains(&"multi-task/variance"));
    assert!(series.contains(&"baseline/softmax"));
    assert!(series
        .iter()
        .all(|s| *s == "multi-task/variance" || *s == "baseline/softmax"));
    for f in ["report.txt", "instances.csv", "uncertainty.csv"] {
        assert!(out.join(f).exists(), "{f} missing");
    }

    // evaluating with another seed no longer matches the checkpoints
    let o = annot(&["eval", s(&cfg), "--out", s(&out), "--seed", "6"]);
    assert_ne!(o.status.code(), Some(0));
}

#[test]
fn eval_rejects_checkpoints_of_another_architecture() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", SMALL_RUN);
    let out = dir.path().join("run");
    assert!(annot(&["train", s(&cfg), "--out", s(&out)])
        .status
        .success());
    let ck = out.join("checkpoints");
    fs::copy(
        ck.join("baseline-it0-f0.json"),
        ck.join("multi-task-it0-f0.json"),
    )
    .unwrap();
    let o = annot(&["eval", s(&cfg), "--out", s(&out)]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("multi-task-it0-f0.json"));
}

#[test]
fn compare_prints_mismatch_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_RUN.replace(
        "architectures = [\"baseline\", \"multi-task\"]",
        "architectures = [\"baseline\", \"multi-task\", \"multi-label\"]",
    );
    let cfg = write_config(dir.path(), "run.toml", &body);
    let out = dir.path().join("cmp");
    let o = annot(&["compare", s(&cfg), "--out", s(&out), "--jobs", "2"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let categories = report["mismatch"]["categories"].as_array().unwrap();
    let keys: Vec<(bool, bool, bool)> = categories
        .iter()
        .map(|c| {
            (
                c["gold"].as_bool().unwrap(),
                c["baseline"].as_bool().unwrap(),
                c["multitask"].as_bool().unwrap(),
            )
        })
        .collect();
    assert_eq!(
        keys,
        [
            (false, true, false),
            (true, true, false),
            (true, false, true),
            (false, false, true)
        ]
    );
    let timing: Value =
        serde_json::from_str(&fs::read_to_string(out.join("timing.json")).unwrap()).unwrap();
    let models: Vec<String> = timing["rows"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["model"]["model"].as_str().unwrap().to_string())
        .collect();
    assert_eq!(models, ["baseline", "multi-label", "multi-task"]);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("Training time"));
    assert!(timing["generated_unix_seconds"].as_u64().is_some());
    assert!(!fs::read_to_string(out.join("report.json"))
        .unwrap()
        .contains("generated_unix_seconds"));
}
