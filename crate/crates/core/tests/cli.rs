use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "d_model = 8\nlayers = 1\nheads = 2\nd_ff = 16\ngat_layers = 1\nbatch_size = 4\n\
max_steps = 4\nwarmup_steps = 2\nlearning_rate = 0.01\nbeam_width = 1\neval_interval = 2\n\
checkpoint_interval = 0\nval_examples = 4\n";

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sqltree")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn corpus(dir: &Path) {
    let o =
        run(&["gen-corpus", "--seed", "4", "--examples", "12", "--dev-examples", "4", "--out", dir.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn generated_corpus_validates() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let o = run(&["validate", dir.path().join("train.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("12/12 examples valid"));
}

#[test]
fn a_corrupted_dependency_label_is_one_failure() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path());
    let path = dir.path().join("train.json");
    let mut ds: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    ds["examples"][3]["question"]["deps"][0][2] = "NOT_A_LABEL".into();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, ds.to_string()).unwrap();
    let o = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    let out = stdout(&o);
    assert_eq!(out.lines().filter(|l| l.starts_with("FAIL")).count(), 1, "{out}");
    assert!(out.contains("FAIL train-0003"));
    assert!(out.contains("11/12 examples valid"));
}

#[test]
fn unreadable_input_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    let o = run(&["validate", empty.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("malformed"));
    assert_eq!(run(&["validate", "/nonexistent/file.json"]).status.code(), Some(2));
    assert_eq!(run(&["check", "nothing"]).status.code(), Some(2));
    assert_eq!(run(&["gen-corpus", "--mix", "1,2", "--out", "x"]).status.code(), Some(2));
}

#[test]
fn check_suites_report_passes() {
    for (suite, n) in [("roundtrips", "50"), ("masks", "50"), ("gradients", "4"), ("generation", "10")] {
        let o = run(&["check", suite, "--n", n, "--seed", "3"]);
        assert_eq!(o.status.code(), Some(0), "{suite}");
        assert!(stdout(&o).ends_with(&format!("{n}/{n} passed\n")), "{suite}: {}", stdout(&o));
    }
}

#[test]
fn train_predict_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    corpus(d);
    let config = d.join("tiny.toml");
    fs::write(&config, TINY).unwrap();
    let p = |name: &str| d.join(name).to_str().unwrap().to_string();
    let o = run(&[
        "train",
        "--config",
        &p("tiny.toml"),
        "--train",
        &p("train.json"),
        "--dev",
        &p("dev.json"),
        "--out",
        &p("run"),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = fs::read_to_string(d.join("run/metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);

    let o =
        run(&["predict", "--checkpoint", &p("run/checkpoint"), "--data", &p("dev.json"), "--out", &p("preds.jsonl")]);
    assert!(o.status.success());
    assert_eq!(fs::read_to_string(d.join("preds.jsonl")).unwrap().lines().count(), 4);

    let direct = run(&["eval", "--checkpoint", &p("run/checkpoint"), "--data", &p("dev.json")]);
    let from_file = run(&["eval", "--predictions", &p("preds.jsonl"), "--data", &p("dev.json")]);
    assert!(direct.status.success());
    assert_eq!(stdout(&direct), stdout(&from_file));
    assert!(stdout(&direct).contains("exact_match"));

    let o = run(&["eval", "--baseline", &p("train.json"), "--data", &p("dev.json")]);
    assert!(stdout(&o).contains("examples       4"));

    let o = run(&[
        "train",
        "--train",
        &p("train.json"),
        "--resume",
        &p("run/checkpoint"),
        "--seed",
        "2",
        "--out",
        &p("run2"),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(run(&["eval", "--checkpoint", &p("dev.json"), "--data", &p("dev.json")]).status.code(), Some(2));
}
