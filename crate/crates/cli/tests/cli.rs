use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const CONFIG: &str = r#"{
  "k_folds": 3,
  "learners_per_layer": 2,
  "max_layers": 3,
  "seed": 7,
  "mart": {"num_trees": 8, "max_depth": 3, "max_bins": 32}
}"#;

fn dforest(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dforest"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn ok(args: &[&str]) -> Output {
    let out = dforest(args);
    assert_eq!(code(&out), 0, "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

struct Work {
    dir: TempDir,
}

impl Work {
    fn new() -> Self {
        let w = Work {
            dir: tempfile::tempdir().unwrap(),
        };
        fs::write(w.path("config.json"), CONFIG).unwrap();
        w
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn s(&self, name: &str) -> String {
        self.path(name).to_string_lossy().into_owned()
    }

    fn gen(&self, name: &str, rows: usize, cols: usize, seed: u64) {
        self.gen_with(name, rows, cols, cols.min(4), 0.05, seed);
    }

    fn gen_with(&self, name: &str, rows: usize, cols: usize, informative: usize, pos_rate: f64, seed: u64) {
        ok(&[
            "gen-data",
            "--rows",
            &rows.to_string(),
            "--cols",
            &cols.to_string(),
            "--informative",
            &informative.to_string(),
            "--pos-rate",
            &pos_rate.to_string(),
            "--seed",
            &seed.to_string(),
            "--out",
            &self.s(name),
        ]);
    }

    fn train(&self, data: &str, model: &str, extra: &[&str]) -> Output {
        let mut args = vec![
            "train".to_string(),
            "--data".into(),
            self.s(data),
            "--config".into(),
            self.s("config.json"),
            "--model".into(),
            self.s(model),
        ];
        args.extend(extra.iter().map(|s| s.to_string()));
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        dforest(&refs)
    }
}

fn read(p: &Path) -> Vec<u8> {
    fs::read(p).unwrap()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&dforest(&["--help"])), 0);
    assert_eq!(code(&dforest(&["--version"])), 0);
    assert_eq!(code(&dforest(&["train", "--help"])), 0);
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&dforest(&[])), 2);
    assert_eq!(code(&dforest(&["nonsense"])), 2);
    assert_eq!(code(&dforest(&["gen-data", "--rows", "10", "--cols", "2"])), 2);
    let w = Work::new();
    w.gen("d.csv", 300, 5, 1);
    let out = dforest(&["train", "--data", &w.s("d.csv")]);
    assert_eq!(code(&out), 2, "missing model path");
}

#[test]
fn unknown_config_key_exits_two() {
    let w = Work::new();
    w.gen("d.csv", 300, 5, 1);
    fs::write(w.path("bad.json"), r#"{"k_fold": 3}"#).unwrap();
    let out = dforest(&[
        "train",
        "--data",
        &w.s("d.csv"),
        "--config",
        &w.s("bad.json"),
        "--model",
        &w.s("m.json"),
    ]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("k_fold"));
}

#[test]
fn invalid_config_value_exits_two() {
    let w = Work::new();
    w.gen("d.csv", 300, 5, 1);
    fs::write(w.path("bad.json"), r#"{"k_folds": 1}"#).unwrap();
    let out = dforest(&[
        "train",
        "--data",
        &w.s("d.csv"),
        "--config",
        &w.s("bad.json"),
        "--model",
        &w.s("m.json"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn top_k_beyond_width_exits_two() {
    let w = Work::new();
    w.gen("d.csv", 300, 5, 1);
    let out = dforest(&[
        "select",
        "--data",
        &w.s("d.csv"),
        "--top-k",
        "6",
        "--out-indices",
        &w.s("sel.json"),
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_class_data_exits_one() {
    let w = Work::new();
    fs::write(w.path("one.csv"), "a,b,label\n1,2,0\n3,4,0\n5,6,0\n").unwrap();
    assert_eq!(code(&w.train("one.csv", "m.json", &[])), 1);
}

#[test]
fn malformed_data_exits_one() {
    let w = Work::new();
    fs::write(w.path("bad.csv"), "a,b,label\n1,x,0\n3,4,1\n").unwrap();
    assert_eq!(code(&w.train("bad.csv", "m.json", &[])), 1);
    assert_eq!(code(&w.train("missing.csv", "m.json", &[])), 1);
}

#[test]
fn train_predict_eval_round_trip() {
    let w = Work::new();
    w.gen_with("train.csv", 3000, 8, 8, 0.1, 1);
    w.gen_with("test.csv", 800, 8, 8, 0.1, 2);
    ok(&[
        "train",
        "--data",
        &w.s("train.csv"),
        "--config",
        &w.s("config.json"),
        "--model",
        &w.s("m.json"),
    ]);
    let model: serde_json::Value = serde_json::from_slice(&read(&w.path("m.json"))).unwrap();
    assert_eq!(model["format_version"], 1);
    assert_eq!(model["feature_names"].as_array().unwrap().len(), 8);

    ok(&[
        "predict",
        "--model",
        &w.s("m.json"),
        "--data",
        &w.s("test.csv"),
        "--out",
        &w.s("s.csv"),
    ]);
    let scores = fs::read_to_string(w.path("s.csv")).unwrap();
    assert_eq!(scores.lines().next(), Some("score"));
    assert_eq!(scores.lines().count(), 801);

    let out = ok(&[
        "eval",
        "--scores",
        &w.s("s.csv"),
        "--labels",
        &w.s("test.csv"),
        "--rates",
        "0.01,0.1",
        "--pr-out",
        &w.s("pr.csv"),
        "--json",
    ]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let auc = report["auc"].as_f64().unwrap();
    assert!(auc > 0.7 && auc <= 1.0, "auc {auc}");
    assert_eq!(report["recall_at"].as_array().unwrap().len(), 2);
    let pr = fs::read_to_string(w.path("pr.csv")).unwrap();
    assert_eq!(pr.lines().next(), Some("recall,precision,threshold"));

    let text = ok(&["eval", "--scores", &w.s("s.csv"), "--labels", &w.s("test.csv")]);
    let text = String::from_utf8(text.stdout).unwrap();
    assert!(text.starts_with("auc "));
    assert!(text.contains("recall@0.01 "));
}

#[test]
fn predict_rejects_wrong_width() {
    let w = Work::new();
    w.gen("train.csv", 600, 6, 1);
    w.gen("narrow.csv", 100, 5, 2);
    assert_eq!(code(&w.train("train.csv", "m.json", &[])), 0);
    let out = dforest(&[
        "predict",
        "--model",
        &w.s("m.json"),
        "--data",
        &w.s("narrow.csv"),
        "--out",
        &w.s("s.csv"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("expected 6, got 5"));
}

#[test]
fn eval_rejects_length_mismatch() {
    let w = Work::new();
    w.gen("d.csv", 300, 3, 1);
    fs::write(w.path("s.csv"), "score\n0.1\n0.2\n").unwrap();
    let out = dforest(&["eval", "--scores", &w.s("s.csv"), "--labels", &w.s("d.csv")]);
    assert_eq!(code(&out), 1);
}

#[test]
fn unsupported_model_version_is_reported() {
    let w = Work::new();
    w.gen("d.csv", 600, 4, 1);
    assert_eq!(code(&w.train("d.csv", "m.json", &[])), 0);
    let text = fs::read_to_string(w.path("m.json")).unwrap();
    fs::write(
        w.path("m2.json"),
        text.replacen("\"format_version\": 1", "\"format_version\": 9", 1),
    )
    .unwrap();
    let out = dforest(&[
        "predict",
        "--model",
        &w.s("m2.json"),
        "--data",
        &w.s("d.csv"),
        "--out",
        &w.s("s.csv"),
    ]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("format version 9"));
}

#[test]
fn interrupted_training_resumes_to_identical_model() {
    let w = Work::new();
    w.gen("d.csv", 1200, 6, 3);
    assert_eq!(code(&w.train("d.csv", "full.json", &[])), 0);

    let ck = w.s("ck");
    let out = w.train("d.csv", "part.json", &["--checkpoint", &ck, "--stop-after", "5"]);
    assert_eq!(code(&out), 1, "interrupted run reports failure");
    assert!(!w.path("part.json").exists());
    let out = w.train("d.csv", "part.json", &["--checkpoint", &ck, "--pool-size", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(read(&w.path("full.json")), read(&w.path("part.json")));

    let log = fs::read_to_string(w.path("ck/events.log")).unwrap();
    assert!(
        log.lines().any(|l| l.ends_with(",pending,done")),
        "restored jobs are logged"
    );
}

#[test]
fn checkpoint_from_other_inputs_is_discarded() {
    let w = Work::new();
    w.gen("a.csv", 800, 5, 1);
    w.gen("b.csv", 800, 5, 2);
    let ck = w.s("ck");
    assert_eq!(code(&w.train("a.csv", "ma.json", &["--checkpoint", &ck])), 0);
    assert_eq!(code(&w.train("b.csv", "mb.json", &["--checkpoint", &ck])), 0);
    assert_eq!(code(&w.train("b.csv", "fresh.json", &[])), 0);
    assert_eq!(read(&w.path("mb.json")), read(&w.path("fresh.json")));
}

#[test]
fn selected_model_accepts_original_columns() {
    let w = Work::new();
    w.gen("d.csv", 1500, 12, 4);
    ok(&[
        "select",
        "--data",
        &w.s("d.csv"),
        "--top-k",
        "4",
        "--out-indices",
        &w.s("sel.json"),
        "--out-data",
        &w.s("proj.csv"),
        "--config",
        &w.s("config.json"),
    ]);
    let sel: serde_json::Value = serde_json::from_slice(&read(&w.path("sel.json"))).unwrap();
    assert_eq!(sel["num_features"], 12);
    assert_eq!(sel["indices"].as_array().unwrap().len(), 4);
    assert_eq!(sel["importances"].as_array().unwrap().len(), 12);
    let header = fs::read_to_string(w.path("proj.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 5);

    assert_eq!(code(&w.train("d.csv", "m.json", &["--selected", &w.s("sel.json")])), 0);
    ok(&[
        "predict",
        "--model",
        &w.s("m.json"),
        "--data",
        &w.s("d.csv"),
        "--out",
        &w.s("s1.csv"),
    ]);

    // The same cascade trained on the projected file gives the same scores.
    assert_eq!(code(&w.train("proj.csv", "mp.json", &[])), 0);
    ok(&[
        "predict",
        "--model",
        &w.s("mp.json"),
        "--data",
        &w.s("proj.csv"),
        "--out",
        &w.s("s2.csv"),
    ]);
    assert_eq!(read(&w.path("s1.csv")), read(&w.path("s2.csv")));
}

#[test]
fn top_k_in_config_trains_on_subset() {
    let w = Work::new();
    w.gen("d.csv", 1000, 10, 5);
    fs::write(
        w.path("topk.json"),
        CONFIG.replacen("\"seed\": 7", "\"seed\": 7, \"top_k_features\": 3", 1),
    )
    .unwrap();
    let out = dforest(&[
        "train",
        "--data",
        &w.s("d.csv"),
        "--config",
        &w.s("topk.json"),
        "--model",
        &w.s("m.json"),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let model: serde_json::Value = serde_json::from_slice(&read(&w.path("m.json"))).unwrap();
    assert_eq!(model["model"]["selected_features"].as_array().unwrap().len(), 3);
    assert_eq!(model["model"]["num_features"], 10);
}
