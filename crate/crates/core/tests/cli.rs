use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn dannlime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dannlime")).args(args).output().expect("spawn")
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap_or(-1)
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Small synthetic corpus plus the config that `gen-synth` writes for it.
struct Fixture {
    dir: TempDir,
    config: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path().join("base.json");
        let cfg = json!({
            "n_source": 40, "n_target": 40, "epochs": 3, "seed": 3,
            "max_len": 12, "dim": 8, "filters": 4, "kernel": 3, "hidden": 8, "fe_out": 8,
            "n_seeds": 1, "n_samples": 200, "out_dir": dir.path(),
        });
        std::fs::write(&base, cfg.to_string()).unwrap();
        let out = dannlime(&["gen-synth", "--config", s(&base), "--run-id", "data"]);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        let config = dir.path().join("data/config.json");
        Fixture { dir, config }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn train(&self, mode: &str, run_id: &str) -> PathBuf {
        self.train_with(mode, run_id, &[])
    }

    fn train_with(&self, mode: &str, run_id: &str, extra: &[&str]) -> PathBuf {
        let mut args = vec!["train", "--mode", mode, "--config", s(&self.config), "--run-id", run_id];
        args.extend_from_slice(extra);
        let out = dannlime(&args);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        self.path(run_id)
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&dannlime(&[])), 1);
    assert_eq!(code(&dannlime(&["train", "--mode", "sideways"])), 1);
    assert_eq!(code(&dannlime(&["explain", "--checkpoint", "x.json"])), 1);
    assert_eq!(code(&dannlime(&["--help"])), 0);
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"epochs": 2, "learning_rat": 0.1}"#).unwrap();
    let out = dannlime(&["compare", "--config", s(&bad)]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("learning_rat"), "{}", stderr(&out));

    let missing = dir.path().join("nope.csv");
    let out = dannlime(&["train", "--mode", "baseline", "--source-csv", s(&missing), "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("nope.csv"));

    let out = dannlime(&["train", "--epochs", "0", "--out-dir", s(dir.path())]);
    assert_eq!(code(&out), 1);
}

#[test]
fn dann_training_requires_targets() {
    let f = Fixture::new();
    let mut cfg = read_json(&f.config);
    cfg["target_csvs"] = json!({});
    let alt = f.path("no_target.json");
    std::fs::write(&alt, cfg.to_string()).unwrap();
    let out = dannlime(&["train", "--mode", "dann", "--config", s(&alt), "--run-id", "x"]);
    assert_eq!(code(&out), 1, "{}", stderr(&out));
    let out = dannlime(&["train", "--mode", "baseline", "--config", s(&alt), "--run-id", "y"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

#[test]
fn gen_synth_is_deterministic() {
    let a = Fixture::new();
    let b = Fixture::new();
    for file in ["source.csv", "target.csv", "glove.txt"] {
        let x = std::fs::read(a.path("data").join(file)).unwrap();
        let y = std::fs::read(b.path("data").join(file)).unwrap();
        assert_eq!(x, y, "{file} differs");
    }
}

#[test]
fn train_writes_checkpoint_and_manifest() {
    let f = Fixture::new();
    let run = f.train_with("dann", "dann", &["--epochs", "20"]);
    let m = read_json(&run.join("manifest.json"));
    assert_eq!(m["mode"], "dann");
    assert_eq!(m["source_records"], 40);
    assert_eq!(m["target_records"], 40);
    let epochs = m["stats"]["epochs"].as_array().unwrap();
    assert_eq!(epochs.len(), 20);
    let first = epochs[0]["label_loss"].as_f64().unwrap();
    let last = epochs[19]["label_loss"].as_f64().unwrap();
    assert!(last < first, "label loss {first} → {last}");
    assert_eq!(read_json(&run.join("model.json"))["version"], 1);
}

#[test]
fn evaluate_reports_platform_blocks_and_leaves_inputs_untouched() {
    let f = Fixture::new();
    let run = f.train("baseline", "base");
    let ck = run.join("model.json");
    let before = std::fs::read(&ck).unwrap();

    // Two platforms plus an unlabeled row.
    let data = f.path("mixed.csv");
    std::fs::write(
        &data,
        "text,label,platform\n\
         dom_tgt signal_pos w01,false,twitter\n\
         w02 dom_tgt signal_neg,true,twitter\n\
         dom_tgt signal_pos w03,false,news\n\
         w04 dom_tgt signal_neg,true,news\n\
         w05 dom_tgt,None,news\n",
    )
    .unwrap();
    let out = dannlime(&[
        "evaluate", "--checkpoint", s(&ck), "--dataset", s(&data), "--per-platform",
        "--out-dir", s(f.dir.path()), "--run-id", "eval",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(std::fs::read(&ck).unwrap(), before);

    let m = read_json(&f.path("eval/metrics.json"));
    assert_eq!(m["dropped_unlabeled"], 1);
    let names: Vec<&str> = m["blocks"].as_array().unwrap().iter().map(|b| b["platform"].as_str().unwrap()).collect();
    // Blocks follow first appearance in the file.
    assert_eq!(names, ["twitter", "news", "combined"]);
    assert_eq!(m["blocks"][2]["metrics"]["n"], 4);
}

#[test]
fn bad_checkpoint_version_is_a_data_error() {
    let f = Fixture::new();
    let run = f.train("baseline", "base");
    let mut ck = read_json(&run.join("model.json"));
    ck["version"] = json!(99);
    let bad = f.path("v99.json");
    std::fs::write(&bad, ck.to_string()).unwrap();
    let out = dannlime(&["explain", "--checkpoint", s(&bad), "--text", "hello world", "--out-dir", s(f.dir.path())]);
    assert_eq!(code(&out), 2, "{}", stderr(&out));
    assert!(stderr(&out).contains("version 99"));
}

#[test]
fn explain_batch_skips_empty_rows() {
    let f = Fixture::new();
    let run = f.train("dann", "dann");
    let rows = f.path("rows.csv");
    std::fs::write(
        &rows,
        "text\n\
         dom_src signal_pos w01 w02\n\
         \"!!! ???\"\n\
         w03 signal_neg dom_tgt\n\
         vaccines cause w04\n",
    )
    .unwrap();
    let out = dannlime(&[
        "explain", "--checkpoint", s(&run.join("model.json")), "--input", s(&rows),
        "--out-dir", s(f.dir.path()), "--run-id", "ex",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let mut files: Vec<String> = std::fs::read_dir(f.path("ex"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["row_0.html", "row_0.json", "row_2.html", "row_2.json", "row_3.html", "row_3.json"]);

    let e = read_json(&f.path("ex/row_0.json"));
    let words = e["words"].as_array().unwrap();
    assert!(!words.is_empty() && words.len() <= 4);
    let mags: Vec<f64> = words.iter().map(|w| w["weight"].as_f64().unwrap().abs()).collect();
    assert!(mags.windows(2).all(|w| w[0] >= w[1]));
}

#[test]
fn compare_writes_table() {
    let f = Fixture::new();
    let out = dannlime(&["compare", "--config", s(&f.config), "--epochs", "2", "--run-id", "cmp"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("macro_f1") && stdout.contains("delta"));
    let r = read_json(&f.path("cmp/compare.json"));
    assert_eq!(r["config"]["epochs"], 2);
    assert_eq!(r["rows"].as_array().unwrap().len(), 4);
}
