use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const CONFIG: &str = r#"
seed = 3
max_vocab = 256
heldout_dialogs = 10

[synth]
num_dialogs = 40
labeled_fraction = 0.25

[model]
num_layers = 1
hidden_dim = 16
num_heads = 2
ff_dim = 32
max_positions = 80

[train]
epochs = 1
batch_size = 8
monitor_every = 2
checkpoint_every = 3

[generation]
max_len = 8
"#;

fn semidial(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_semidial"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = semidial(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

struct Fixture {
    dir: TempDir,
    config: PathBuf,
    corpus: PathBuf,
}

impl Fixture {
    fn new() -> Self {
        let dir = TempDir::new().unwrap();
        let config = dir.path().join("run.toml");
        fs::write(&config, CONFIG).unwrap();
        let corpus = dir.path().join("corpus");
        ok(&["synth", "--config", s(&config), "--out", s(&corpus), "--noise-fraction", "0.2"]);
        Self { dir, config, corpus }
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }

    fn run(&self, sub: &str, run_dir: &Path, extra: &[&str]) -> Output {
        let mut args = vec![sub, "--config", s(&self.config), "--corpus", s(&self.corpus), "--run-dir", s(run_dir)];
        args.extend_from_slice(extra);
        semidial(&args)
    }
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn manifest(run_dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap()
}

fn assert_complete(run_dir: &Path) -> Value {
    let m = manifest(run_dir);
    assert_eq!(m["status"], "complete");
    for o in m["outputs"].as_array().unwrap() {
        assert!(run_dir.join(o.as_str().unwrap()).exists(), "missing output {o}");
    }
    m
}

#[test]
fn pretrain_reruns_give_identical_metrics() {
    let f = Fixture::new();
    let (a, b) = (f.path("run-a"), f.path("run-b"));
    for dir in [&a, &b] {
        let out = f.run("pretrain", dir, &[]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let m = assert_complete(&a);
    assert_eq!(m["method"], "gated");
    assert_eq!(m["inputs"].as_array().unwrap().len(), 4);
    assert_eq!(m["inputs"], manifest(&b)["inputs"]);
    let csv = fs::read(a.join("metrics.csv")).unwrap();
    assert!(!csv.is_empty());
    assert_eq!(csv, fs::read(b.join("metrics.csv")).unwrap());
    assert!(a.join("checkpoints/step-000003.json").exists());
    let eval: Value = serde_json::from_str(&fs::read_to_string(a.join("eval.json")).unwrap()).unwrap();
    assert!(eval["da_f1"].as_f64().unwrap() >= 0.0);
    assert!(eval["bleu"].as_f64().unwrap() >= 0.0);
}

#[test]
fn ablation_flags_drop_the_act_term() {
    let f = Fixture::new();
    let run = f.path("run");
    let out = f.run("pretrain", &run, &["--no-da", "--no-gate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let m = assert_complete(&run);
    assert_eq!(m["config"]["train"]["ablation"]["no_da"], true);
    assert_eq!(m["config"]["train"]["ablation"]["no_gate"], true);
    let mut reader = csv_rows(&run.join("metrics.csv"));
    let header = reader.remove(0);
    let da = header.iter().position(|h| h == "l_da").unwrap();
    let gate = header.iter().position(|h| h == "mean_gate").unwrap();
    for row in reader {
        assert_eq!(row[da], "");
        if !row[gate].is_empty() {
            assert_eq!(row[gate].parse::<f64>().unwrap(), 1.0);
        }
    }
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn finetune_and_baselines_complete() {
    let f = Fixture::new();
    let pre = f.path("pre");
    assert!(f.run("pretrain", &pre, &["--method", "multitask"]).status.success());
    let ck = pre.join("checkpoints/final.json");
    let ft = f.path("ft");
    let out = f.run("finetune", &ft, &["--checkpoint", s(&ck), "--alpha", "1"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_complete(&ft);
    assert_eq!(manifest(&ft)["inputs"].as_array().unwrap().len(), 5);

    let pseudo = f.path("pseudo");
    let out = f.run("baseline", &pseudo, &["--method", "pseudo"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_complete(&pseudo);
    let line = fs::read_to_string(pseudo.join("pseudo_labels.jsonl")).unwrap();
    let first: Value = serde_json::from_str(line.lines().next().unwrap()).unwrap();
    for key in ["dialog_id", "turn", "das", "confidence"] {
        assert!(first.get(key).is_some(), "pseudo label lacks {key}");
    }
    let eval: Value = serde_json::from_str(&fs::read_to_string(pseudo.join("eval.json")).unwrap()).unwrap();
    assert!(eval["pseudo_label_f1"].is_number());

    let vae = f.path("vae");
    let out = f.run("baseline", &vae, &["--method", "vae"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_complete(&vae);
}

#[test]
fn wrong_method_for_subcommand_fails() {
    let f = Fixture::new();
    let out = f.run("baseline", &f.path("x"), &["--method", "gated"]);
    assert!(!out.status.success());
    assert_eq!(manifest(&f.path("x"))["status"], "failed");
}

#[test]
fn failed_run_is_marked_in_manifest() {
    let f = Fixture::new();
    let empty = f.path("empty");
    fs::create_dir_all(&empty).unwrap();
    fs::write(empty.join("labeled.jsonl"), "").unwrap();
    let run = f.path("run");
    let out = semidial(&["pretrain", "--config", s(&f.config), "--corpus", s(&empty), "--run-dir", s(&run)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
    let m = manifest(&run);
    assert_eq!(m["status"], "failed");
    assert!(m["error"].as_str().unwrap().contains("empty"));
}

#[test]
fn run_dir_is_not_reused() {
    let f = Fixture::new();
    let run = f.path("run");
    assert!(f.run("pretrain", &run, &[]).status.success());
    let out = f.run("pretrain", &run, &[]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("already contains"));
}

#[test]
fn eval_on_perfect_predictions() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.jsonl");
    let text = [
        r#"{"dialog_id": "a", "turn": 1, "response": "the phone number is 01223 350688 thank you", "das": ["inform"]}"#,
        r#"{"dialog_id": "a", "turn": 3, "response": "would you like bombay or golden in the centre", "das": ["select", "request"]}"#,
        r#"{"dialog_id": "b", "turn": 1, "response": "hello , how can i help you today", "das": ["hi"]}"#,
    ]
    .join("\n");
    fs::write(&refs, text).unwrap();
    let out = dir.path().join("eval.json");
    let stdout = ok(&["eval", "--predictions", s(&refs), "--references", s(&refs), "--metric1", "94.4", "--metric2", "85.3", "--out", s(&out)]);
    let report: Value = serde_json::from_str(&stdout).unwrap();
    assert_eq!(report["da_f1"].as_f64().unwrap(), 1.0);
    assert!((report["bleu"].as_f64().unwrap() - 100.0).abs() < 1e-9);
    assert!((report["comb"].as_f64().unwrap() - 189.85).abs() < 1e-9);
    assert_eq!(serde_json::from_str::<Value>(&fs::read_to_string(out).unwrap()).unwrap(), report);
}

#[test]
fn eval_reports_missing_predictions() {
    let dir = TempDir::new().unwrap();
    let refs = dir.path().join("refs.jsonl");
    let preds = dir.path().join("preds.jsonl");
    fs::write(&refs, r#"{"dialog_id": "a", "turn": 1, "response": "hi there"}"#).unwrap();
    fs::write(&preds, r#"{"dialog_id": "a", "turn": 2, "response": "hi there"}"#).unwrap();
    let out = semidial(&["eval", "--predictions", s(&preds), "--references", s(&refs)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("no prediction for a turn 1"));
}

#[test]
fn unknown_flag_exits_nonzero() {
    let out = semidial(&["pretrain", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));
}

#[test]
fn invalid_config_exits_nonzero() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.toml");
    fs::write(&bad, "[train]\nlearning_rat = 0.1\n").unwrap();
    let out = semidial(&["--config", s(&bad), "synth", "--out", s(&dir.path().join("c"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rat"));
    fs::write(&bad, "[train]\nepochs = 0\n").unwrap();
    let out = semidial(&["--config", s(&bad), "synth", "--out", s(&dir.path().join("c"))]);
    assert!(!out.status.success());
}

#[test]
fn plot_curves_writes_svg_and_text() {
    let f = Fixture::new();
    let run = f.path("run");
    assert!(f.run("pretrain", &run, &[]).status.success());
    let svg = f.path("curves.svg");
    let text = ok(&["plot-curves", "--metrics", s(&run.join("metrics.csv")), "--out", s(&svg), "--ascii"]);
    assert!(fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    assert!(text.contains("held-out act F1"));
    assert!(text.contains('*'));
}

#[test]
fn clean_and_validate() {
    let dir = TempDir::new().unwrap();
    let raw = dir.path().join("raw.jsonl");
    let lines = [
        r#"{"dialog_id": "a", "turns": [{"role": "user", "text": "see www.example.com"}]}"#,
        r#"{"dialog_id": "b", "turns": [{"role": "user", "text": "hello there"}, {"role": "system", "text": "hi"}]}"#,
        "not json",
    ];
    fs::write(&raw, lines.join("\n")).unwrap();
    let cleaned = dir.path().join("clean.jsonl");
    let report: Value = serde_json::from_str(&ok(&["clean", "--input", s(&raw), "--output", s(&cleaned)])).unwrap();
    assert_eq!(report["kept"], 1);
    assert_eq!(report["url"], 1);
    assert_eq!(report["malformed"], 1);
    ok(&["validate", "--corpus", s(&cleaned)]);
    let out = semidial(&["validate", "--corpus", s(&cleaned), "--labeled"]);
    assert!(!out.status.success());
}
