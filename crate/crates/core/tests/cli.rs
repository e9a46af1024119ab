use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::sync::OnceLock;

use serde_json::Value;
use spantrack::data::Corpus;
use spantrack::eval::evaluate;
use spantrack::heads::slot_head_parameter_count;
use spantrack::tracker::{track_dialogue, ModelBundle};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spantrack"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

/// Corpora plus a toy model trained until it fits its own training set.
fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let f = Fixture {
            dir: tempfile::tempdir().unwrap(),
        };
        let data = f.path("data");
        let out = run(&["gen-data", "--profile", "sim-m-like", "--seed", "7", "--out", s(&data), "--train-dialogues", "50", "--dev-dialogues", "10", "--test-dialogues", "10"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        std::fs::write(f.path("config.json"), r#"{"max_epochs": 200, "patience": 200, "target_accuracy": 0.95}"#).unwrap();
        let train = data.join("train.json");
        let out = run(&["train", "--train", s(&train), "--dev", s(&train), "--config", s(&f.path("config.json")), "--out", s(&f.path("model.bdst"))]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        f
    })
}

#[test]
fn gen_data_writes_splits_and_stats() {
    let f = fixture();
    for split in ["train", "dev", "test"] {
        Corpus::load(f.path(&format!("data/{split}.json"))).unwrap();
    }
    let stats: Value = serde_json::from_str(&std::fs::read_to_string(f.path("data/stats.json")).unwrap()).unwrap();
    assert_eq!(stats["oov_slots"], serde_json::json!(["movie"]));
    assert_eq!(stats["splits"]["train"]["dialogues"], 50);
    assert!(stats["splits"]["test"]["slots"]["movie"]["oov_values"].as_u64().unwrap() > 0);
}

#[test]
fn train_writes_history() {
    let f = fixture();
    let history = std::fs::read_to_string(f.path("model.bdst.history.jsonl")).unwrap();
    let lines: Vec<Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines[0]["meta"]["reference_learning_rate"], 2e-5);
    assert_eq!(lines.last().unwrap()["summary"]["stop_reason"], "target_reached");
    for (i, l) in lines[1..lines.len() - 1].iter().enumerate() {
        assert_eq!(l["epoch"], i + 1);
        assert!(l["train_loss"].as_f64().unwrap() > 0.0);
    }
}

#[test]
fn eval_on_training_corpus_emits_report() {
    let f = fixture();
    let report_path = f.path("report.json");
    let out = run(&["eval", "--model", s(&f.path("model.bdst")), "--corpus", s(&f.path("data/train.json")), "--report", s(&report_path)]);
    assert!(out.status.success());
    let text = std::fs::read_to_string(&report_path).unwrap();
    let report: Value = serde_json::from_str(&text).unwrap();
    let order = ["joint_goal_accuracy", "per_slot_accuracy", "turn_count", "dialogue_count", "config", "seed"];
    let at: Vec<usize> = order.iter().map(|k| text.find(&format!("\n  \"{k}\"")).unwrap()).collect();
    assert!(at.windows(2).all(|w| w[0] < w[1]), "{at:?}");
    assert!(report["joint_goal_accuracy"].as_f64().unwrap() >= 0.95);
    let model = ModelBundle::load(f.path("model.bdst")).unwrap();
    let corpus = Corpus::load(f.path("data/train.json")).unwrap();
    assert_eq!(text, evaluate(&model, &corpus).unwrap().to_json());
    let again = run(&["eval", "--model", s(&f.path("model.bdst")), "--corpus", s(&f.path("data/train.json"))]);
    assert_eq!(String::from_utf8(again.stdout).unwrap().trim_end(), text);
}

#[test]
fn interactive_tracking_prints_one_state_per_turn() {
    let f = fixture();
    let mut child = bin()
        .args(["track", "--model", s(&f.path("model.bdst")), "--interactive"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(b"\nbook for 7 pm\n").unwrap();
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines.len(), 1, "{stdout}");
    let state: Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(state["time"], "7 pm", "{stdout}");
    let prompts = String::from_utf8(out.stderr).unwrap();
    assert!(prompts.starts_with("system> user> "), "{prompts}");
}

#[test]
fn dialogue_tracking_matches_library() {
    let f = fixture();
    let corpus = Corpus::load(f.path("data/test.json")).unwrap();
    let dialogue = &corpus.dialogues[0];
    let path = f.path("dialogue.json");
    let turns: Vec<Value> = dialogue.turns.iter().map(|t| serde_json::json!({"system": t.system, "user": t.user})).collect();
    std::fs::write(&path, serde_json::to_string(&turns).unwrap()).unwrap();
    let out = run(&["track", "--model", s(&f.path("model.bdst")), "--dialogue", s(&path)]);
    assert!(out.status.success());
    let model = ModelBundle::load(f.path("model.bdst")).unwrap();
    let want: Vec<String> = track_dialogue(&model, &dialogue.turn_pairs()).unwrap().iter().map(|s| serde_json::to_string(s).unwrap()).collect();
    let got: Vec<String> = String::from_utf8(out.stdout).unwrap().lines().map(String::from).collect();
    assert_eq!(got, want);
}

#[test]
fn params_match_counting_formula() {
    let f = fixture();
    let out = run(&["params", "--model", s(&f.path("model.bdst"))]);
    assert!(out.status.success());
    let p: Value = serde_json::from_slice(&out.stdout).unwrap();
    let model = ModelBundle::load(f.path("model.bdst")).unwrap();
    let enc = model.config().parameter_count();
    let heads = slot_head_parameter_count(model.config().hidden_size) * model.slots().len();
    assert_eq!(p["encoder_parameters"], enc);
    assert_eq!(p["head_parameters"], heads);
    assert_eq!(p["total"], enc + heads);
    assert_eq!(p["stored_scalars"], enc + heads);
}

#[test]
fn usage_errors_exit_2_and_runtime_errors_exit_1() {
    let f = fixture();
    let missing = f.path("missing.bdst");
    for args in [
        vec!["eval", "--bogus"],
        vec!["eval", "--model", s(&missing), "--corpus", s(&missing)],
        vec!["track", "--model", s(&missing)],
        vec!["gen-data", "--profile", "nope", "--out", s(&missing)],
        vec!["frobnicate"],
    ] {
        let out = run(&args);
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let corrupt = f.path("corrupt.bdst");
    let mut bytes = std::fs::read(f.path("model.bdst")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    std::fs::write(&corrupt, bytes).unwrap();
    let out = run(&["params", "--model", s(&corrupt)]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("checksum"));
}

#[test]
fn ablation_and_sharing_commands_write_tables() {
    let f = fixture();
    let data = f.path("data");
    let cfg = f.path("small.json");
    std::fs::write(&cfg, r#"{"max_epochs": 1, "encoder": {"num_layers": 1, "hidden_size": 8, "feed_forward_size": 8}}"#).unwrap();
    let (tr, dv, te) = (data.join("train.json"), data.join("dev.json"), data.join("test.json"));
    let out_dir = f.path("ablation");
    let out = run(&["ablate-svd", "--train", s(&tr), "--dev", s(&dv), "--test", s(&te), "--config", s(&cfg), "--grid", "0,0.2", "--seeds", "1", "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(out_dir.join("svd_ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert!(csv.starts_with("p,seed,test_joint_acc,oov_slot_acc"));
    let out = run(&["ablate-svd", "--train", s(&tr), "--dev", s(&dv), "--test", s(&te), "--grid", "0,1.5", "--out", s(&out_dir)]);
    assert_eq!(out.status.code(), Some(1));

    let out_dir = f.path("sharing");
    let out = run(&["compare-sharing", "--train", s(&tr), "--dev", s(&dv), "--test", s(&te), "--config", s(&cfg), "--out", s(&out_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let table: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("sharing.json")).unwrap()).unwrap();
    let rows = table["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 2);
    let enc = rows[0]["report"]["config"]["encoder"].clone();
    let enc: spantrack::encoder::EncoderConfig = serde_json::from_value(enc).unwrap();
    let diff = rows[1]["parameter_count"].as_u64().unwrap() - rows[0]["parameter_count"].as_u64().unwrap();
    assert_eq!(diff as usize, 4 * enc.parameter_count());
}
