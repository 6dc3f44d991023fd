use std::path::Path;
use std::process::{Command, Output};

use ars_core::trainer::{init_model, Checkpoint, RunConfig};

fn ars(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ars"))
        .args(args)
        .output()
        .unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(args: &[&str]) -> String {
    let o = ars(args);
    assert!(o.status.success(), "ars {args:?} failed: {}", stderr(&o));
    stdout(&o)
}

fn s(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

const SMALL: [&str; 8] = [
    "--corpus-size",
    "120",
    "--train-queries",
    "40",
    "--test-queries",
    "20",
    "--pool-size",
    "5",
];

fn synth(dir: &Path, mode: &str) {
    let mut args = vec!["synth", "--mode", mode, "--out"];
    let out = s(dir);
    args.push(&out);
    args.extend(SMALL);
    ok(&args);
}

/// Small planted data plus a two-epoch checkpoint and its index.
fn trained(dir: &Path) -> (String, String, String) {
    let data = dir.join("data");
    synth(&data, "planted");
    let ckpt = s(&dir.join("m.ckpt"));
    let idx = s(&dir.join("c.idx"));
    let corpus = s(&data.join("corpus.jsonl"));
    ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &ckpt,
        "--set",
        "epochs=2",
        "--set",
        "hidden_dim=16",
    ]);
    ok(&[
        "index",
        "--checkpoint",
        &ckpt,
        "--corpus",
        &corpus,
        "--out",
        &idx,
    ]);
    (ckpt, idx, corpus)
}

#[test]
fn synth_writes_four_files_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    synth(&a, "planted");
    synth(&b, "planted");
    for f in ["corpus.jsonl", "train.jsonl", "test.jsonl", "spec.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert!(!x.is_empty());
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
}

#[test]
fn infeasible_synth_exits_2_and_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let o = ars(&[
        "synth",
        "--mode",
        "lexical",
        "--out",
        &s(dir.path()),
        "--corpus-size",
        "10",
        "--pool-size",
        "29",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("pool_size"), "{}", stderr(&o));
}

#[test]
fn zero_epochs_saves_the_initial_model() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "planted");
    let ckpt = dir.path().join("m.ckpt");
    let out = ok(&[
        "train",
        "--data",
        &s(&data),
        "--out",
        &s(&ckpt),
        "--set",
        "epochs=0",
        "--set",
        "hidden_dim=16",
    ]);
    assert!(out.contains("steps\t0"));
    let saved = Checkpoint::read(&ckpt).unwrap();
    let mut run = RunConfig::default();
    run.set("hidden_dim", "16").unwrap();
    assert_eq!(saved.model, init_model(&run).unwrap());
}

#[test]
fn train_on_missing_data_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = ars(&[
        "train",
        "--data",
        &s(&dir.path().join("nowhere")),
        "--out",
        &s(&dir.path().join("m.ckpt")),
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("m.ckpt").exists());
}

#[test]
fn query_returns_k_rows_in_score_order() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, idx, _) = trained(dir.path());
    let out = ok(&[
        "query",
        "--checkpoint",
        &ckpt,
        "--index",
        &idx,
        "--text",
        "c0p c1n c2p",
        "-k",
        "5",
    ]);
    let rows: Vec<Vec<&str>> = out.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 5);
    let scores: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    for (i, r) in rows.iter().enumerate() {
        assert_eq!(r[0], (i + 1).to_string());
        let rel: f64 = r[3].parse().unwrap();
        assert!(rel > 0.0 && rel < 1.0);
    }
}

#[test]
fn eval_writes_reports_for_every_method() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, idx, corpus) = trained(dir.path());
    let test = s(&dir.path().join("data/test.jsonl"));
    let out_dir = dir.path().join("reports");
    for method in ["ars", "dot", "bm25", "tfidf"] {
        let mut args = vec![
            "eval", "--method", method, "--corpus", &corpus, "--test", &test, "--ks", "1,5,10",
        ];
        let out = s(&out_dir);
        if method == "ars" || method == "dot" {
            args.extend(["--checkpoint", ckpt.as_str(), "--index", idx.as_str()]);
        }
        args.extend(["--out", out.as_str()]);
        let printed = ok(&args);
        assert!(printed.contains("top1\t") && printed.contains("top10\t"));
        let json = std::fs::read_to_string(out_dir.join(format!("topk_{method}.json"))).unwrap();
        assert!(json.contains(&format!("\"method\": \"{method}\"")));
        let csv = std::fs::read_to_string(out_dir.join(format!("topk_{method}.csv"))).unwrap();
        assert_eq!(csv.lines().count(), 4);
    }
}

#[test]
fn dense_eval_without_checkpoint_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    synth(&data, "planted");
    let o = ars(&[
        "eval",
        "--method",
        "ars",
        "--corpus",
        &s(&data.join("corpus.jsonl")),
        "--test",
        &s(&data.join("test.jsonl")),
        "--out",
        &s(dir.path()),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn gradcheck_passes_and_detects_a_fault() {
    let o = ars(&["gradcheck", "--trials", "3"]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("PASS"));
    let o = ars(&["gradcheck", "--trials", "3", "--fault", "transpose-wq"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stdout(&o).contains("FAIL"));
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(ars(&["train", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(ars(&["--threads", "0", "gradcheck"]).status.code(), Some(2));
    assert_eq!(ars(&["train", "--set", "epochs"]).status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, idx, _) = trained(dir.path());
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes.truncate(bytes.len() / 2);
    std::fs::write(&ckpt, bytes).unwrap();
    let o = ars(&[
        "query",
        "--checkpoint",
        &ckpt,
        "--index",
        &idx,
        "--text",
        "x",
    ]);
    assert_eq!(o.status.code(), Some(4));
}
