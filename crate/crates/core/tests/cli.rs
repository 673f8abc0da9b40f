mod common;

use std::path::Path;
use std::process::{Command, Output};

use corpusforge::corpus::{load_corpus, write_corpus};
use serde_json::{json, Value};

fn corpusforge(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_corpusforge"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

#[test]
fn pack_writes_records_and_stats() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 200, 1);
    let out = corpusforge(
        dir.path(),
        &["pack", "--in", "corpus.jsonl", "--L", "8192", "--method", "spfhp", "--out", "packs.jsonl", "--stats", "stats.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stats = read_json(&dir.path().join("stats.json"));
    assert_eq!(stats["method"], "spfhp");
    let packs = std::fs::read_to_string(dir.path().join("packs.jsonl")).unwrap();
    assert_eq!(packs.lines().count() as u64, stats["knapsacks"].as_u64().unwrap());
    for line in packs.lines() {
        let record: Value = serde_json::from_str(line).unwrap();
        assert!(record["total_length"].as_u64().unwrap() <= 8192);
    }
}

#[test]
fn oversize_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 10, 2);
    let out = corpusforge(dir.path(), &["pack", "--in", "corpus.jsonl", "--L", "16"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("capacity"));
}

#[test]
fn missing_input_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = corpusforge(dir.path(), &["report", "--in", "absent.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn filter_then_report() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 300, 3);
    let out = corpusforge(
        dir.path(),
        &["filter", "--in", "corpus.jsonl", "--out", "kept.jsonl", "--report", "summary.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary = read_json(&dir.path().join("summary.json"));
    let kept = load_corpus(dir.path().join("kept.jsonl")).unwrap();
    assert_eq!(summary["kept"].as_u64().unwrap() as usize, kept.len());
    assert!(summary["dropped"].as_u64().unwrap() > 0);

    let out = corpusforge(dir.path(), &["report", "--in", "kept.jsonl", "--out", "report.json"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("text-only share"));
    let report = read_json(&dir.path().join("report.json"));
    assert_eq!(report["distribution"]["total_effective"], report["stats"]["effective_total"]);
}

#[test]
fn mix_strict_floor() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<_> = (0..9)
        .map(|i| common::image(&format!("i{i}"), corpusforge::Category::GeneralVqa, "q", "a", 448, 448))
        .collect();
    write_corpus(&images, dir.path().join("vqa.jsonl")).unwrap();
    write_corpus(&[common::text("t0", "q", "a")], dir.path().join("text.jsonl")).unwrap();
    let manifests = json!([
        {"name": "vqa", "category": "general_vqa", "corpus_path": "vqa.jsonl", "stage": "stage2"},
        {"name": "text", "category": "text_only", "corpus_path": "text.jsonl", "stage": "stage2"}
    ]);
    std::fs::write(dir.path().join("m.json"), manifests.to_string()).unwrap();

    let lenient = corpusforge(dir.path(), &["mix", "--manifests", "m.json", "--stage", "stage2", "--out", "mix.jsonl"]);
    assert!(lenient.status.success());
    let strict = corpusforge(dir.path(), &["--strict", "mix", "--manifests", "m.json", "--stage", "stage2"]);
    assert_eq!(strict.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&strict.stderr).contains("text_only_floor"));
}

#[test]
fn augment_offline_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let pool = vec![common::text("m1", "What is 2+2?", "4"), common::text("m2", "What is 3+3?", "6")];
    write_corpus(&pool, dir.path().join("math.jsonl")).unwrap();
    let out = corpusforge(dir.path(), &["augment", "emit", "--in", "math.jsonl", "--kind", "cot", "--out", "req.jsonl"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let requests = std::fs::read_to_string(dir.path().join("req.jsonl")).unwrap();
    assert_eq!(requests.lines().count(), 2);

    std::fs::write(
        dir.path().join("resp.jsonl"),
        "{\"request_id\":\"cot:m1\",\"text\":\"2+2 means adding two and two, so 4.\"}\n{\"request_id\":\"cot:m2\",\"text\":\"3+3 = 7\"}\n",
    )
    .unwrap();
    std::fs::write(
        dir.path().join("verdicts.jsonl"),
        "{\"request_id\":\"judge:m1\",\"text\":\"True\"}\n{\"request_id\":\"judge:m2\",\"text\":\"False\"}\n",
    )
    .unwrap();
    let out = corpusforge(
        dir.path(),
        &["augment", "apply", "--in", "math.jsonl", "--responses", "resp.jsonl", "--verdicts", "verdicts.jsonl", "--out", "aug.jsonl", "--stats", "st.json"],
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let augmented = load_corpus(dir.path().join("aug.jsonl")).unwrap();
    assert_eq!(augmented[0].turns[1].text, "2+2 means adding two and two, so 4.");
    assert_eq!(augmented[1].turns[1].text, "6");
    let stats = read_json(&dir.path().join("st.json"));
    assert_eq!((stats["accepted"].as_u64(), stats["rejected"].as_u64()), (Some(1), Some(1)));
}

#[test]
fn pipeline_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    common::write_fixture(dir.path(), 150, 4);
    let config = json!({
        "seed": 9,
        "workspace": "ws",
        "steps": [
            {"name": "ingest", "op": "ingest", "params": {"corpus": "corpus.jsonl"}},
            {"name": "select", "op": "select", "params": {"input": "@ingest", "quota_override": 50}},
            {"name": "pack", "op": "pack", "params": {"input": "@select", "stage": "stage1", "method": "greedy"}}
        ]
    });
    std::fs::write(dir.path().join("p.json"), config.to_string()).unwrap();
    assert!(corpusforge(dir.path(), &["pipeline", "--config", "p.json"]).status.success());
    let first = common::tree(&dir.path().join("ws"));
    assert!(corpusforge(dir.path(), &["pipeline", "--config", "p.json"]).status.success());
    assert_eq!(first, common::tree(&dir.path().join("ws")));
    assert!(first.contains_key("run_manifest.json"));
    assert_eq!(load_corpus(dir.path().join("ws/select/corpus.jsonl")).unwrap().len(), 50);
}
