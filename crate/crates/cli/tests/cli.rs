use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use concord_core::evaluation::{
    classification_metrics, compare_models, confusion_matrix, parse_gold_jsonl, parse_training_log, select_epoch,
    EpochPolicy, PredictionSet,
};
use concord_core::plan_rounds;
use tempfile::TempDir;

const TRAINING_LOG: &str = "\
Epoch,Training Loss,Validation Loss,Accuracy,Precision,Recall,F1
1,0.7539,0.9286,0.9247,0.4624,0.5000,0.4804
2,0.7688,0.6723,0.9247,0.4624,0.5000,0.4804
3,0.5976,0.9373,0.9281,0.8220,0.5361,0.5488
4,0.4941,0.9430,0.9292,0.7643,0.5915,0.6274
5,0.3664,0.9327,0.9202,0.7010,0.6415,0.6645
6*,0.3199,1.0339,0.9213,0.6987,0.6079,0.6360
";

const GOLD: &str = r#"{"id":"a","label":1,"text":"they are vermin"}
{"id":"b","label":0,"text":"lovely weather"}
{"id":"c","label":1,"text":"I hate them all"}
{"id":"d","label":0,"text":"the match was great"}
{"id":"e","label":0,"text":"hate crimes are rising, says report"}
"#;

const PRED: &str = r#"{"id":"a","score":0.9}
{"id":"b","score":0.2}
{"id":"c","score":0.4}
{"id":"d","score":0.1}
{"id":"e","score":0.7}
"#;

fn concord(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_concord"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn workdir() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("log.csv"), TRAINING_LOG).unwrap();
    fs::write(dir.path().join("gold.jsonl"), GOLD).unwrap();
    fs::write(dir.path().join("bert.jsonl"), PRED).unwrap();
    dir
}

#[test]
fn plan_prints_round_sizes() {
    let dir = workdir();
    let out = concord(dir.path(), &["plan", "--total", "10633", "--rounds", "4", "--growth", "2.0"]);
    assert_eq!(stdout(&out), "709 1418 2835 5671\n");
    let json = stdout(&concord(
        dir.path(),
        &["plan", "--total", "10633", "--rounds", "4", "--growth", "2.0", "--format", "json"],
    ));
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    let direct = serde_json::to_value(plan_rounds(10633, 4, 2.0).unwrap()).unwrap();
    assert_eq!(parsed, direct);
}

#[test]
fn select_epoch_prints_the_trajectory_choice() {
    let dir = workdir();
    assert_eq!(stdout(&concord(dir.path(), &["select-epoch", "--log", "log.csv"])), "5\n");
    let log = parse_training_log(TRAINING_LOG).unwrap();
    let min_loss = select_epoch(&log, EpochPolicy::MinValLoss).unwrap();
    assert_eq!(
        stdout(&concord(dir.path(), &["select-epoch", "--log", "log.csv", "--policy", "min-val-loss"])),
        format!("{min_loss}\n")
    );
}

#[test]
fn evaluate_matches_direct_module_call() {
    let dir = workdir();
    let out = stdout(&concord(
        dir.path(),
        &["evaluate", "--gold", "gold.jsonl", "--pred", "bert.jsonl", "--format", "json"],
    ));
    let gold = parse_gold_jsonl(GOLD).unwrap();
    let preds = PredictionSet::from_jsonl("bert", PRED, 0.5).unwrap();
    let metrics = classification_metrics(&confusion_matrix(&gold, &preds).unwrap()).unwrap();
    let expected = serde_json::json!({ "model": "bert", "metrics": metrics });
    assert_eq!(out, format!("{}\n", serde_json::to_string_pretty(&expected).unwrap()));
}

#[test]
fn compare_matches_direct_module_call() {
    let dir = workdir();
    let out = stdout(&concord(
        dir.path(),
        &["compare", "--gold", "gold.jsonl", "--pred", "BERT=bert.jsonl", "--positive-label", "Hate", "--format", "csv"],
    ));
    let gold = parse_gold_jsonl(GOLD).unwrap();
    let preds = PredictionSet::from_jsonl("BERT", PRED, 0.5).unwrap();
    assert_eq!(out, compare_models(&gold, &[preds], "Hate").to_csv());
}

#[test]
fn compare_adds_a_keyword_row() {
    let dir = workdir();
    fs::write(dir.path().join("keywords.txt"), "# slurs\nvermin\nhate\n").unwrap();
    let out = stdout(&concord(
        dir.path(),
        &["compare", "--gold", "gold.jsonl", "--keywords", "keywords.txt", "--format", "json"],
    ));
    let report: serde_json::Value = serde_json::from_str(&out).unwrap();
    let row = &report["rows"][0];
    assert_eq!(row["model_name"], "Keyword classifier");
    // a, c, e flagged; a, c positive: 4 of 5 correct
    assert!((row["accuracy"].as_f64().unwrap() - 0.8).abs() < 1e-12);
}

#[test]
fn missing_input_file_exits_with_one() {
    let dir = workdir();
    let out = concord(dir.path(), &["compare", "--gold", "gold.jsonl", "--pred", "nope.jsonl"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.starts_with("error:"), "{err}");
    assert!(err.contains("nope.jsonl"), "{err}");
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = workdir();
    let unknown = concord(dir.path(), &["plan", "--total", "10", "--rounds", "2", "--growth", "2", "--bogus"]);
    assert_eq!(unknown.status.code(), Some(2));
    let missing_seed = concord(dir.path(), &["sample", "--input", "gold.jsonl", "--n", "2"]);
    assert_eq!(missing_seed.status.code(), Some(2));
    let bad_format = concord(dir.path(), &["select-epoch", "--log", "log.csv", "--format", "xml"]);
    assert_eq!(bad_format.status.code(), Some(2));
}

#[test]
fn domain_errors_exit_with_one() {
    let dir = workdir();
    let out = concord(dir.path(), &["plan", "--total", "10", "--rounds", "0", "--growth", "2"]);
    assert_eq!(out.status.code(), Some(1));
    let out = concord(dir.path(), &["aggregate", "--campaign", "missing"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn sample_is_seeded() {
    let dir = workdir();
    let a = stdout(&concord(dir.path(), &["sample", "--input", "gold.jsonl", "--n", "3", "--seed", "7"]));
    let b = stdout(&concord(dir.path(), &["sample", "--input", "gold.jsonl", "--n", "3", "--seed", "7"]));
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 3);
    let lines: Vec<&str> = GOLD.lines().collect();
    let direct = concord_core::sample_pool(&lines, 3, 7).unwrap();
    assert_eq!(a, direct.iter().map(|l| format!("{l}\n")).collect::<String>());
}

fn campaign_run(dir: &Path, out_dir: &str) -> String {
    let items: String = (0..30)
        .map(|i| format!("{{\"id\":\"p{i:02}\",\"text\":\"post number {i}\"}}\n"))
        .collect();
    fs::write(dir.join("items.jsonl"), items).unwrap();
    fs::write(dir.join("concord.toml"), "store = \"store\"\ncampaign = \"demo\"\n").unwrap();
    let run = |args: &[&str]| {
        let mut full = vec!["--config", "concord.toml"];
        full.extend_from_slice(args);
        stdout(&concord(dir, &full))
    };
    run(&["init", "--annotators", "ann1,ann2,ann3"]);
    run(&["import", "--input", "items.jsonl"]);
    let units = run(&["assign", "--seed", "11", "--size", "30", "--format", "csv"]);
    for (n, line) in units.lines().skip(1).enumerate() {
        let cols: Vec<&str> = line.split(',').collect();
        let (item, annotator) = (cols[1], cols[2]);
        let number: usize = item[1..].parse().unwrap();
        // everyone agrees except on every fifth post
        let class = if number.is_multiple_of(5) { (n % 3).to_string() } else { (number % 3).to_string() };
        run(&[
            "submit", "--annotator", annotator, "--item", item, "--round", "1", "--class", &class, "--key",
            &format!("k{n}"),
        ]);
    }
    run(&["close-round", "--round", "1"]);
    run(&["holdout", "--fraction", "0.2", "--seed", "3"]);
    run(&["export", "--seed", "5", "--out", out_dir, "--stratified", "--flags", "--csv"])
}

#[test]
fn cli_campaign_exports_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let manifest_a = campaign_run(a.path(), "out");
    let manifest_b = campaign_run(b.path(), "out");
    assert_eq!(manifest_a, manifest_b);
    let files = |d: &Path| {
        let mut names: Vec<_> = fs::read_dir(d.join("out")).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.iter().map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap())).collect::<Vec<_>>()
    };
    let (fa, fb) = (files(a.path()), files(b.path()));
    assert!(fa.len() >= 3);
    assert_eq!(fa, fb);

    let labels = stdout(&concord(a.path(), &["--config", "concord.toml", "aggregate", "--format", "csv"]));
    assert!(labels.starts_with("item_id"));
    let again = concord(a.path(), &["--config", "concord.toml", "close-round", "--round", "1"]);
    assert_eq!(again.status.code(), Some(1));
}
