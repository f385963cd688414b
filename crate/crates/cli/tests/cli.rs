use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use dtwc_cli::{run_with_io, EXIT_FAILURE, EXIT_OK, EXIT_USAGE};
use dtwc_core::corpus_io::TweetRecord;
use dtwc_core::synthetic::synthetic_corpus;

struct Run {
    code: i32,
    stdout: String,
    stderr: String,
}

fn dtwc(args: &[&str], stdin: &str) -> Run {
    let mut input = Cursor::new(stdin.as_bytes().to_vec());
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("dtwc").chain(args.iter().copied());
    let code = run_with_io(argv, &mut input, &mut out, &mut err);
    Run {
        code,
        stdout: String::from_utf8(out).unwrap(),
        stderr: String::from_utf8(err).unwrap(),
    }
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn write_csv(path: &Path, records: &[TweetRecord]) {
    let mut text = String::from("id,keyword,location,text,target\n");
    for r in records {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            r.id,
            r.keyword.as_deref().unwrap_or(""),
            quote(r.location.as_deref().unwrap_or("")),
            quote(&r.text),
            r.target.map(|t| t.to_string()).unwrap_or_default()
        ));
    }
    fs::write(path, text).unwrap();
}

fn corpus(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let path = dir.join(format!("train_{seed}.csv"));
    write_csv(&path, &synthetic_corpus(n, seed));
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn stats_reports_raw_and_dedup_counts() {
    let dir = tempfile::tempdir().unwrap();
    let mut records = synthetic_corpus(50, 1);
    let mut dup = records[0].clone();
    dup.id = 1000;
    records.push(dup);
    let path = dir.path().join("d.csv");
    write_csv(&path, &records);

    let r = dtwc(&["stats", s(&path)], "");
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["total"], 51);
    assert_eq!(v["dedup"]["total"], 50);
    assert_eq!(v["duplicates_removed"], 1);
    let per: u64 = v["per_class"].as_array().unwrap().iter().map(|x| x.as_u64().unwrap()).sum();
    assert_eq!(per, 51);

    assert_eq!(dtwc(&["stats", "--data", s(&path)], "").code, EXIT_OK);
    assert_eq!(dtwc(&["stats"], "").code, EXIT_USAGE);
    assert_eq!(dtwc(&["stats", "/nonexistent/x.csv"], "").code, EXIT_FAILURE);
}

#[test]
fn train_eval_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 300, 2);
    let out = dir.path().join("nb");
    let r = dtwc(
        &["train", "--data", s(&data), "--model", "nb", "--vectorizer", "tfidf", "--val", "0.15", "--seed", "2", "--out", s(&out)],
        "",
    );
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let summary: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    let f1 = summary["val_metrics"]["f1"].as_f64().unwrap();
    assert!(out.join("model.dtwc").exists() && out.join("metrics.json").exists());

    let model = out.join("model.dtwc");
    let r = dtwc(&["eval", "--model", s(&model), "--data", s(&data)], "");
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let report: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(report["f1"].as_f64().unwrap(), f1);
    assert!(r.stderr.is_empty(), "{}", r.stderr);

    let r = dtwc(&["eval", "--model", s(&model), "--data", s(&data), "--all", "--text"], "");
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stdout.contains("precision"));

    let r = dtwc(&["predict", "--model", s(&model)], "forest fire near the city\nnew album out lol\n\n");
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let lines: Vec<&str> = r.stdout.lines().collect();
    assert_eq!(lines.len(), 3);
    for line in &lines {
        let (label, score) = line.split_once('\t').unwrap();
        assert!(label == "0" || label == "1");
        let p: f64 = score.parse().unwrap();
        assert!((0.0..=1.0).contains(&p));
    }
    assert!(lines[0].starts_with('1'), "{}", lines[0]);

    let input = dir.path().join("texts.txt");
    fs::write(&input, "earthquake rescue\n").unwrap();
    let r = dtwc(&["predict", "--model", s(&model), "--input", s(&input)], "");
    assert_eq!(r.stdout.lines().count(), 1);
}

#[test]
fn predict_on_empty_input_prints_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 120, 3);
    let out = dir.path().join("m");
    assert_eq!(dtwc(&["train", "--data", s(&data), "--out", s(&out)], "").code, EXIT_OK);
    let r = dtwc(&["predict", "--model", s(&out.join("model.dtwc"))], "");
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stdout.is_empty());
}

#[test]
fn corrupted_container_is_a_model_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 120, 4);
    let out = dir.path().join("m");
    assert_eq!(dtwc(&["train", "--data", s(&data), "--out", s(&out)], "").code, EXIT_OK);
    let model = out.join("model.dtwc");
    let mut bytes = fs::read(&model).unwrap();
    bytes[0] = b'X';
    fs::write(&model, &bytes).unwrap();
    let r = dtwc(&["predict", "--model", s(&model)], "fire\n");
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stderr.contains("bad magic"), "{}", r.stderr);
}

#[test]
fn eval_warns_on_vocabulary_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 150, 5);
    let other = corpus(dir.path(), 150, 6);
    let out = dir.path().join("m");
    assert_eq!(dtwc(&["train", "--data", s(&data), "--out", s(&out)], "").code, EXIT_OK);
    let r = dtwc(&["eval", "--model", s(&out.join("model.dtwc")), "--data", s(&other)], "");
    assert_eq!(r.code, EXIT_OK);
    assert!(r.stderr.contains("VocabMismatch"), "{}", r.stderr);
}

#[test]
fn encoder_training_writes_history() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 80, 7);
    let out = dir.path().join("enc");
    let r = dtwc(
        &[
            "train", "--data", s(&data), "--model", "encoder", "--layers", "1", "--hidden", "16", "--heads", "2",
            "--ffn", "32", "--max-len", "16", "--epochs", "2", "--out", s(&out),
        ],
        "",
    );
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let history = fs::read_to_string(out.join("history.jsonl")).unwrap();
    let rows: Vec<serde_json::Value> = history.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[1]["epoch"], 2);
    assert!(rows[0]["loss"].as_f64().unwrap() > 0.0);
    assert!(rows[0].get("val_f1").is_some());
}

#[test]
fn sweep_rows_match_grid_size_and_order() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 200, 8);
    let csv = dir.path().join("sweep.csv");
    let r = dtwc(
        &[
            "sweep", "--data", s(&data), "--grid", "vectorizer=count,tfidf", "--grid", "alpha=0.5,1,2", "--out",
            s(&csv), "--summary",
        ],
        "",
    );
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let text = fs::read_to_string(&csv).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1 + 6);
    assert!(lines[0].starts_with("vectorizer,alpha,model"));
    assert!(lines[1].starts_with("count,0.5,nb,count,"));
    assert!(lines[6].starts_with("tfidf,2,nb,tfidf,"));
    assert!(r.stdout.contains("Mean F1-Score"));

    // Same grid to stdout: identical CSV regardless of worker scheduling.
    let r = dtwc(&["sweep", "--data", s(&data), "--grid", "vectorizer=count,tfidf", "--grid", "alpha=0.5,1,2"], "");
    assert_eq!(r.stdout, text);
}

#[test]
fn default_sweep_grid_has_three_points() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 120, 9);
    let r = dtwc(&["sweep", "--data", s(&data)], "");
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    assert_eq!(r.stdout.lines().count(), 4);
    assert!(r.stdout.starts_with("alpha,"));
}

#[test]
fn config_file_supplies_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 150, 10);
    let cfg = dir.path().join("recipe.cfg");
    fs::write(&cfg, format!("data={}\nmodel=svm\nvectorizer=count\nseed=4\n", data.display())).unwrap();
    let r = dtwc(&["train", "--config", s(&cfg), "--vectorizer", "tfidf"], "");
    assert_eq!(r.code, EXIT_OK, "{}", r.stderr);
    let v: serde_json::Value = serde_json::from_str(&r.stdout).unwrap();
    assert_eq!(v["model"], "svm");
    assert_eq!(v["vectorizer"], "tfidf");
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(dtwc(&[], "").code, EXIT_USAGE);
    assert_eq!(dtwc(&["frobnicate"], "").code, EXIT_USAGE);
    assert_eq!(dtwc(&["train", "--model", "tree"], "").code, EXIT_USAGE);
    assert_eq!(dtwc(&["train"], "").code, EXIT_USAGE);
    assert_eq!(dtwc(&["sweep", "--data", "x.csv", "--grid", "nonsense"], "").code, EXIT_USAGE);
    let help = dtwc(&["--help"], "");
    assert_eq!(help.code, EXIT_OK);
    assert!(help.stdout.contains("sweep"));
}

#[test]
fn incompatible_combination_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let data = corpus(dir.path(), 100, 11);
    let r = dtwc(&["train", "--data", s(&data), "--model", "nb", "--vectorizer", "cbow", "--embed-dim", "8"], "");
    assert_eq!(r.code, EXIT_FAILURE);
    assert!(r.stderr.contains("non-negative"));
}
