use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn corpus() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/corpus.txt")
}

fn sg(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_specgraph"))
        .current_dir(dir)
        .env_remove("SPECGRAPH_OUT_DIR")
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let o = sg(dir, args);
    assert!(o.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

/// Draft and target models plus a prompt file in a fresh directory.
fn workspace() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let c = corpus();
    let c = c.to_str().unwrap();
    ok(dir.path(), &["train", "--corpus", c, "--order", "2", "--out", "draft.bin"]);
    ok(dir.path(), &["train", "--corpus", c, "--order", "5", "--out", "target.bin"]);
    let text = std::fs::read_to_string(corpus()).unwrap();
    let prompts: Vec<String> = text
        .lines()
        .filter(|l| l.split_whitespace().count() >= 8)
        .step_by(37)
        .take(12)
        .map(|l| l.split_whitespace().take(8).collect::<Vec<_>>().join(" "))
        .collect();
    std::fs::write(dir.path().join("prompts.txt"), prompts.join("\n")).unwrap();
    dir
}

fn run(dir: &Path, name: &str, extra: &[&str]) -> String {
    let mut args = vec![
        "run", "--draft-model", "draft.bin", "--target-model", "target.bin", "--prompts", "prompts.txt",
        "--name", name, "--max-output", "32",
    ];
    args.extend_from_slice(extra);
    ok(dir, &args)
}

fn read(dir: &Path, file: &str) -> String {
    std::fs::read_to_string(dir.join(file)).unwrap()
}

#[test]
fn train_and_query_tiny_corpus() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.txt"), "a b a b a").unwrap();
    let out = ok(dir.path(), &["train", "--corpus", "c.txt", "--order", "2", "--lambda", "1", "--out", "m.bin"]);
    assert!(out.contains("vocabulary size:"));
    assert!(out.contains("2-grams:"));
    let q = ok(dir.path(), &["query", "--model", "m.bin", "--context", "a", "--top", "1"]);
    assert_eq!(q.trim(), "b\t1.000000");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = sg(dir.path(), &["train", "--corpus", "nope.txt", "--out", "m.bin"]);
    assert_eq!(missing.status.code(), Some(2));
    let usage = sg(dir.path(), &["run", "--mode", "sideways"]);
    assert_eq!(usage.status.code(), Some(1));
    let no_args = sg(dir.path(), &["frobnicate"]);
    assert_eq!(no_args.status.code(), Some(1));
    let bad_study = sg(dir.path(), &["analyze", "--study", "astrology", "x.trace.jsonl"]);
    assert_eq!(bad_study.status.code(), Some(1));
}

#[test]
fn runs_are_lossless_and_reproducible() {
    let ws = workspace();
    let d = ws.path();
    run(d, "van", &["--mode", "vanilla"]);
    run(d, "gsd", &["--mode", "gsd"]);
    run(d, "ssd", &["--mode", "ssd"]);
    run(d, "gsd2", &["--mode", "gsd"]);
    assert_eq!(read(d, "van.outputs.txt"), read(d, "gsd.outputs.txt"));
    assert_eq!(read(d, "van.outputs.txt"), read(d, "ssd.outputs.txt"));
    let strip = |s: String| s.replacen("\"name\":\"gsd2\"", "\"name\":\"gsd\"", 1);
    assert_eq!(read(d, "gsd.trace.jsonl"), strip(read(d, "gsd2.trace.jsonl")));

    run(d, "s1", &["--stochastic", "--seed", "4"]);
    run(d, "s2", &["--stochastic", "--seed", "4"]);
    assert_eq!(read(d, "s1.outputs.txt"), read(d, "s2.outputs.txt"));

    let metrics: serde_json::Value = serde_json::from_str(&read(d, "gsd.metrics.json")).unwrap();
    assert_eq!(metrics["mode"], "gsd");
    assert_eq!(metrics["prompts"], 12);
}

#[test]
fn compare_table_and_csv() {
    let ws = workspace();
    let d = ws.path();
    for mode in ["vanilla", "ssd", "tsd", "gsd"] {
        run(d, mode, &["--mode", mode]);
    }
    let table = ok(d, &[
        "compare", "vanilla.trace.jsonl", "ssd.trace.jsonl", "tsd.trace.jsonl", "gsd.trace.jsonl", "--csv", "cmp.csv",
    ]);
    assert!(table.lines().next().unwrap().contains("modeled_speedup"));
    let csv = read(d, "cmp.csv");
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(
        rows[0],
        ["name", "mode", "acceptance_rate", "drafted_tokens", "drafted_per_stage", "graph_success", "modeled_speedup", "wall_clock_s", "output_tokens"]
    );
    assert_eq!(rows.len(), 5);
    assert_eq!(rows[1][1], "vanilla");
    assert_eq!(rows[1][5], "-");
    assert_eq!(rows[1][6], "1.0000");
    assert_eq!(rows[2][5], "-");
    assert_ne!(rows[3][5], "-");
    let out_tokens: Vec<&str> = rows[1..].iter().map(|r| r[8]).collect();
    assert!(out_tokens.iter().all(|t| *t == out_tokens[0]));
}

#[test]
fn compare_rejects_different_prompt_sets() {
    let ws = workspace();
    let d = ws.path();
    run(d, "a", &["--mode", "ssd"]);
    std::fs::write(d.join("other.txt"), "the program is free software\nyou may copy it").unwrap();
    ok(d, &[
        "run", "--draft-model", "draft.bin", "--target-model", "target.bin", "--prompts", "other.txt", "--name", "b", "--max-output", "8",
    ]);
    let o = sg(d, &["compare", "a.trace.jsonl", "b.trace.jsonl"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("different prompt set"));
}

#[test]
fn vocabulary_mismatch_is_an_error() {
    let ws = workspace();
    let d = ws.path();
    std::fs::write(d.join("small.txt"), "one two three two one").unwrap();
    ok(d, &["train", "--corpus", "small.txt", "--order", "2", "--out", "small.bin"]);
    let o = sg(d, &[
        "run", "--draft-model", "small.bin", "--target-model", "target.bin", "--prompts", "prompts.txt", "--name", "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("vocabular"));
}

#[test]
fn analysis_studies() {
    let ws = workspace();
    let d = ws.path();
    run(d, "k1", &["--mode", "tsd", "--k", "1", "--trace-graphs"]);
    run(d, "k4", &["--mode", "tsd", "--k", "4", "--trace-graphs", "--theta-prob", "0.05"]);
    let overlap = ok(d, &["analyze", "--study", "overlap", "k1.trace.jsonl", "k4.trace.jsonl", "--n-max", "3"]);
    let lines: Vec<&str> = overlap.lines().collect();
    assert_eq!(lines[0], "trace,mode,n,covered,total,fraction");
    for l in lines.iter().filter(|l| l.starts_with("k1,")) {
        assert_eq!(l.split(',').nth(3), Some("0"), "{l}");
    }

    run(d, "tau10", &["--mode", "gsd", "--tau", "10", "--record-kl"]);
    let kl = ok(d, &["analyze", "--study", "kl", "tau10.trace.jsonl"]);
    assert!(kl.contains("no merge events"), "{kl}");
    let o = sg(d, &["analyze", "--study", "kl", "k1.trace.jsonl"]);
    assert_eq!(o.status.code(), Some(2));

    let ranks = ok(d, &["analyze", "--study", "child-rank", "k4.trace.jsonl", "--out", "ranks.csv"]);
    assert!(ranks.is_empty() || !ranks.contains("rank,count"));
    let csv = read(d, "ranks.csv");
    assert!(csv.starts_with("trace,mode,rank,count,fraction_of_steps,fraction_of_accepts"));
    assert!(csv.contains("k4,tsd,reject,"));

    let timing = ok(d, &["analyze", "--study", "timing", "k4.trace.jsonl"]);
    let row: Vec<f64> = timing.lines().nth(1).unwrap().split(',').skip(3).map(|x| x.parse().unwrap()).collect();
    assert!((row[0] + row[1] + row[2] - row[3]).abs() < 1e-9);
    assert!((row[4] + row[5] + row[6] - row[7]).abs() < 1e-9);
}

#[test]
fn config_file_and_flags() {
    let ws = workspace();
    let d = ws.path();
    std::fs::write(
        d.join("run.conf"),
        "# settings\nmode = tsd\nk = 2\ndraft_model = draft.bin\ntarget_model = target.bin\nprompts = prompts.txt\nmax_output = 16\n",
    )
    .unwrap();
    ok(d, &["run", "--config", "run.conf", "--name", "c1"]);
    ok(d, &["run", "--config", "run.conf", "--name", "c2", "--k", "3"]);
    let h1 = read(d, "c1.trace.jsonl");
    let h2 = read(d, "c2.trace.jsonl");
    assert!(h1.lines().next().unwrap().contains("\"k\":2"));
    assert!(h2.lines().next().unwrap().contains("\"k\":3"));
    std::fs::write(d.join("bad.conf"), "wibble = 3\n").unwrap();
    assert_eq!(sg(d, &["run", "--config", "bad.conf"]).status.code(), Some(1));
}
