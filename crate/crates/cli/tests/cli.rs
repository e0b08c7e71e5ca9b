//! End-to-end tests of the command-line surface against the scripted and
//! seeded mock backends.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_forestfix")
}

fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

struct Fixture {
    #[allow(dead_code)]
    dir: tempfile::TempDir,
    corpus: PathBuf,
    tasks: PathBuf,
    script: PathBuf,
    root: PathBuf,
}

fn fixture() -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();

    let corpus = root.join("corpus.jsonl");
    let mut lines = String::new();
    for j in 0..4 {
        lines.push_str(&format!(
            "{{\"id\":\"e{j}\",\"buggy\":\"int e{j} = bug ( ) ;\",\"fixed\":\"int e{j} = fix ( ) ;\"}}\n"
        ));
    }
    fs::write(&corpus, lines).unwrap();

    let tasks = root.join("tasks.jsonl");
    let mut lines = String::new();
    for i in 0..3 {
        lines.push_str(&format!(
            "{{\"id\":\"t{i}\",\"buggy\":\"int t{i} = bug ( ) ;\",\"fixed\":\"int t{i} = fix ( ) ;\"}}\n"
        ));
    }
    fs::write(&tasks, lines).unwrap();

    let script = root.join("script.json");
    let mut rules = vec![
        serde_json::json!({"pattern": "candidate error causes", "responses": ["1. missing guard"]}),
        serde_json::json!({"pattern": "candidate repair plans", "responses": ["1. add the guard"]}),
    ];
    for i in 0..3 {
        rules.push(serde_json::json!({
            "pattern": format!("int t{i}"),
            "responses": [format!("```\nint t{i} = fix ( ) ;\n```")]
        }));
    }
    fs::write(&script, serde_json::to_vec(&rules).unwrap()).unwrap();

    Fixture {
        dir,
        corpus,
        tasks,
        script,
        root,
    }
}

fn run_args<'a>(f: &'a Fixture, run_dir: &'a Path, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = [
        "run",
        "--corpus",
        f.corpus.to_str().unwrap(),
        "--tasks",
        f.tasks.to_str().unwrap(),
        "--backend",
        "scripted",
        "--script",
        f.script.to_str().unwrap(),
        "--run-dir",
        run_dir.to_str().unwrap(),
        "--shots",
        "2",
        "--trees",
        "2",
        "--top-n",
        "1",
        "--samples",
        "3",
        "--seed",
        "5",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn ingest_reports_stats() {
    let f = fixture();
    let out = run(&["ingest", f.corpus.to_str().unwrap()]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("loaded 4 example(s)"));
}

#[test]
fn ingest_missing_file_exits_io() {
    let out = run(&["ingest", "/nonexistent/corpus.jsonl"]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn index_writes_snapshot() {
    let f = fixture();
    let snap = f.root.join("index.snap");
    let out = run(&[
        "index",
        f.corpus.to_str().unwrap(),
        "--out",
        snap.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(snap.exists());
    assert!(stdout(&out).contains("indexed 4 doc(s)"));
}

#[test]
fn run_then_eval_roundtrip() {
    let f = fixture();
    let run_dir = f.root.join("run1");
    let args = run_args(&f, &run_dir, &[]);
    let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(run_dir.join("manifest.json").exists());
    assert!(run_dir.join("tasks.jsonl").exists());

    let eval = run(&["eval", run_dir.to_str().unwrap()]);
    assert!(eval.status.success());
    let table = stdout(&eval);
    assert!(table.contains("t3"));
    assert!(table.contains("100.00"));

    let report = f.root.join("report.json");
    let eval2 = run(&[
        "eval",
        run_dir.to_str().unwrap(),
        "--out",
        report.to_str().unwrap(),
    ]);
    assert!(eval2.status.success());
    let parsed: serde_json::Value = serde_json::from_slice(&fs::read(&report).unwrap()).unwrap();
    assert_eq!(parsed["rows"][0]["repair_rate"], 1.0);
}

#[test]
fn run_resumes_after_log_truncation() {
    let f = fixture();
    let run_dir = f.root.join("run1");
    let args = run_args(&f, &run_dir, &[]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    assert!(run(&argv).status.success());

    // drop the last entry; a rerun should execute exactly that task
    let log_path = run_dir.join("tasks.jsonl");
    let text = fs::read_to_string(&log_path).unwrap();
    let kept: Vec<&str> = text.lines().take(2).collect();
    fs::write(&log_path, format!("{}\n", kept.join("\n"))).unwrap();

    let out = run(&argv);
    assert!(out.status.success());
    assert!(stdout(&out).contains("1 executed, 2 skipped"));
    assert_eq!(fs::read_to_string(&log_path).unwrap().lines().count(), 3);
}

#[test]
fn run_with_config_file_and_flag_precedence() {
    let f = fixture();
    let run_dir = f.root.join("run-config");
    let config = f.root.join("run.toml");
    fs::write(
        &config,
        format!(
            "corpus = {:?}\ntasks = {:?}\nbackend = \"scripted\"\nscript = {:?}\nrun_dir = {:?}\nshots = 1\ntrees = 2\ntop_n = 1\nsamples = 2\nseed = 9\n",
            f.corpus, f.tasks, f.script, run_dir
        ),
    )
    .unwrap();
    // flag overrides the file's samples
    let out = run(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--samples",
        "4",
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let first_line = fs::read_to_string(run_dir.join("tasks.jsonl")).unwrap();
    let entry: serde_json::Value =
        serde_json::from_str(first_line.lines().next().unwrap()).unwrap();
    assert_eq!(entry["patch_samples"].as_array().unwrap().len(), 4);
}

#[test]
fn invalid_method_is_usage_error() {
    let f = fixture();
    let run_dir = f.root.join("run-bad");
    let args = run_args(&f, &run_dir, &["--method", "zen"]);
    let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn eval_without_runs_is_usage_error() {
    let out = run(&["eval"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn sweep_writes_series_and_caches() {
    let f = fixture();
    let sweep_dir = f.root.join("sweep");
    let cache_dir = f.root.join("cache");
    let mut args = run_args(
        &f,
        &sweep_dir,
        &["--cache-dir", cache_dir.to_str().unwrap()],
    );
    args[0] = "sweep".into();
    args.push("--shot-counts".into());
    args.push("1,2".into());
    args.push("--sweep-dir".into());
    args.push(sweep_dir.to_str().unwrap().into());
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let out = run(&argv);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let series = fs::read_to_string(sweep_dir.join("series.csv")).unwrap();
    assert!(series.starts_with("shots,repair_rate\n"));
    assert_eq!(series.lines().count(), 3);

    // warm-cache rerun reports zero backend calls
    for shots in [1, 2] {
        fs::remove_dir_all(sweep_dir.join(format!("shots-{shots}"))).unwrap();
    }
    let out = run(&argv);
    assert!(out.status.success());
}

#[test]
fn sweep_without_shot_counts_is_usage_error() {
    let f = fixture();
    let mut args = run_args(&f, &f.root.join("sweep"), &[]);
    args[0] = "sweep".into();
    let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn ablation_flags_accepted() {
    let f = fixture();
    let run_dir = f.root.join("run-ablate");
    let args = run_args(&f, &run_dir, &["--no-cause", "--no-plan"]);
    let out = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    // one backend call per task
    assert!(stdout(&out).contains("3 backend call(s)"));
}
