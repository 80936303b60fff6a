//! End-to-end CLI checks: exit codes, error lines, artifact shapes, and
//! reproducibility from a config snapshot.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_graphreview"))
}

fn write_corpus(dir: &Path, n_subs: usize, n_hist: usize) -> (PathBuf, PathBuf, PathBuf) {
    let papers_path = dir.join("papers.jsonl");
    let embeddings_path = dir.join("embeddings.jsonl");
    let labels_path = dir.join("labels.jsonl");
    let mut papers = String::new();
    let mut embeddings = String::new();
    let mut labels = String::new();
    let total = n_subs + n_hist;
    for i in 0..total {
        let role = if i < n_subs {
            "submission"
        } else {
            "historical"
        };
        let id = format!("p{i:03}");
        papers.push_str(&format!(
            "{}\n",
            serde_json::json!({
                "id": id,
                "role": role,
                "venue": "V",
                "year": 2025,
                "text": format!("synthetic body of paper {i} repeated for bulk. "),
            })
        ));
        // deterministic pseudo-random unit-ish vectors
        let vector: Vec<f64> = (0..8)
            .map(|d| (((i * 31 + d * 17 + 7) % 23) as f64 - 11.0) / 11.0)
            .collect();
        embeddings.push_str(&format!(
            "{}\n",
            serde_json::json!({"paper_id": id, "vector": vector})
        ));
        let score = 1.0 + ((i * 137 + 29) % 900) as f64 / 100.0;
        labels.push_str(&format!(
            "{}\n",
            serde_json::json!({"paper_id": id, "score": score})
        ));
    }
    std::fs::write(&papers_path, papers).unwrap();
    std::fs::write(&embeddings_path, embeddings).unwrap();
    std::fs::write(&labels_path, labels).unwrap();
    (papers_path, embeddings_path, labels_path)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

#[test]
fn run_without_corpus_flags_exits_2() {
    let output = bin().arg("run").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("--papers"));
}

#[test]
fn unknown_subcommand_exits_2() {
    let output = bin().arg("frobnicate").output().unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn ingest_reports_summary_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 6, 2);
    let output = bin()
        .args(["ingest", "--papers"])
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .arg("--labels")
        .arg(&labels)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert_eq!(
        stdout(&output).trim(),
        "papers=8 submissions=6 historical=2 dim=8 labeled=8"
    );

    // duplicate id: domain error, exit 1, error name preserved
    let dup = dir.path().join("dup.jsonl");
    let mut text = std::fs::read_to_string(&papers).unwrap();
    let first_line = text.lines().next().unwrap().to_string();
    text.push_str(&first_line);
    text.push('\n');
    std::fs::write(&dup, text).unwrap();
    let output = bin()
        .args(["ingest", "--papers"])
        .arg(&dup)
        .arg("--embeddings")
        .arg(&embeddings)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    let err = stderr(&output);
    assert!(err.starts_with("error: DuplicateId:"), "{err}");
    assert_eq!(err.lines().count(), 1, "single-line error: {err}");
}

#[test]
fn deployment_run_writes_artifacts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 10, 4);
    let run = |out: &Path| {
        let output = bin()
            .args([
                "run",
                "--mode",
                "deployment",
                "--fixed-t",
                "3",
                "--seed",
                "9",
            ])
            .arg("--papers")
            .arg(&papers)
            .arg("--embeddings")
            .arg(&embeddings)
            .arg("--labels")
            .arg(&labels)
            .arg("--out")
            .arg(out)
            .output()
            .unwrap();
        assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
        output
    };
    let out1 = dir.path().join("run1");
    let out2 = dir.path().join("run2");
    run(&out1);
    run(&out2);
    for name in ["ranking.csv", "edges.txt", "config.txt", "signals.jsonl"] {
        assert!(out1.join(name).is_file(), "{name} missing");
        assert_eq!(
            std::fs::read_to_string(out1.join(name)).unwrap(),
            std::fs::read_to_string(out2.join(name)).unwrap(),
            "{name} not reproducible"
        );
    }
    // the trace matches after dropping the wall-clock field
    let strip_elapsed = |path: &Path| {
        std::fs::read_to_string(path)
            .unwrap()
            .lines()
            .map(|line| {
                let mut v: serde_json::Value = serde_json::from_str(line).unwrap();
                v.as_object_mut().unwrap().remove("elapsed_ms");
                v.to_string()
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(
        strip_elapsed(&out1.join("trace.jsonl")),
        strip_elapsed(&out2.join("trace.jsonl")),
        "trace not reproducible"
    );
    let csv = std::fs::read_to_string(out1.join("ranking.csv")).unwrap();
    assert!(csv.starts_with("rank,paper_id,pi,decision\n"));
    // gamma 0.314 with n=10 accepts floor(3.14) = 3
    assert_eq!(csv.matches(",accept").count(), 3);
}

#[test]
fn evaluate_prints_metric_report() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 10, 4);
    let out = dir.path().join("run");
    let output = bin()
        .args(["run", "--mode", "deployment", "--fixed-t", "3"])
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .arg("--labels")
        .arg(&labels)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let output = bin()
        .args(["evaluate", "--pred"])
        .arg(out.join("ranking.csv"))
        .arg("--truth")
        .arg(&labels)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let text = stdout(&output);
    for key in [
        "accuracy:",
        "macro_f1:",
        "auc:",
        "spearman:",
        "kendall_tau_b:",
        "ndcg@10:",
        "average:",
    ] {
        assert!(text.contains(key), "missing {key} in {text}");
    }
    // noiseless oracle on a small corpus recovers the ordering almost exactly
    let spearman_line = text.lines().find(|l| l.starts_with("spearman:")).unwrap();
    let value: f64 = spearman_line
        .split(':')
        .nth(1)
        .unwrap()
        .trim()
        .parse()
        .unwrap();
    assert!(value > 0.9, "{spearman_line}");
}

#[test]
fn evaluation_mode_without_labels_fails_with_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, _) = write_corpus(dir.path(), 6, 0);
    let output = bin()
        .args(["run", "--mode", "evaluation", "--backend", "replay"])
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(
        stderr(&output).starts_with("error: LabelRequired:"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn riml_export_writes_both_files() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 8, 0);
    let out = dir.path().join("riml");
    let output = bin()
        .args(["riml-export", "--delta", "1.5", "--seed", "3"])
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .arg("--labels")
        .arg(&labels)
        .arg("--out-dir")
        .arg(&out)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let scoring = std::fs::read_to_string(out.join("scoring.jsonl")).unwrap();
    assert_eq!(scoring.lines().count(), 8);
    let first: serde_json::Value = serde_json::from_str(scoring.lines().next().unwrap()).unwrap();
    for key in ["paper_id", "prompt", "anchors", "target", "scalar"] {
        assert!(first.get(key).is_some(), "scoring record missing {key}");
    }
    assert!(first["prompt"]
        .as_str()
        .unwrap()
        .contains("The correct score for this paper is"));
    let comparison = std::fs::read_to_string(out.join("comparison.jsonl")).unwrap();
    for line in comparison.lines() {
        let record: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(record["weight"].as_f64().unwrap() > 1.5);
    }
}

#[test]
fn report_subcommand_rebuilds_from_run_dir() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 6, 2);
    let out = dir.path().join("run");
    let status = bin()
        .args(["run", "--mode", "deployment", "--fixed-t", "2"])
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .arg("--labels")
        .arg(&labels)
        .arg("--out")
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let reports = dir.path().join("reports");
    let output = bin()
        .args(["report", "--run-dir"])
        .arg(&out)
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .arg("--labels")
        .arg(&labels)
        .arg("--out")
        .arg(&reports)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let files: Vec<_> = std::fs::read_dir(&reports).unwrap().collect();
    assert_eq!(files.len(), 6, "one report per submission");
    let body = std::fs::read_to_string(reports.join("p000.md")).unwrap();
    for header in [
        "**Ranking:**",
        "**Decision:**",
        "**Summary**:",
        "**Suggestions**:",
    ] {
        assert!(body.contains(header), "missing {header}");
    }
}

#[test]
fn sweep_emits_table_and_rejects_empty_values() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 8, 2);
    let output = bin()
        .args(["sweep", "--param", "lambda", "--values", "0.1,0.3"])
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .arg("--labels")
        .arg(&labels)
        .arg("--out")
        .arg(dir.path().join("sweeps"))
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("lambda\teta"));
    assert!(text.contains("0.1\t"), "{text}");
    assert!(text.contains("0.3\t"), "{text}");

    let output = bin()
        .args(["sweep", "--param", "lambda", "--values", ""])
        .arg("--papers")
        .arg(&papers)
        .arg("--embeddings")
        .arg(&embeddings)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn config_file_mirrors_flags_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let (papers, embeddings, labels) = write_corpus(dir.path(), 8, 2);
    let config = dir.path().join("run.conf");
    std::fs::write(
        &config,
        format!(
            "papers={}\nembeddings={}\nlabels={}\nmode=deployment\nfixed-t=2\nseed=4\nout={}\n",
            papers.display(),
            embeddings.display(),
            labels.display(),
            dir.path().join("from_config").display()
        ),
    )
    .unwrap();
    let output = bin()
        .args(["run", "--config"])
        .arg(&config)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    assert!(dir.path().join("from_config").join("ranking.csv").is_file());
    // flag overrides the file's fixed-t: 1 round instead of 2
    let out2 = dir.path().join("override");
    let output = bin()
        .args(["run", "--config"])
        .arg(&config)
        .args(["--fixed-t", "1"])
        .arg("--out")
        .arg(&out2)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(0), "{}", stderr(&output));
    let trace = std::fs::read_to_string(out2.join("trace.jsonl")).unwrap();
    assert_eq!(trace.lines().count(), 1);
}
