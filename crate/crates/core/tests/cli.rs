use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spikescore::pipeline::Manifest;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_spikescore"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn spikescore")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn small_config(dir: &Path, extra: &str) -> PathBuf {
    let p = dir.join("run.toml");
    let text = format!(
        "k = 12\n{extra}\n[simulator]\nn_domains = 2\nitems_per_domain = 60\n"
    );
    std::fs::write(&p, text).unwrap();
    p
}

fn stage(config: &Path, out: &Path, args: &[&str]) -> Output {
    let mut all = vec!["--config", config.to_str().unwrap(), "--out", out.to_str().unwrap()];
    all.extend_from_slice(args);
    run(&all)
}

fn ok(o: Output) -> Output {
    assert_eq!(code(&o), 0, "stderr: {}", stderr(&o));
    o
}

fn manifest(out: &Path, stage: &str) -> Manifest {
    let text = std::fs::read_to_string(out.join(format!("manifests/{stage}.json"))).unwrap();
    serde_json::from_str(&text).unwrap()
}

#[test]
fn usage_errors_exit_two() {
    assert_eq!(code(&run(&[])), 2);
    assert_eq!(code(&run(&["no-such-command"])), 2);
    assert_eq!(code(&run(&["spike", "--backbone", "bogus"])), 2);
}

#[test]
fn systemic_error_is_one_line_with_class() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "k = 20\nunknown_field = 1\n").unwrap();
    let o = run(&["--config", cfg.to_str().unwrap(), "spike"]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[config]: "), "{err}");

    let o = run(&["--out", dir.path().join("empty").to_str().unwrap(), "spike"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error[config]"), "{}", stderr(&o));
}

#[test]
fn full_pipeline_through_cli() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    for s in ["simulate", "induce", "score", "spike"] {
        ok(stage(&cfg, &out, &[s]));
    }
    let o = ok(stage(&cfg, &out, &["evaluate"]));
    assert_eq!(stdout(&o).lines().count(), 2, "{}", stdout(&o));
    assert!(out.join("report.json").exists());

    let hash = manifest(&out, "simulate").config_hash;
    for s in ["induce", "score", "spike", "evaluate"] {
        assert_eq!(manifest(&out, s).config_hash, hash, "{s}");
    }

    ok(stage(&cfg, &out, &["calibrate", "--domain", "sim-0", "--target-fpr", "0.1"]));
    ok(stage(&cfg, &out, &["detect"]));
    assert!(out.join("detections/sim-1.jsonl").exists());

    let o = ok(stage(&cfg, &out, &["sweep", "--k-values", "3,6,12"]));
    let text = stdout(&o);
    let ks: Vec<&str> = text.lines().map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(ks, ["3", "6", "12"]);

    ok(stage(&cfg, &out, &["export-plots", "--what", "sweep", "--what", "stats", "--what", "trajectories", "--item", "sim-0-0001"]));
    assert!(out.join("plots/sweep.tsv").exists());
    assert!(out.join("plots/trajectory_sim-0-0001.tsv").exists());

    let o = stage(&cfg, &out, &["export-plots", "--what", "nonsense"]);
    assert_eq!(code(&o), 1);

    let scores = out.join("scores/sim-0.jsonl");
    let o = ok(run(&["validate", scores.to_str().unwrap(), "--schema", "score"]));
    assert!(stdout(&o).is_empty());
    let o = run(&["validate", scores.to_str().unwrap(), "--schema", "qa"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains(":1:"), "{}", stdout(&o));
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    for s in ["simulate", "induce", "score"] {
        ok(stage(&cfg, &out, &[s]));
    }
    let first = std::fs::read(out.join("scores/sim-1.jsonl")).unwrap();
    std::fs::remove_file(out.join("scores/sim-1.jsonl")).unwrap();
    ok(stage(&cfg, &out, &["score"]));
    assert_eq!(std::fs::read(out.join("scores/sim-1.jsonl")).unwrap(), first);
}

#[test]
fn evaluate_refuses_mixed_hashes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path(), "");
    let out = dir.path().join("out");
    for s in ["simulate", "induce", "score"] {
        ok(stage(&cfg, &out, &[s]));
    }
    // Rescoring under a different configuration leaves qa/ from the first.
    ok(stage(&cfg, &out, &["--seed-override", "99", "score"]));
    let o = stage(&cfg, &out, &["evaluate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error[mixed_hashes]"), "{}", stderr(&o));

    ok(stage(&cfg, &out, &["score"]));
    ok(stage(&cfg, &out, &["evaluate"]));

    let scores = out.join("scores/sim-0.jsonl");
    let mut text = std::fs::read_to_string(&scores).unwrap();
    text = text.replacen("\"value\":", "\"value\": ", 1);
    std::fs::write(&scores, text).unwrap();
    let o = stage(&cfg, &out, &["evaluate"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("changed after stage `score`"), "{}", stderr(&o));
}

#[test]
fn short_sequences_are_partial_failures() {
    let dir = tempfile::tempdir().unwrap();
    let qa = dir.path().join("qa.jsonl");
    let scores = dir.path().join("scores.jsonl");
    let mut qa_lines = String::new();
    let mut score_lines = String::new();
    for i in 0..6 {
        let label = i % 2;
        qa_lines.push_str(&format!(
            "{{\"item_id\":\"x{i}\",\"domain_id\":\"ext\",\"question\":\"q{i}\",\"reference_answers\":[\"a\"],\"generated_answer\":\"a\",\"label\":{label}}}\n"
        ));
        let turns = if i == 0 { 2 } else { 5 };
        for t in 1..=turns {
            let v = if label == 1 && t == 3 { 2.0 } else { 0.1 * t as f64 };
            score_lines.push_str(&format!("{{\"item_id\":\"x{i}\",\"turn\":{t},\"value\":{v},\"backbone_id\":\"ext\"}}\n"));
        }
    }
    std::fs::write(&qa, qa_lines).unwrap();
    std::fs::write(&scores, score_lines).unwrap();
    let cfg = dir.path().join("ext.toml");
    std::fs::write(
        &cfg,
        format!(
            "backbone = \"external\"\nk = 5\n[domains.ext]\nqa = {:?}\nscores = {:?}\n",
            qa.to_str().unwrap(),
            scores.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(stage(&cfg, &out, &["score"]));
    let o = stage(&cfg, &out, &["spike"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("item[sequence_too_short] x0"), "{}", stderr(&o));
    let m = manifest(&out, "spike");
    assert_eq!(m.item_errors.len(), 1);
    assert_eq!(m.item_errors[0].item_id, "x0");
    let spikes = std::fs::read_to_string(out.join("spikes/ext.jsonl")).unwrap();
    assert_eq!(spikes.lines().count(), 5);
}

#[test]
fn theorem_check_reports_grid() {
    let dir = tempfile::tempdir().unwrap();
    let o = ok(run(&["--out", dir.path().to_str().unwrap(), "theorem-check", "--samples", "5000"]));
    assert_eq!(stdout(&o).trim(), "160/160 configurations satisfy the bound");
    assert_eq!(manifest(dir.path(), "theorem-check").outputs.len(), 1);
}

#[test]
fn rag_build_and_query() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(
        &corpus,
        "{\"doc_id\":\"b\",\"text\":\"the capital of france is paris\"}\n\
         {\"doc_id\":\"a\",\"text\":\"photosynthesis converts light into chemical energy\"}\n\
         {\"doc_id\":\"c\",\"text\":\"the moon orbits the earth\"}\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    ok(run(&["--out", out.to_str().unwrap(), "rag-build", "--corpus", corpus.to_str().unwrap()]));
    let q = ok(run(&[
        "--out",
        out.to_str().unwrap(),
        "rag-query",
        "--question",
        "what is the capital of france",
        "--top-k",
        "2",
    ]));
    let lines: Vec<String> = stdout(&q).lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2, "{lines:?}");
    assert!(lines[0].split('\t').nth(1) == Some("b"), "{lines:?}");

    let o = run(&["--out", out.to_str().unwrap(), "rag-query", "--question", "x", "--top-k", "9"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error[out_of_range]"), "{}", stderr(&o));
}
