use std::collections::HashSet;

use spikescore::corpus::{read_jsonl, sample_split, validate_records, write_jsonl, QAItem, RecordSchema, SplitOptions};
use spikescore::pipeline::{self, Run, RunConfig};
use spikescore::rag::NO_CONTEXT_MARKER;
use spikescore::scoring::{FeatureRecord, TokenPosition};

fn small_run(dir: &std::path::Path) -> Run {
    let mut c = RunConfig { out_dir: dir.to_path_buf(), k: 6, ..Default::default() };
    c.simulator.n_domains = 2;
    c.simulator.items_per_domain = 40;
    Run::new(c).unwrap()
}

#[test]
fn pipeline_artifacts_pass_their_schemas() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(dir.path());
    pipeline::simulate(&run).unwrap();
    pipeline::induce(&run, &[]).unwrap();
    pipeline::score(&run, None).unwrap();
    for d in run.domains().unwrap() {
        for (stage, schema) in [
            ("qa", RecordSchema::Qa),
            ("features", RecordSchema::Feature),
            ("transcripts", RecordSchema::Transcript),
            ("scores", RecordSchema::Score),
        ] {
            let r = validate_records(&run.stage_path(stage, &d), schema).unwrap();
            assert!(r.is_valid(), "{stage}/{d}: {:?}", r.issues);
            assert!(r.lines > 0);
        }
        let qa: Vec<QAItem> = read_jsonl(&run.qa_path(&d)).unwrap();
        let r = validate_records(&run.stage_path("features", &d), RecordSchema::Feature).unwrap();
        assert_eq!(r.lines, qa.len() * 6);
    }
}

#[test]
fn exporter_shaped_feature_lines() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("f.jsonl");
    let good = r#"{"item_id":"q1","turn":1,"vector":[0.5,-1.0,2.0],"meta":{"layer_policy":"mean of last 5 layers","token_position":"penultimate","hidden_dim":3}}"#;
    let short = r#"{"item_id":"q1","turn":2,"vector":[0.5,-1.0],"meta":{"layer_policy":"mean of last 5 layers","token_position":"last","hidden_dim":3}}"#;
    let extra = r#"{"item_id":"q1","turn":3,"vector":[1,2,3],"meta":{"layer_policy":"x","token_position":"last","hidden_dim":3},"model":"m"}"#;
    std::fs::write(&p, format!("{good}\n{short}\n{extra}\n{good}\n")).unwrap();
    let r = validate_records(&p, RecordSchema::Feature).unwrap();
    let lines: Vec<usize> = r.issues.iter().map(|i| i.line).collect();
    assert_eq!(lines, [2, 3, 4], "{:?}", r.issues);
    assert!(r.issues[0].reason.contains("hidden_dim"));
    assert!(r.issues[2].reason.contains("duplicate"));

    let rec: FeatureRecord = serde_json::from_str(good).unwrap();
    assert_eq!(rec.meta.token_position, TokenPosition::Penultimate);
}

#[test]
fn jsonl_round_trip_and_split() {
    let dir = tempfile::tempdir().unwrap();
    let items: Vec<QAItem> = (0..50)
        .map(|i| QAItem {
            item_id: format!("i{i}"),
            domain_id: "d".into(),
            question: format!("question {i}"),
            reference_answers: vec!["yes".into()],
            generated_answer: "yes".into(),
            label: Some((i % 5 == 0) as u8),
            answer_logprobs: None,
            group: Some(format!("g{}", i / 5)),
            stratum: None,
        })
        .collect();
    let p = dir.path().join("qa.jsonl");
    write_jsonl(&p, &items).unwrap();
    let back: Vec<QAItem> = read_jsonl(&p).unwrap();
    assert_eq!(back, items);

    let opts = SplitOptions { stratify: None, group_disjoint: true };
    let (train, test) = sample_split(&items, 20, 20, 3, opts).unwrap();
    let g = |v: &[QAItem]| v.iter().map(|i| i.group.clone().unwrap()).collect::<HashSet<_>>();
    assert!(g(&train).is_disjoint(&g(&test)));
    assert_eq!(sample_split(&items, 20, 20, 3, opts).unwrap(), (train, test));
}

#[test]
fn rag_rewrites_questions() {
    let dir = tempfile::tempdir().unwrap();
    let run = small_run(&dir.path().join("out"));
    let corpus = dir.path().join("corpus.jsonl");
    std::fs::write(
        &corpus,
        "{\"doc_id\":\"k1\",\"text\":\"Kyoto was the imperial capital of Japan.\"}\n\
         {\"doc_id\":\"k2\",\"text\":\"Tokyo is the current capital of Japan.\"}\n",
    )
    .unwrap();
    pipeline::rag_build(&run, &corpus).unwrap();
    let qa_in = dir.path().join("in.jsonl");
    let qa_out = dir.path().join("out.jsonl");
    let item = QAItem {
        item_id: "r1".into(),
        domain_id: "geo".into(),
        question: "What is the capital of Japan?".into(),
        reference_answers: vec!["Tokyo".into()],
        generated_answer: "Tokyo".into(),
        label: None,
        answer_logprobs: None,
        group: None,
        stratum: None,
    };
    write_jsonl(&qa_in, &[item]).unwrap();
    let (m, results) = pipeline::rag_query(&run, &[], Some((&qa_in, &qa_out)), Some(2)).unwrap();
    assert_eq!(m.outputs.len(), 2);
    let rewritten: Vec<QAItem> = read_jsonl(&qa_out).unwrap();
    let q = &rewritten[0].question;
    assert!(q.starts_with("Context [1]:\n"), "{q}");
    assert!(q.ends_with("Question: What is the capital of Japan?"));
    assert!(!q.contains(NO_CONTEXT_MARKER));
    assert_eq!(results[0].hits[0].doc_id, "k2");
    assert!(validate_records(&qa_out, RecordSchema::Qa).unwrap().is_valid());
}
