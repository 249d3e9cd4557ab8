mod common;

use std::collections::HashSet;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use common::{answering_handler, completions_body, logprob_rows, write_questions, MockServer};
use trajconf::harvest::{harvest, progress_path, Api, HarvestConfig, Progress, DEFAULT_ANSWER_PATTERN};
use trajconf::ingest::read_traces;
use trajconf_core::trajectory::{token_confidence, TopKRecord};

fn config(url: &str, dir: &Path, k: usize, top_k: usize) -> HarvestConfig {
    HarvestConfig {
        endpoint: url.to_owned(),
        model: "mock".into(),
        questions: dir.join("questions.jsonl"),
        traces_per_question: k,
        top_k,
        temperature: 1.0,
        max_tokens: 64,
        concurrency: 3,
        output: dir.join("traces.jsonl"),
        api: Api::Completions,
        answer_pattern: DEFAULT_ANSWER_PATTERN.into(),
        retries: 3,
        backoff_ms: 1,
        timeout_s: 10,
        api_key_env: "TRAJCONF_TEST_UNSET_KEY".into(),
    }
}

fn trace_ids(path: &Path) -> Vec<String> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["trace_id"].as_str().unwrap().to_owned())
        .collect()
}

#[test]
fn records_round_trip_through_ingest_without_warnings() {
    let server = MockServer::start(answering_handler(usize::MAX, false));
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 2);
    let cfg = config(&server.url, dir.path(), 3, 20);
    let summary = harvest(&cfg).unwrap();
    assert_eq!(summary.written, 6);
    assert!(summary.warnings.is_empty() && summary.skipped.is_empty());

    let ingested = read_traces(&cfg.output).unwrap();
    assert!(ingested.warnings.is_empty(), "{:?}", ingested.warnings);
    assert_eq!(ingested.dataset.trace_count(), 6);
    assert_eq!(ingested.dataset.groups.len(), 2);
    let correct = ingested.dataset.traces().filter(|t| t.correct).count();
    assert!(correct > 0 && correct < 6);

    // stored confidences equal token_confidence of the stored log-probabilities
    for line in fs::read_to_string(&cfg.output).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["k"], 20);
        let conf: Vec<f64> = serde_json::from_value(v["confidence"].clone()).unwrap();
        let tops: Vec<Vec<f64>> = serde_json::from_value(v["topk_logprobs"].clone()).unwrap();
        for (c, row) in conf.iter().zip(&tops) {
            assert_eq!(*c, token_confidence(&TopKRecord::from_logprobs(row).unwrap()));
        }
    }
}

#[test]
fn chat_api_is_supported() {
    let server = MockServer::start(answering_handler(usize::MAX, true));
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 1);
    let mut cfg = config(&server.url, dir.path(), 2, 5);
    cfg.api = Api::Chat;
    assert_eq!(harvest(&cfg).unwrap().written, 2);
    assert!(read_traces(&cfg.output).unwrap().warnings.is_empty());
}

#[test]
fn top_k_downgrade_warns_and_records_k() {
    let server = MockServer::start(answering_handler(5, false));
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 2);
    let cfg = config(&server.url, dir.path(), 2, 20);
    let summary = harvest(&cfg).unwrap();
    assert_eq!(summary.written, 4);
    assert_eq!(summary.warnings.len(), 1);
    assert!(summary.warnings[0].contains("top-5"));
    for line in fs::read_to_string(&cfg.output).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["k"], 5);
    }
}

#[test]
fn missing_logprobs_is_a_fatal_configuration_error() {
    let server = MockServer::start(|_| (200, r#"{"choices":[{"text":"\\boxed{4}","logprobs":null}]}"#.to_owned()));
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 2);
    let err = harvest(&config(&server.url, dir.path(), 2, 20)).unwrap_err();
    assert!(matches!(err, trajconf::Error::Config(_)), "{err}");
    assert_eq!(err.exit_code(), 1);
}

#[test]
fn transient_failures_are_retried() {
    let inner = answering_handler(usize::MAX, false);
    let calls = AtomicUsize::new(0);
    let server = MockServer::start(move |req| {
        if calls.fetch_add(1, Ordering::SeqCst) % 2 == 0 {
            (503, "{}".into())
        } else {
            inner(req)
        }
    });
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 2);
    let mut cfg = config(&server.url, dir.path(), 2, 20);
    cfg.concurrency = 1;
    let summary = harvest(&cfg).unwrap();
    assert_eq!(summary.written, 4);
    assert!(summary.skipped.is_empty());
}

#[test]
fn exhausted_retries_skip_the_trace_and_log_it() {
    let inner = answering_handler(usize::MAX, false);
    let server = MockServer::start(move |req| {
        if req.prompt().ends_with("#1") {
            (500, "{}".into())
        } else {
            inner(req)
        }
    });
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 2);
    let cfg = config(&server.url, dir.path(), 2, 20);
    let summary = harvest(&cfg).unwrap();
    assert_eq!(summary.written, 2);
    assert_eq!(summary.skipped.len(), 2);
    let progress: Progress = serde_json::from_slice(&fs::read(progress_path(&cfg.output)).unwrap()).unwrap();
    assert_eq!(progress.written, 2);
    let skipped: HashSet<_> = progress.skipped.iter().map(|s| s.trace_id.as_str()).collect();
    assert_eq!(skipped, HashSet::from(["q1-t000", "q1-t001"]));
}

#[test]
fn resume_never_duplicates_trace_ids() {
    let server = MockServer::start(answering_handler(usize::MAX, false));
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 2);
    let cfg = config(&server.url, dir.path(), 2, 20);
    assert_eq!(harvest(&cfg).unwrap().written, 4);

    // an interrupted write leaves a torn line behind
    let mut text = fs::read_to_string(&cfg.output).unwrap();
    text.push_str(r#"{"trace_id":"q0-t002","question_id":"q0","ans"#);
    fs::write(&cfg.output, text).unwrap();

    let more = HarvestConfig {
        traces_per_question: 3,
        ..cfg.clone()
    };
    let summary = harvest(&more).unwrap();
    assert_eq!((summary.resumed, summary.written), (4, 2));
    let ids = trace_ids(&cfg.output);
    let unique: HashSet<_> = ids.iter().collect();
    assert_eq!(ids.len(), 6);
    assert_eq!(unique.len(), 6);
    assert!(read_traces(&cfg.output).unwrap().warnings.is_empty());

    // nothing left to do
    let again = harvest(&more).unwrap();
    assert_eq!((again.resumed, again.written), (6, 0));
}

#[test]
fn api_key_comes_from_the_named_environment_variable() {
    let server = MockServer::start(|req| {
        if req.authorization.as_deref() == Some("Bearer s3cret") {
            (200, completions_body("\\boxed{4}", &logprob_rows(4, 3, 0)))
        } else {
            (401, r#"{"error":"unauthorized"}"#.into())
        }
    });
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 1);
    let mut cfg = config(&server.url, dir.path(), 1, 3);
    cfg.api_key_env = "TRAJCONF_TEST_KEY_FOR_HARVEST".into();
    assert_eq!(harvest(&cfg).unwrap().skipped.len(), 1);

    fs::remove_file(&cfg.output).unwrap();
    std::env::set_var("TRAJCONF_TEST_KEY_FOR_HARVEST", "s3cret");
    let summary = harvest(&cfg).unwrap();
    assert_eq!((summary.written, summary.skipped.len()), (1, 0));
}

#[test]
fn requests_hit_the_flavoured_path() {
    let server = MockServer::start(|req| {
        assert_eq!(req.path, "/v1/completions");
        assert_eq!(req.body["logprobs"], 7);
        assert_eq!(req.body["model"], "mock");
        (200, completions_body("The answer is 4", &logprob_rows(3, 7, 1)))
    });
    let dir = tempfile::tempdir().unwrap();
    write_questions(&dir.path().join("questions.jsonl"), 1);
    let cfg = config(&server.url, dir.path(), 1, 7);
    assert_eq!(harvest(&cfg).unwrap().written, 1);
    let d = read_traces(&cfg.output).unwrap().dataset;
    assert!(d.traces().all(|t| t.correct && t.answer == "4"));
}
