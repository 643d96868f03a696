//! End-to-end elicitation against the in-process stub endpoint: transport
//! retries, response-path errors, campaign persistence, resumability, and
//! quarantine of malformed completions.

use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;

use belief_audit::elicit::stub::{completion_body, StubServer};
use belief_audit::elicit::{
    chat_complete, load_campaign_records, run_elicitation, AuxiliarySpec, CampaignConfig,
    CampaignContext, ElicitError, EndpointConfig, ExchangeLog,
};
use belief_audit::records::validate_dataset;

const TOKEN_ENV: &str = "BELIEF_AUDIT_TEST_TOKEN";

fn endpoint(url: &str) -> EndpointConfig {
    std::env::set_var(TOKEN_ENV, "sekrit");
    EndpointConfig {
        base_url: url.to_string(),
        model: "stub-model".into(),
        auth_env: TOKEN_ENV.into(),
        body_template: serde_json::json!({
            "model": "{{model}}",
            "messages": [{"role": "user", "content": "{{prompt}}"}]
        }),
        response_path: "choices.0.message.content".into(),
        timeout_secs: 5,
        max_retries: 2,
        headers: BTreeMap::from([("Authorization".to_string(), "Bearer {{token}}".to_string())]),
    }
}

fn read_lines(path: &Path) -> Vec<String> {
    let file = std::fs::File::open(path).unwrap();
    std::io::BufReader::new(file)
        .lines()
        .map(|l| l.unwrap())
        .collect()
}

#[test]
fn echo_fixture_returns_the_canned_text() {
    let server = StubServer::with_script(vec![(200, "No: 0.40\nYes: 0.60".into())]);
    let dir = tempfile::tempdir().unwrap();
    let mut log = ExchangeLog::open(&dir.path().join("log.jsonl")).unwrap();
    let text = chat_complete(&endpoint(&server.url()), "hello", 1, &mut log).unwrap();
    assert_eq!(text, "No: 0.40\nYes: 0.60");
}

#[test]
fn transient_failures_retry_and_log_every_attempt() {
    let server = StubServer::with_script(vec![
        (500, "boom".into()),
        (500, "boom".into()),
        (200, "ok".into()),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("log.jsonl");
    let mut log = ExchangeLog::open(&log_path).unwrap();
    let text = chat_complete(&endpoint(&server.url()), "hello", 1, &mut log).unwrap();
    assert_eq!(text, "ok");
    let lines = read_lines(&log_path);
    assert_eq!(lines.len(), 3, "three attempts logged");
    let first: serde_json::Value = serde_json::from_str(&lines[0]).unwrap();
    let last: serde_json::Value = serde_json::from_str(&lines[2]).unwrap();
    assert_eq!(first["exchange_id"], last["exchange_id"]);
    assert_eq!(first["attempt"], 1);
    assert_eq!(last["attempt"], 3);
    assert_eq!(last["status"], 200);
}

#[test]
fn missing_response_path_is_a_schema_error_with_the_body_persisted() {
    let server = StubServer::start(Box::new(|_, _| (200, r#"{"unexpected": true}"#.into())));
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("log.jsonl");
    let mut log = ExchangeLog::open(&log_path).unwrap();
    let err = chat_complete(&endpoint(&server.url()), "hello", 1, &mut log).unwrap_err();
    match err {
        ElicitError::ResponsePath { path, body } => {
            assert_eq!(path, "choices.0.message.content");
            assert!(body.contains("unexpected"));
        }
        other => panic!("unexpected error: {other}"),
    }
    let lines = read_lines(&log_path);
    assert_eq!(lines.len(), 1);
    assert!(lines[0].contains("unexpected"));
}

#[test]
fn missing_token_env_var_errors_by_name() {
    let mut cfg = endpoint("http://127.0.0.1:1");
    cfg.auth_env = "BELIEF_AUDIT_DEFINITELY_UNSET".into();
    let dir = tempfile::tempdir().unwrap();
    let mut log = ExchangeLog::open(&dir.path().join("log.jsonl")).unwrap();
    let err = chat_complete(&cfg, "x", 1, &mut log).unwrap_err();
    assert!(matches!(err, ElicitError::MissingToken(v) if v == "BELIEF_AUDIT_DEFINITELY_UNSET"));
}

/// Answer by prompt kind: decision prompts get the two-line protocol,
/// next-state prompts a distribution over cells, everything else a belief.
fn scripted_model(body: &str, _count: usize) -> (u16, String) {
    let text = if body.contains("Can you make a decision") {
        "Can decide: Yes\nDecision: Yes"
    } else if body.contains("probability distribution over") {
        "young: 0.30\nold: 0.70"
    } else if body.contains("and is young") {
        "No: 0.80\nYes: 0.20"
    } else if body.contains("and is old") {
        "No: 0.20\nYes: 0.80"
    } else {
        "No: 0.40\nYes: 0.60"
    };
    (200, completion_body(text))
}

fn campaign(dir: &Path, url: &str, families: Vec<&str>, with_aux: bool) -> CampaignConfig {
    let aux = with_aux.then(|| AuxiliarySpec {
        name: "age group".into(),
        cells: vec!["young".into(), "old".into()],
        conditions: vec!["is young".into(), "is old".into()],
    });
    let contexts = (0..2)
        .map(|i| CampaignContext {
            context_id: format!("c{i}"),
            covariates: BTreeMap::from([(
                "Sex".to_string(),
                if i == 0 { "Male" } else { "Female" }.to_string(),
            )]),
            patient_description: format!("is patient number {i}"),
            outcome: (i % 2) as u8,
            ground_truth: Some(0.5),
            auxiliary: aux.clone(),
        })
        .collect();
    CampaignConfig {
        contexts,
        contexts_file: None,
        families: families.into_iter().map(String::from).collect(),
        repetitions: 2,
        clinical_question: "have the condition".into(),
        labels: vec!["No".into(), "Yes".into()],
        endpoint: endpoint(url),
        out_records: dir.join("records.jsonl"),
        out_lie: Some(dir.join("lie.jsonl")),
        out_log: dir.join("log.jsonl"),
        out_quarantine: dir.join("quarantine.jsonl"),
    }
}

#[test]
fn campaign_writes_records_that_validate_and_is_resumable() {
    let server = StubServer::start(Box::new(scripted_model));
    let dir = tempfile::tempdir().unwrap();
    let cfg = campaign(
        dir.path(),
        &server.url(),
        vec!["standard", "decision"],
        false,
    );

    let summary = run_elicitation(&cfg, 7).unwrap();
    // 2 contexts x 1 belief family x 2 reps
    assert_eq!(summary.records_written, 4);
    assert_eq!(summary.quarantined, 0);

    let dataset = load_campaign_records(&cfg).unwrap();
    assert_eq!(dataset.records.len(), 4);
    let report = validate_dataset(&dataset);
    assert!(report.flags.is_empty());
    assert!(dataset.records.iter().all(|r| r.forced_decision.is_some()));
    assert!((dataset.records[0].belief - 0.6).abs() < 1e-12);

    // belief and decision exchanges never share an exchange id
    let log_lines = read_lines(&cfg.out_log);
    let ids: std::collections::BTreeSet<String> = log_lines
        .iter()
        .map(|l| {
            serde_json::from_str::<serde_json::Value>(l).unwrap()["exchange_id"]
                .as_str()
                .unwrap()
                .to_string()
        })
        .collect();
    // 4 decision exchanges (one per context x rep) + 4 belief exchanges
    assert_eq!(ids.len(), 8);

    // resuming issues no further requests and duplicates no keys
    let before = server.request_count();
    let summary2 = run_elicitation(&cfg, 7).unwrap();
    assert_eq!(server.request_count(), before);
    assert_eq!(summary2.records_written, 0);
    assert_eq!(summary2.records_skipped_existing, 4);
    let dataset2 = load_campaign_records(&cfg).unwrap();
    assert_eq!(dataset2.records.len(), 4);
}

#[test]
fn coherence_families_produce_one_triple_per_context() {
    let server = StubServer::start(Box::new(scripted_model));
    let dir = tempfile::tempdir().unwrap();
    let cfg = campaign(
        dir.path(),
        &server.url(),
        vec!["standard", "decision", "next_state", "conditional"],
        true,
    );
    run_elicitation(&cfg, 7).unwrap();
    let triples = belief_audit::records::load_lie_triples(&dir.path().join("lie.jsonl")).unwrap();
    assert_eq!(triples.len(), 2);
    for t in &triples {
        assert_eq!(t.bin_beliefs.len(), 2);
        assert_eq!(t.bin_weights.len(), 2);
        assert!((t.bin_weights[0] - 0.3).abs() < 1e-12);
        // 0.8*0.3 + 0.2*0.7 = 0.38 vs base 0.6
        assert!((t.base_belief - 0.6).abs() < 1e-12);
    }
}

#[test]
fn malformed_completions_are_quarantined_not_dropped() {
    let server = StubServer::start(Box::new(|body: &str, _| {
        if body.contains("Can you make a decision") {
            (200, completion_body("Can decide: Yes\nDecision: No"))
        } else {
            (200, completion_body("maybe around half"))
        }
    }));
    let dir = tempfile::tempdir().unwrap();
    let cfg = campaign(
        dir.path(),
        &server.url(),
        vec!["standard", "decision"],
        false,
    );
    let summary = run_elicitation(&cfg, 7).unwrap();
    assert_eq!(summary.records_written, 0);
    assert_eq!(summary.quarantined, 4);
    let rows = read_lines(&cfg.out_quarantine);
    assert_eq!(rows.len(), 4);
    assert!(rows[0].contains("maybe around half"));
}
