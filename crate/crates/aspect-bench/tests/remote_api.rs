//! Wire-level tests for the remote chat backend against a local canned
//! HTTP server: request shape, key handling, retry classification, and
//! audit-log redaction.

mod common;

use std::collections::BTreeMap;
use std::sync::Mutex;

use aspect_bench::corpus::Triplet;
use aspect_bench::inference::{
    generate, run_generation, Backend, BackendError, GenerationParams, RateLimiter,
    RemoteChatBackend, API_KEY_ENV,
};
use aspect_bench::prompts::RenderedPrompt;
use common::{chat_reply, spawn_http};

/// The test key; any appearance of this literal outside the request's own
/// authorization header is a leak.
const TEST_KEY: &str = "test-key-123";

/// Env mutations are process-wide, so every test that touches the key
/// serializes on this lock and leaves the variable unset afterwards.
static ENV_LOCK: Mutex<()> = Mutex::new(());

fn with_api_key<R>(value: Option<&str>, f: impl FnOnce() -> R) -> R {
    let _guard = ENV_LOCK.lock().unwrap_or_else(|e| e.into_inner());
    match value {
        Some(v) => std::env::set_var(API_KEY_ENV, v),
        None => std::env::remove_var(API_KEY_ENV),
    }
    let result = f();
    std::env::remove_var(API_KEY_ENV);
    result
}

fn prompt() -> RenderedPrompt {
    RenderedPrompt {
        system: "You are a terse assistant.".to_string(),
        user: "Summarize: the quick brown fox.".to_string(),
    }
}

fn params(max_retries: u32) -> GenerationParams {
    let mut p = GenerationParams::named("remote-test-model");
    p.max_retries = max_retries;
    p
}

#[test]
fn request_carries_model_messages_and_bearer_key() {
    with_api_key(Some(TEST_KEY), || {
        let server = spawn_http(vec![(200, chat_reply("A concise summary."))]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let reply = backend.complete(&prompt(), &params(0)).unwrap();
        assert_eq!(reply, "A concise summary.");

        let requests = server.finish();
        assert_eq!(requests.len(), 1);
        let req = &requests[0];
        assert_eq!(req.method, "POST");
        assert_eq!(req.path, "/chat/completions");
        assert_eq!(
            req.headers.get("authorization").map(String::as_str),
            Some("Bearer test-key-123")
        );

        let body = req.json();
        assert_eq!(body["model"], "remote-test-model");
        assert_eq!(body["temperature"], 0.0);
        assert_eq!(body["max_tokens"], 80);
        let messages = body["messages"].as_array().unwrap();
        assert_eq!(messages.len(), 2);
        assert_eq!(messages[0]["role"], "system");
        assert_eq!(messages[0]["content"], "You are a terse assistant.");
        assert_eq!(messages[1]["role"], "user");
        assert_eq!(messages[1]["content"], "Summarize: the quick brown fox.");
    });
}

#[test]
fn missing_or_blank_key_fails_before_any_request() {
    with_api_key(None, || {
        let Err(err) = RemoteChatBackend::from_env("http://127.0.0.1:9", None) else {
            panic!("backend built without a key")
        };
        assert!(matches!(err, BackendError::Permanent(_)));
        assert!(
            err.to_string().contains(API_KEY_ENV),
            "the error must name the variable to set: {err}"
        );
    });
    with_api_key(Some("   "), || {
        let Err(err) = RemoteChatBackend::from_env("http://127.0.0.1:9", None) else {
            panic!("backend built with a blank key")
        };
        assert!(err.to_string().contains("empty"), "got: {err}");
    });
}

#[test]
fn server_errors_and_throttling_retry_then_succeed() {
    with_api_key(Some(TEST_KEY), || {
        // 500 then success.
        let server = spawn_http(vec![
            (500, "{\"error\":\"boom\"}".to_string()),
            (200, chat_reply("recovered")),
        ]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let (text, attempts) = generate(&backend, &prompt(), &params(2)).unwrap();
        assert_eq!(text, "recovered");
        assert_eq!(attempts, 2);
        assert_eq!(server.finish().len(), 2);

        // 429 then success.
        let server = spawn_http(vec![
            (429, "{\"error\":\"slow down\"}".to_string()),
            (200, chat_reply("after backoff")),
        ]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let (text, attempts) = generate(&backend, &prompt(), &params(1)).unwrap();
        assert_eq!(text, "after backoff");
        assert_eq!(attempts, 2);
    });
}

#[test]
fn client_errors_are_permanent_and_never_retried() {
    with_api_key(Some(TEST_KEY), || {
        let server = spawn_http(vec![(400, "{\"error\":\"bad request\"}".to_string())]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let (err, attempts) = generate(&backend, &prompt(), &params(5)).unwrap_err();
        assert!(matches!(err, BackendError::Permanent(_)), "got: {err}");
        assert!(err.to_string().contains("400"));
        assert_eq!(attempts, 1, "a 4xx must not consume the retry budget");
        assert_eq!(server.finish().len(), 1, "exactly one request on the wire");
    });
}

#[test]
fn malformed_success_bodies_are_permanent() {
    with_api_key(Some(TEST_KEY), || {
        // Valid JSON, wrong shape.
        let server = spawn_http(vec![(200, "{\"unexpected\":true}".to_string())]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let err = backend.complete(&prompt(), &params(0)).unwrap_err();
        assert!(matches!(err, BackendError::Permanent(_)));
        assert!(err.to_string().contains("choices[0].message.content"));
        server.finish();

        // Not JSON at all.
        let server = spawn_http(vec![(200, "plain text".to_string())]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let err = backend.complete(&prompt(), &params(0)).unwrap_err();
        assert!(matches!(err, BackendError::Permanent(_)));
        assert!(err.to_string().contains("malformed"));
        server.finish();
    });
}

#[test]
fn connection_failures_are_transient() {
    with_api_key(Some(TEST_KEY), || {
        // A port nothing listens on: refused immediately.
        let backend = RemoteChatBackend::from_env("http://127.0.0.1:9", None).unwrap();
        let err = backend.complete(&prompt(), &params(0)).unwrap_err();
        assert!(matches!(err, BackendError::Transient(_)), "got: {err}");
    });
}

#[test]
fn audit_log_records_every_exchange_with_the_key_redacted() {
    with_api_key(Some(TEST_KEY), || {
        let dir = tempfile::tempdir().unwrap();
        let audit_path = dir.path().join("audit.jsonl");
        let server = spawn_http(vec![
            (200, chat_reply("first")),
            (404, "{\"error\":\"no such model\"}".to_string()),
        ]);
        let backend =
            RemoteChatBackend::from_env(&server.base_url(), Some(&audit_path)).unwrap();
        backend.complete(&prompt(), &params(0)).unwrap();
        backend.complete(&prompt(), &params(0)).unwrap_err();
        server.finish();

        let text = std::fs::read_to_string(&audit_path).unwrap();
        assert!(
            !text.contains(TEST_KEY),
            "the API key must never reach the audit log"
        );
        let lines: Vec<serde_json::Value> = text
            .lines()
            .map(|l| serde_json::from_str(l).unwrap())
            .collect();
        assert_eq!(lines.len(), 2, "one audit line per HTTP exchange");

        assert_eq!(lines[0]["seq"], 1);
        assert_eq!(lines[0]["method"], "POST");
        assert_eq!(lines[0]["authorization"], "Bearer [REDACTED]");
        assert!(lines[0]["url"]
            .as_str()
            .unwrap()
            .ends_with("/chat/completions"));
        assert_eq!(lines[0]["status"], 200);
        assert_eq!(lines[0]["request"]["model"], "remote-test-model");
        assert!(lines[0]["response"].as_str().unwrap().contains("first"));

        assert_eq!(lines[1]["seq"], 2);
        assert_eq!(lines[1]["status"], 404);
        assert!(lines[1]["response"].as_str().unwrap().contains("no such model"));
    });
}

#[test]
fn batch_generation_drives_the_wire_protocol_end_to_end() {
    with_api_key(Some(TEST_KEY), || {
        let split: Vec<Triplet> = (0..3)
            .map(|i| Triplet {
                id: format!("w{i}"),
                title: format!("T{i}"),
                document: format!("Document number {i}. It has two sentences."),
                aspect: "History".to_string(),
                summary: format!("Summary {i}."),
                domain: None,
                extra: BTreeMap::new(),
            })
            .collect();
        // Item 0 succeeds; item 1 needs one retry; item 2 succeeds.
        let server = spawn_http(vec![
            (200, chat_reply("summary zero")),
            (503, "{\"error\":\"warming up\"}".to_string()),
            (200, chat_reply("summary one")),
            (200, chat_reply("summary two")),
        ]);
        let backend = RemoteChatBackend::from_env(&server.base_url(), None).unwrap();
        let records = run_generation(
            &backend,
            &split,
            &params(2),
            1, // single worker keeps the reply script aligned with items
            false,
            &RateLimiter::unlimited(),
        )
        .unwrap();

        assert_eq!(records.len(), 3);
        assert_eq!(records[0].generated, "summary zero");
        assert_eq!(records[0].attempt_count, 1);
        assert_eq!(records[1].generated, "summary one");
        assert_eq!(records[1].attempt_count, 2);
        assert_eq!(records[2].generated, "summary two");
        assert!(records.iter().all(|r| r.error.is_none()));

        let requests = server.finish();
        assert_eq!(requests.len(), 4);
        // Every request carried the key in its header and nowhere else.
        for req in &requests {
            assert_eq!(
                req.headers.get("authorization").map(String::as_str),
                Some("Bearer test-key-123")
            );
            assert!(!req.body.contains(TEST_KEY), "key leaked into a body");
        }
    });
}
