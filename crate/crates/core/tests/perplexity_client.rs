mod common;

use std::time::Duration;

use common::{FakeServer, Reply};
use kcqa_core::complexity::{
    ComplexityError, ComplexityScorer, PerplexityCache, PerplexityClient, PerplexityScorer, PerplexitySource, ScoreBasis,
};
use serde_json::json;

fn client(server: &FakeServer) -> PerplexityClient {
    PerplexityClient::new(&server.url, Duration::from_secs(2))
}

fn words(text: &str) -> u64 {
    text.split_whitespace().count() as u64
}

/// Scores a text as 1 + its word count.
fn fake_service() -> FakeServer {
    FakeServer::start(|_, req| match (req.method.as_str(), req.path.as_str()) {
        ("GET", "/health") => Reply::json(200, json!({"model_id": "gpt2", "ready": true})),
        ("POST", "/perplexity") => {
            let text = req.json()["text"].as_str().unwrap_or_default().to_string();
            if text.trim().is_empty() {
                return Reply::json(400, json!({"code": "EMPTY_TEXT", "message": "text is empty"}));
            }
            Reply::json(200, json!({"perplexity": 1.0 + words(&text) as f64, "token_count": words(&text), "model_id": "gpt2"}))
        }
        ("POST", "/perplexity/batch") => {
            let results: Vec<_> = req.json()["texts"]
                .as_array()
                .unwrap()
                .iter()
                .map(|t| {
                    let n = words(t.as_str().unwrap());
                    json!({"perplexity": 1.0 + n as f64, "token_count": n, "model_id": "gpt2"})
                })
                .collect();
            Reply::json(200, json!({ "results": results }))
        }
        _ => Reply::json(404, json!({"code": "NOT_FOUND", "message": req.path})),
    })
}

#[test]
fn health_and_single_score() {
    let server = fake_service();
    let c = client(&server);
    let h = c.health().unwrap();
    assert!(h.ready);
    assert_eq!(h.model_id, "gpt2");
    let r = c.perplexity("three short words").unwrap();
    assert_eq!((r.perplexity, r.token_count), (4.0, 3));
}

#[test]
fn service_errors_surface_code() {
    let server = fake_service();
    match client(&server).perplexity("   ") {
        Err(ComplexityError::ScorerUnavailable(msg)) => assert!(msg.contains("EMPTY_TEXT"), "{msg}"),
        other => panic!("{other:?}"),
    }
}

#[test]
fn rejects_sub_one_perplexity() {
    let server = FakeServer::start(|_, _| Reply::json(200, json!({"perplexity": 0.5, "token_count": 2, "model_id": "m"})));
    assert!(matches!(client(&server).perplexity("a b"), Err(ComplexityError::ScorerUnavailable(_))));
}

#[test]
fn batch_warms_cache_and_scorer_uses_it() {
    let server = fake_service();
    let c = client(&server);
    let cache = PerplexityCache::default();
    let texts = vec!["a b".to_string(), "a b c d".to_string()];
    assert_eq!(c.warm_cache(&cache, &texts).unwrap(), 2);
    assert_eq!(c.warm_cache(&cache, &texts).unwrap(), 0);
    let before = server.requests().len();

    let scorer = PerplexityScorer::new(cache, Some(Box::new(client(&server))));
    let s = scorer.score("a b c d").unwrap();
    assert_eq!((s.value, s.basis), (5.0, ScoreBasis::Perplexity));
    assert_eq!(server.requests().len(), before, "cached text must not hit the service");

    let s = scorer.score("one two three four five six").unwrap();
    assert_eq!(s.value, 7.0);
    assert_eq!(server.requests().len(), before + 1);
    assert!(scorer.cache().get("one two three four five six").is_some());
}

#[test]
fn bare_array_batch_is_accepted() {
    let server = FakeServer::start(|_, _| Reply::json(200, json!([{"perplexity": 2.0, "token_count": 1, "model_id": "m"}])));
    let r = client(&server).batch(&["x".to_string()]).unwrap();
    assert_eq!(r[0].perplexity, 2.0);
}

#[test]
fn unreachable_service_is_unavailable() {
    let c = PerplexityClient::new("http://127.0.0.1:9", Duration::from_millis(300));
    assert!(matches!(c.health(), Err(ComplexityError::ScorerUnavailable(_))));
}
