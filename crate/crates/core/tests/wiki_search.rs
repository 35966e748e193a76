mod common;

use common::{Reply, ScriptedServer};
use mact_core::tools::{KnowledgeSearch, SearchError, StaticSearch, WikiClient, WikiConfig};
use serde_json::json;

fn client(url: &str, cache: Option<std::path::PathBuf>) -> WikiClient {
    WikiClient::new(WikiConfig {
        endpoint: format!("{url}/w/api.php"),
        max_retries: 1,
        backoff_ms: 1,
        timeout_s: 5.0,
        min_interval_ms: 0,
        cache_dir: cache,
    })
}

fn page_reply() -> serde_json::Value {
    json!({"batchcomplete": "", "query": {"pages": {"123": {
        "pageid": 123, "index": 1, "title": "Tesla, Inc.",
        "extract": "Tesla, Inc. is an American electric vehicle company.\nIt was founded in 2003."
    }}}})
}

#[test]
fn returns_first_paragraph_and_sends_search_query() {
    let server = ScriptedServer::sequence(vec![Reply::json(200, page_reply())]);
    let c = client(&server.url, None);
    assert_eq!(
        c.search("Tesla").unwrap(),
        "Tesla, Inc. is an American electric vehicle company."
    );
    let target = server.requests.lock().unwrap()[0].0.clone();
    for part in [
        "generator=search",
        "gsrsearch=Tesla",
        "prop=extracts",
        "explaintext=1",
        "exintro=1",
    ] {
        assert!(target.contains(part), "{target}");
    }
}

#[test]
fn no_hit_is_not_found() {
    let server = ScriptedServer::sequence(vec![Reply::json(200, json!({"batchcomplete": ""}))]);
    assert_eq!(
        client(&server.url, None).search("Qwxzv"),
        Err(SearchError::NotFound("Qwxzv".into()))
    );
}

#[test]
fn server_failure_is_a_network_error_after_retries() {
    let server = ScriptedServer::sequence(vec![Reply::json(503, json!({}))]);
    let err = client(&server.url, None).search("Tesla").unwrap_err();
    assert!(matches!(err, SearchError::NetworkError(_)));
    assert_eq!(server.hits(), 2);
}

#[test]
fn disk_cache_avoids_repeat_requests() {
    let dir = tempfile::tempdir().unwrap();
    let server = ScriptedServer::sequence(vec![Reply::json(200, page_reply())]);
    let c = client(&server.url, Some(dir.path().to_path_buf()));
    let a = c.search("Tesla").unwrap();
    let again = client(&server.url, Some(dir.path().to_path_buf()));
    assert_eq!(again.search("Tesla").unwrap(), a);
    assert_eq!(server.hits(), 1);
}

#[test]
fn static_search_lookup() {
    let s: StaticSearch = serde_json::from_value(json!({"Tesla, Inc.": "An automaker."})).unwrap();
    assert_eq!(s.search("tesla, inc.").unwrap(), "An automaker.");
    assert_eq!(s.search(" "), Err(SearchError::EmptyEntity));
    assert!(matches!(s.search("Acme"), Err(SearchError::NotFound(_))));
}
