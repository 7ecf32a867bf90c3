use std::time::Duration;

use axum::routing::post;
use axum::{Json, Router};
use nlctd_core::table::QueryMode;
use nlctd_service::assistant::{route_intent, route_rules, Intent, LlmConfig};
use proptest::prelude::*;
use serde_json::{json, Value};

/// Serves a chat-completions endpoint whose message content is `content`,
/// after `delay`.
fn fake_llm(content: &'static str, delay: Duration) -> LlmConfig {
    let (tx, rx) = std::sync::mpsc::channel();
    std::thread::spawn(move || {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        rt.block_on(async move {
            let app = Router::new().route(
                "/v1/chat/completions",
                post(move |Json(req): Json<Value>| async move {
                    assert_eq!(req["messages"][0]["role"], "system");
                    tokio::time::sleep(delay).await;
                    Json(json!({"choices": [{"message": {"role": "assistant", "content": content}}]}))
                }),
            );
            let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
            tx.send(listener.local_addr().unwrap()).unwrap();
            axum::serve(listener, app).await.unwrap();
        });
    });
    let addr = rx.recv().unwrap();
    LlmConfig {
        endpoint: format!("http://{addr}/v1/chat/completions"),
        api_key: Some("test".into()),
        model: "any".into(),
        timeout: Duration::from_millis(500),
    }
}

const CASE: &str = "Find unionable tables containing students with an average grade above 80";

#[test]
fn llm_structured_output_is_used() {
    let cfg = fake_llm(
        r#"{"intent": "discovery", "mode": "nlc_join", "condition": "students by grade", "key_column": "name"}"#,
        Duration::ZERO,
    );
    let t = route_intent("anything at all", Some(&cfg));
    assert_eq!(t.router, "llm");
    let e = t.extracted.unwrap();
    assert_eq!((e.mode, e.condition.as_str(), e.key_column.as_deref()), (QueryMode::NlcJoin, "students by grade", Some("name")));
}

#[test]
fn malformed_llm_output_falls_back_to_rules() {
    for content in ["Sure! It is a discovery request.", r#"{"intent": "discovery"}"#, r#"{"intent": "shopping"}"#] {
        let cfg = fake_llm(content, Duration::ZERO);
        let t = route_intent(CASE, Some(&cfg));
        assert_eq!(t, route_rules(CASE), "{content}");
    }
}

#[test]
fn slow_or_missing_llm_falls_back_to_rules() {
    let cfg = fake_llm(r#"{"intent": "other"}"#, Duration::from_secs(3));
    assert_eq!(route_intent(CASE, Some(&cfg)), route_rules(CASE));
    let gone = LlmConfig {
        endpoint: "http://127.0.0.1:9/v1/chat/completions".into(),
        api_key: None,
        model: "any".into(),
        timeout: Duration::from_millis(500),
    };
    let t = route_intent("what's the mean of column math?", Some(&gone));
    assert_eq!((t.detected_intent, t.router.as_str()), (Intent::Analysis, "rules"));
}

proptest! {
    #[test]
    fn rules_are_deterministic_and_consistent(text in "\\PC{0,80}") {
        let a = route_rules(&text);
        prop_assert_eq!(&a, &route_rules(&text));
        prop_assert_eq!(a.detected_intent == Intent::Discovery, a.extracted.is_some());
        if let Some(e) = &a.extracted {
            prop_assert_eq!(e.condition.as_str(), text.trim());
            prop_assert!(e.key_column.is_none() || e.mode == QueryMode::NlcJoin);
        }
        prop_assert!(!a.reply.is_empty());
    }

    #[test]
    fn discovery_cue_decides_mode(
        prefix in "[a-z ]{0,20}",
        cue in prop::sample::select(vec!["unionable", "joinable", "about"]),
        suffix in "[a-z ]{0,20}",
    ) {
        let text = format!("find {prefix} {cue} {suffix}");
        let t = route_rules(&text);
        prop_assert_eq!(t.detected_intent, Intent::Discovery);
        let words: Vec<&str> = text.split_whitespace().collect();
        let expect = if words.contains(&"unionable") || words.contains(&"union") {
            QueryMode::NlcUnion
        } else if words.contains(&"joinable") || words.contains(&"join") {
            QueryMode::NlcJoin
        } else {
            QueryMode::NlOnly
        };
        prop_assert_eq!(t.extracted.unwrap().mode, expect);
    }
}
