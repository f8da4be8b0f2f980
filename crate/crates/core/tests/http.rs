use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::process::Command;
use std::sync::{Arc, Mutex};

use serde_json::{json, Value};

use spikescore::dialogue::{
    induce_continuation, BackendError, ChatBackend, ChatRequest, DecodingConfig, HttpBackendConfig, HttpChatBackend,
    Message, RetryPolicy,
};
use spikescore::dialogue::backend::validate_messages;
use spikescore::rag::{Embedder, HttpEmbedder};
use spikescore::Error;

#[derive(Debug, Clone)]
struct Seen {
    headers: Vec<(String, String)>,
    body: Value,
}

type Handler = dyn Fn(usize, &Value) -> (u16, Value) + Send + Sync;

/// Minimal HTTP/1.1 server answering every POST through `handler`.
struct Mock {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl Mock {
    fn start(handler: impl Fn(usize, &Value) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::new(handler);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    continue;
                }
                let mut headers = Vec::new();
                let mut len = 0;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (k, v) = h.split_once(':').unwrap();
                    let (k, v) = (k.trim().to_ascii_lowercase(), v.trim().to_string());
                    if k == "content-length" {
                        len = v.parse().unwrap();
                    }
                    headers.push((k, v));
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                let body: Value = serde_json::from_slice(&buf).unwrap_or(Value::Null);
                let n = {
                    let mut s = log.lock().unwrap();
                    s.push(Seen { headers, body: body.clone() });
                    s.len() - 1
                };
                let (code, reply) = handler(n, &body);
                let text = reply.to_string();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {code} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
            }
        });
        Self { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn reply(text: &str, logprobs: &[f64]) -> Value {
    let tokens: Vec<Value> = logprobs.iter().map(|l| json!({"token": "t", "logprob": l})).collect();
    json!({"choices": [{"message": {"role": "assistant", "content": text}, "logprobs": {"content": tokens}}]})
}

fn backend(url: &str, key_env: &str) -> HttpChatBackend {
    HttpChatBackend::new(HttpBackendConfig {
        endpoint: url.to_string(),
        model: "mock-model".into(),
        api_key_env: key_env.into(),
        timeout_secs: 5,
    })
}

fn request(logprobs: bool) -> ChatRequest {
    ChatRequest {
        messages: vec![Message::user("What is 2+2?")],
        decoding: DecodingConfig::conservative(),
        logprobs,
    }
}

#[test]
fn chat_request_shape_and_reply() {
    let mock = Mock::start(|_, _| (200, reply("four", &[-0.25, -1.5])));
    std::env::set_var("SPIKESCORE_TEST_KEY_A", "sekret");
    let b = backend(&mock.url, "SPIKESCORE_TEST_KEY_A");
    let r = b.chat_complete(&request(true)).unwrap();
    assert_eq!(r.text, "four");
    assert_eq!(r.logprobs, Some(vec![-0.25, -1.5]));

    let seen = &mock.requests()[0];
    assert_eq!(seen.body["model"], "mock-model");
    assert_eq!(seen.body["temperature"], 0.2);
    assert_eq!(seen.body["top_p"], 0.9);
    assert_eq!(seen.body["logprobs"], true);
    assert_eq!(seen.body["messages"][0]["role"], "user");
    assert!(seen.headers.contains(&("authorization".into(), "Bearer sekret".into())));
}

#[test]
fn logprobs_absent_when_not_requested() {
    let mock = Mock::start(|_, _| (200, json!({"choices": [{"message": {"content": "ok"}}]})));
    let b = backend(&mock.url, "SPIKESCORE_TEST_KEY_UNSET");
    let r = b.chat_complete(&request(false)).unwrap();
    assert_eq!(r.logprobs, None);
    let seen = &mock.requests()[0];
    assert!(seen.body.get("logprobs").is_none());
    assert!(!seen.headers.iter().any(|(k, _)| k == "authorization"));
}

#[test]
fn error_status_and_malformed_bodies() {
    let mock = Mock::start(|n, _| match n {
        0 => (503, json!({"error": "overloaded"})),
        1 => (200, json!({"choices": []})),
        _ => (200, json!({"choices": [{"message": {"content": "x"}, "logprobs": {"content": "nope"}}]})),
    });
    let b = backend(&mock.url, "SPIKESCORE_TEST_KEY_UNSET");
    match b.chat_complete(&request(false)) {
        Err(BackendError::Status { code, body }) => {
            assert_eq!(code, 503);
            assert!(body.contains("overloaded"));
        }
        other => panic!("{other:?}"),
    }
    assert!(matches!(b.chat_complete(&request(false)), Err(BackendError::Malformed(_))));
    assert!(matches!(b.chat_complete(&request(true)), Err(BackendError::Malformed(_))));
}

#[test]
fn invalid_message_lists_never_reach_the_wire() {
    let mock = Mock::start(|_, _| (200, reply("x", &[])));
    let b = backend(&mock.url, "SPIKESCORE_TEST_KEY_UNSET");
    let mut r = request(false);
    r.messages.push(Message::assistant("dangling"));
    assert!(matches!(b.chat_complete(&r), Err(BackendError::InvalidRequest(_))));
    assert!(mock.requests().is_empty());
}

#[test]
fn retries_then_truncates() {
    let mock = Mock::start(|n, _| if n == 0 { (200, reply("first", &[-0.1])) } else { (500, json!({})) });
    let b = backend(&mock.url, "SPIKESCORE_TEST_KEY_UNSET");
    let req = spikescore::dialogue::InduceRequest {
        item_id: "i",
        domain_id: "d",
        question: "q?",
        initial_answer: "a",
        initial_logprobs: Some(vec![-0.3]),
        decoding: DecodingConfig { turn_budget: 5, ..DecodingConfig::conservative() },
        prompt_seed: 1,
        system_directive: None,
        retry: RetryPolicy { max_attempts: 3, base_delay_ms: 1, factor: 1.0 },
        request_logprobs: true,
    };
    let t = induce_continuation(&req, &b).unwrap();
    assert!(t.truncated);
    assert_eq!(t.turns.len(), 1);
    assert!(t.failure.as_deref().unwrap().starts_with("turn 3: http status 500"));
    assert_eq!(mock.requests().len(), 4);
}

#[test]
fn induction_sends_growing_history() {
    let mock = Mock::start(|n, _| (200, reply(&format!("answer {n}"), &[-0.5, -0.5])));
    let b = backend(&mock.url, "SPIKESCORE_TEST_KEY_UNSET");
    let req = spikescore::dialogue::InduceRequest {
        item_id: "i",
        domain_id: "d",
        question: "q?",
        initial_answer: "a",
        initial_logprobs: None,
        decoding: DecodingConfig { turn_budget: 4, ..DecodingConfig::conservative() },
        prompt_seed: 7,
        system_directive: None,
        retry: RetryPolicy::default(),
        request_logprobs: true,
    };
    let t = induce_continuation(&req, &b).unwrap();
    assert_eq!(t.len(), 4);
    assert!(!t.truncated);
    let seen = mock.requests();
    assert_eq!(seen.len(), 3);
    for (i, s) in seen.iter().enumerate() {
        let msgs: Vec<Message> = serde_json::from_value(s.body["messages"].clone()).unwrap();
        assert_eq!(msgs.len(), 3 + 2 * i);
        validate_messages(&msgs).unwrap();
        if i > 0 {
            assert_eq!(msgs[msgs.len() - 2].content, format!("answer {}", i - 1));
        }
    }
}

#[test]
fn embedding_service() {
    let mock = Mock::start(|n, body| {
        let texts = body["texts"].as_array().unwrap();
        let dim = if n == 0 { 3 } else { 2 };
        let vectors: Vec<Vec<f64>> = texts.iter().enumerate().map(|(i, _)| vec![i as f64 + 1.0; dim]).collect();
        (200, json!({ "vectors": vectors }))
    });
    let e = HttpEmbedder::new(mock.url.clone(), 3, 5);
    let v = e.embed(&["alpha", "beta"]).unwrap();
    assert_eq!(v, vec![vec![1.0; 3], vec![2.0; 3]]);
    assert_eq!(mock.requests()[0].body, json!({"texts": ["alpha", "beta"]}));
    assert!(matches!(e.embed(&["gamma"]), Err(Error::DimensionMismatch { expected: 3, actual: 2 })));
}

#[test]
fn embedding_service_error_status() {
    let mock = Mock::start(|_, _| (429, json!({"error": "slow down"})));
    let e = HttpEmbedder::new(mock.url.clone(), 3, 5);
    let err = e.embed(&["x"]).unwrap_err();
    assert_eq!(err.class(), "backend");
    assert!(err.to_string().contains("429"));
}

#[test]
fn http_backend_pipeline_with_perplexity() {
    let mock = Mock::start(|n, _| {
        let lp = -0.1 * (1 + n % 4) as f64;
        (200, reply("more", &[lp, lp * 2.0]))
    });
    let dir = tempfile::tempdir().unwrap();
    let qa = dir.path().join("qa.jsonl");
    let mut lines = String::new();
    for i in 0..4 {
        lines.push_str(&format!(
            "{{\"item_id\":\"h{i}\",\"domain_id\":\"web\",\"question\":\"q{i}\",\"reference_answers\":[\"r\"],\"generated_answer\":\"g\",\"label\":{},\"answer_logprobs\":[-0.2,-0.4]}}\n",
            i % 2
        ));
    }
    std::fs::write(&qa, lines).unwrap();
    let cfg = dir.path().join("http.toml");
    std::fs::write(
        &cfg,
        format!(
            "backend = \"http\"\nbackbone = \"perplexity\"\nk = 4\n[http]\nendpoint = {:?}\nmodel = \"m\"\napi_key_env = \"SPIKESCORE_TEST_KEY_UNSET\"\n[domains.web]\nqa = {:?}\n",
            mock.url,
            qa.to_str().unwrap()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    for s in ["induce", "score", "spike"] {
        let o = Command::new(env!("CARGO_BIN_EXE_spikescore"))
            .args(["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), s])
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{s}: {}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(mock.requests().len(), 12);
    let spikes = std::fs::read_to_string(out.join("spikes/web.jsonl")).unwrap();
    assert_eq!(spikes.lines().count(), 4);
}
