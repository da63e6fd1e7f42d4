use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use tracekg::llm::{
    assemble_baseline_prompt, BackendError, Bridge, ChatBackend, ChatRequest, HttpBackend, LlmConfig, LlmError,
};

struct Seen {
    headers: Vec<String>,
    body: serde_json::Value,
}

/// Serves one scripted `(status, body)` reply per connection, in order.
fn serve(replies: Vec<(u16, &'static str)>) -> (String, Arc<Mutex<Vec<Seen>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let log = seen.clone();
    thread::spawn(move || {
        for (status, body) in replies {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut headers = Vec::new();
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end().to_string();
                if line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                headers.push(line);
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            log.lock().unwrap().push(Seen {
                headers,
                body: serde_json::from_slice(&buf).unwrap(),
            });
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        }
    });
    (url, seen)
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"CPU_1 ran it."}}],"usage":{"prompt_tokens":42,"completion_tokens":4}}"#;

fn cfg(endpoint: &str) -> LlmConfig {
    LlmConfig {
        endpoint: endpoint.into(),
        model: "test-model".into(),
        samples: 1,
        retry_backoff_ms: 0,
        timeout_secs: 10,
        ..LlmConfig::default()
    }
}

fn request() -> ChatRequest {
    ChatRequest {
        model: "test-model".into(),
        temperature: 0.3,
        max_output_tokens: 64,
        system: "sys".into(),
        user: "{}".into(),
        options: Default::default(),
    }
}

#[test]
fn success_parses_text_usage_and_sends_auth() {
    let (url, seen) = serve(vec![(200, OK)]);
    let backend = HttpBackend::new(&cfg(&url), "sk-test").unwrap();
    let resp = backend.complete(&request()).unwrap();
    assert_eq!(resp.text, "CPU_1 ran it.");
    assert_eq!((resp.prompt_tokens, resp.completion_tokens), (Some(42), Some(4)));

    let seen = seen.lock().unwrap();
    assert!(seen[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("authorization: Bearer sk-test")));
    assert_eq!(seen[0].body["model"], "test-model");
    assert_eq!(seen[0].body["temperature"], 0.3);
    assert_eq!(seen[0].body["messages"][0]["role"], "system");
    assert_eq!(seen[0].body["messages"][1]["content"], "{}");
}

#[test]
fn custom_auth_header() {
    let (url, seen) = serve(vec![(200, OK)]);
    let c = LlmConfig {
        auth_header: "x-api-key".into(),
        auth_template: "{key}".into(),
        ..cfg(&url)
    };
    HttpBackend::new(&c, "abc").unwrap().complete(&request()).unwrap();
    assert!(seen.lock().unwrap()[0]
        .headers
        .iter()
        .any(|h| h.eq_ignore_ascii_case("x-api-key: abc")));
}

#[test]
fn status_codes_map_to_error_kinds() {
    let (url, _) = serve(vec![
        (401, r#"{"error":"bad key"}"#),
        (429, "slow down"),
        (400, r#"{"error":{"code":"context_length_exceeded"}}"#),
        (404, "no such model"),
        (200, "not json"),
    ]);
    let b = HttpBackend::new(&cfg(&url), "k").unwrap();
    assert!(matches!(b.complete(&request()), Err(BackendError::Credential(_))));
    assert!(matches!(
        b.complete(&request()),
        Err(BackendError::Transient { status: Some(429), .. })
    ));
    assert!(matches!(b.complete(&request()), Err(BackendError::ContextLimit(_))));
    assert!(matches!(
        b.complete(&request()),
        Err(BackendError::Fatal { status: Some(404), .. })
    ));
    assert!(matches!(b.complete(&request()), Err(BackendError::Fatal { .. })));
}

#[test]
fn bridge_retries_server_errors_then_succeeds() {
    let (url, seen) = serve(vec![(503, "busy"), (502, "busy"), (200, OK)]);
    let c = cfg(&url);
    let bridge = Bridge::live(c.clone(), Arc::new(HttpBackend::new(&c, "k").unwrap())).unwrap();
    let env = assemble_baseline_prompt("path\tstart_ns\tend_ns\tvalue\n", "q").unwrap();
    let answers = bridge.ask(&env).unwrap();
    assert_eq!(answers.len(), 1);
    assert_eq!(answers[0].raw_text, "CPU_1 ran it.");
    assert_eq!(bridge.backend_calls(), 3);
    assert_eq!(seen.lock().unwrap().len(), 3);
}

#[test]
fn bridge_gives_up_after_max_attempts() {
    let (url, _) = serve(vec![(500, "a"), (500, "b"), (500, "c")]);
    let c = cfg(&url);
    let bridge = Bridge::live(c.clone(), Arc::new(HttpBackend::new(&c, "k").unwrap())).unwrap();
    let env = assemble_baseline_prompt("x", "q").unwrap();
    match bridge.ask(&env) {
        Err(LlmError::Transport {
            status: Some(500),
            attempts: 3,
            ..
        }) => {}
        other => panic!("{other:?}"),
    }
}

#[test]
fn bridge_does_not_retry_rejected_credentials() {
    let (url, seen) = serve(vec![(401, "no")]);
    let c = cfg(&url);
    let bridge = Bridge::live(c.clone(), Arc::new(HttpBackend::new(&c, "k").unwrap())).unwrap();
    let env = assemble_baseline_prompt("x", "q").unwrap();
    assert!(matches!(bridge.ask(&env), Err(LlmError::Credential(_))));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn missing_key_is_a_credential_error() {
    let c = LlmConfig {
        api_key_env: "TRACEKG_TEST_KEY_THAT_IS_NEVER_SET".into(),
        ..LlmConfig::default()
    };
    assert!(matches!(HttpBackend::from_env(&c), Err(LlmError::Credential(_))));
}

#[test]
fn unreachable_endpoint_is_transient() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let b = HttpBackend::new(&cfg(&format!("http://127.0.0.1:{port}/v1")), "k").unwrap();
    assert!(matches!(b.complete(&request()), Err(BackendError::Transient { .. })));
}
