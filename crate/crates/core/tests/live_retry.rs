//! Live backend against a local fake endpoint.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use prop_probe::gateway::{
    CompletionRequest, EndpointKind, FinishReason, Gateway, GatewayError, LiveBackend, ModelSpec, RetryPolicy, RunLog,
};

struct Reply {
    status: u16,
    headers: Vec<(&'static str, &'static str)>,
    body: &'static str,
}

/// Serve one scripted reply per connection; returns the base URL and the
/// captured request bodies.
fn serve(replies: Vec<Reply>) -> (String, Arc<Mutex<Vec<String>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let captured = Arc::clone(&seen);
    thread::spawn(move || {
        for reply in replies {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0u8; length];
            reader.read_exact(&mut body).unwrap();
            captured.lock().unwrap().push(String::from_utf8(body).unwrap());
            let mut head = format!(
                "HTTP/1.1 {} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n",
                reply.status,
                reply.body.len()
            );
            for (k, v) in &reply.headers {
                head.push_str(&format!("{k}: {v}\r\n"));
            }
            head.push_str("\r\n");
            stream.write_all(head.as_bytes()).unwrap();
            stream.write_all(reply.body.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn fast_policy() -> RetryPolicy {
    RetryPolicy {
        max_attempts: 5,
        initial_delay: Duration::from_millis(5),
        max_hint: Duration::from_millis(50),
    }
}

fn limited() -> Reply {
    Reply {
        status: 429,
        headers: vec![("Retry-After", "0")],
        body: "{\"error\":\"slow down\"}",
    }
}

#[test]
fn retries_rate_limits_then_logs_attempts() {
    let ok = Reply {
        status: 200,
        headers: vec![],
        body: r#"{"choices":[{"message":{"content":"Doubt\nSlogans"},"finish_reason":"stop"}],"usage":{"prompt_tokens":12,"completion_tokens":4}}"#,
    };
    let (url, seen) = serve(vec![limited(), limited(), ok]);
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("runlog.jsonl");
    let gateway = Gateway::new(Box::new(LiveBackend::new(&url, "test-key", fast_policy()).unwrap()))
        .with_log(RunLog::open(&log_path).unwrap());
    let model = ModelSpec::new("gpt-4", 8192, EndpointKind::Chat).unwrap();
    let req = CompletionRequest::deterministic(model, "Article:\nbody".into(), 128);
    let resp = gateway.complete(&req).unwrap();
    assert_eq!(resp.text, "Doubt\nSlogans");
    assert_eq!(resp.finish_reason, FinishReason::Stop);
    assert_eq!(resp.prompt_tokens, 12);

    let entries = RunLog::read_entries(&log_path).unwrap();
    assert_eq!(entries.len(), 1);
    assert_eq!(entries[0].attempts, 3);
    assert_eq!(entries[0].temperature, 0.0);
    assert_eq!(entries[0].request_hash, req.request_hash);

    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    let sent: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(sent["temperature"], 0.0);
    assert_eq!(sent["messages"][0]["content"], "Article:\nbody");
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, seen) = serve((0..5).map(|_| limited()).collect());
    let dir = tempfile::tempdir().unwrap();
    let log_path = dir.path().join("runlog.jsonl");
    let gateway = Gateway::new(Box::new(LiveBackend::new(&url, "k", fast_policy()).unwrap()))
        .with_log(RunLog::open(&log_path).unwrap());
    let model = ModelSpec::new("ft-model", 2048, EndpointKind::Completion).unwrap();
    let err = gateway
        .complete(&CompletionRequest::deterministic(model, "x".into(), 16))
        .unwrap_err();
    assert!(matches!(err, GatewayError::RateLimited { attempts: 5 }), "{err}");
    assert_eq!(seen.lock().unwrap().len(), 5);
    let entries = RunLog::read_entries(&log_path).unwrap();
    assert_eq!(entries[0].attempts, 5);
    assert!(entries[0].error.is_some());
    let sent: serde_json::Value = serde_json::from_str(&seen.lock().unwrap()[0]).unwrap();
    assert_eq!(sent["stop"][0], " END");
}

#[test]
fn client_errors_are_not_retried() {
    let bad = Reply {
        status: 400,
        headers: vec![],
        body: "{\"error\":\"bad request\"}",
    };
    let (url, seen) = serve(vec![bad]);
    let gateway = Gateway::new(Box::new(LiveBackend::new(&url, "k", fast_policy()).unwrap()));
    let model = ModelSpec::new("gpt-4", 8192, EndpointKind::Chat).unwrap();
    let err = gateway
        .complete(&CompletionRequest::deterministic(model, "x".into(), 16))
        .unwrap_err();
    assert!(matches!(err, GatewayError::Status { status: 400, .. }));
    assert_eq!(seen.lock().unwrap().len(), 1);
}

#[test]
fn nonzero_temperature_never_reaches_the_wire() {
    // no server: any transport attempt would fail with a Transport error
    let gateway = Gateway::new(Box::new(LiveBackend::new("http://127.0.0.1:9", "k", fast_policy()).unwrap()));
    let model = ModelSpec::new("gpt-4", 8192, EndpointKind::Chat).unwrap();
    let err = gateway
        .complete(&CompletionRequest::new(model, "x".into(), 0.7, 16))
        .unwrap_err();
    assert!(matches!(err, GatewayError::NonZeroTemperature(t) if t == 0.7));
}
