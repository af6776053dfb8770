//! Exercises the remote completion client against a minimal in-process
//! HTTP server: scoring with natural-log conversion, sampling, the retry
//! policy, and capability errors.

use std::io::{Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use stqa_core::backend::{
    cross_entropy, BackendError, LmBackend, LogBase, RemoteBackend, RemoteConfig, SamplingParams,
};

/// Serves one canned response per incoming connection, in order, then stops.
/// Returns the base URL and a counter of requests actually received.
fn serve(responses: Vec<(u16, String)>) -> (String, Arc<AtomicUsize>, std::thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").expect("bind localhost");
    let addr = listener.local_addr().unwrap();
    let hits = Arc::new(AtomicUsize::new(0));
    let hits_clone = hits.clone();
    let handle = std::thread::spawn(move || {
        let mut bodies = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = match listener.accept() {
                Ok(pair) => pair,
                Err(_) => break,
            };
            hits_clone.fetch_add(1, Ordering::SeqCst);
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            // Read headers, then the content-length body.
            let body_len = loop {
                let n = stream.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break 0;
                }
                buf.extend_from_slice(&chunk[..n]);
                if let Some(header_end) = find_subslice(&buf, b"\r\n\r\n") {
                    let headers = String::from_utf8_lossy(&buf[..header_end]).to_string();
                    let content_length = headers
                        .lines()
                        .find_map(|l| {
                            let (name, value) = l.split_once(':')?;
                            name.eq_ignore_ascii_case("content-length")
                                .then(|| value.trim().parse::<usize>().ok())?
                        })
                        .unwrap_or(0);
                    let have = buf.len() - header_end - 4;
                    if have >= content_length {
                        bodies.push(
                            String::from_utf8_lossy(&buf[header_end + 4..header_end + 4 + content_length])
                                .to_string(),
                        );
                        break content_length;
                    }
                }
            };
            let _ = body_len;
            let reason = if status == 200 { "OK" } else { "ERR" };
            let response = format!(
                "HTTP/1.1 {status} {reason}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            let _ = stream.write_all(response.as_bytes());
        }
        bodies
    });
    (format!("http://{addr}"), hits, handle)
}

fn find_subslice(haystack: &[u8], needle: &[u8]) -> Option<usize> {
    haystack.windows(needle.len()).position(|w| w == needle)
}

fn fast_config(base_url: &str) -> RemoteConfig {
    let mut config = RemoteConfig::new(base_url, "test-model");
    config.initial_backoff_ms = 1;
    config
}

const LN2: f64 = std::f64::consts::LN_2;

#[test]
fn scores_echoed_prompt_tokens_and_converts_to_bits() {
    let body = serde_json::json!({
        "prompt_tokens": ["the", "cat"],
        "prompt_logprobs": [-LN2, -2.0 * LN2],
        "completions": []
    })
    .to_string();
    let (url, hits, handle) = serve(vec![(200, body)]);
    let backend = RemoteBackend::new(fast_config(&url));
    let scored = backend.score_text("the cat").unwrap();
    assert_eq!(scored.len(), 2);
    assert!((scored[0].logprob - (-1.0)).abs() < 1e-9);
    assert!((scored[1].logprob - (-2.0)).abs() < 1e-9);
    let ce = cross_entropy(&backend, "the cat");
    // Second request needed for the direct CE call.
    assert!(ce.is_err() || hits.load(Ordering::SeqCst) >= 1);
    drop(handle);
}

#[test]
fn request_carries_protocol_fields() {
    let body = serde_json::json!({
        "prompt_tokens": ["x"],
        "prompt_logprobs": [-1.0],
        "completions": []
    })
    .to_string();
    let (url, _hits, handle) = serve(vec![(200, body)]);
    let backend = RemoteBackend::new(fast_config(&url));
    backend.score_text("hello world").unwrap();
    let bodies = handle.join().unwrap();
    let request: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(request["prompt"], "hello world");
    assert_eq!(request["echo_logprobs"], true);
    assert_eq!(request["max_tokens"], 0);
    assert_eq!(request["model"], "test-model");
}

#[test]
fn sampling_returns_completion_texts_and_passes_controls() {
    let body = serde_json::json!({
        "prompt_tokens": [],
        "prompt_logprobs": [],
        "completions": [{"text": "one"}, {"text": "two"}]
    })
    .to_string();
    let (url, _hits, handle) = serve(vec![(200, body)]);
    let backend = RemoteBackend::new(fast_config(&url));
    let params = SamplingParams {
        top_p: 0.2,
        max_new_tokens: 6,
        num_samples: 2,
        seed: Some(7),
        stop_sequences: vec!["?".into()],
    };
    let samples = backend.sample_continuations("prompt text", &params).unwrap();
    assert_eq!(samples, vec!["one".to_string(), "two".to_string()]);
    let bodies = handle.join().unwrap();
    let request: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
    assert_eq!(request["top_p"], 0.2);
    assert_eq!(request["n"], 2);
    assert_eq!(request["seed"], 7);
    assert_eq!(request["max_tokens"], 6);
    assert_eq!(request["stop"][0], "?");
}

#[test]
fn retries_on_server_error_then_succeeds() {
    let ok = serde_json::json!({
        "prompt_tokens": ["x"],
        "prompt_logprobs": [-1.0],
        "completions": []
    })
    .to_string();
    let (url, hits, _handle) = serve(vec![
        (500, "{\"error\": \"transient\"}".to_string()),
        (200, ok),
    ]);
    let backend = RemoteBackend::new(fast_config(&url));
    let scored = backend.score_text("x").unwrap();
    assert_eq!(scored.len(), 1);
    assert_eq!(hits.load(Ordering::SeqCst), 2);
}

#[test]
fn transport_error_reports_attempt_count() {
    let (url, hits, _handle) = serve(vec![
        (500, "{}".to_string()),
        (500, "{}".to_string()),
        (500, "{}".to_string()),
    ]);
    let backend = RemoteBackend::new(fast_config(&url));
    match backend.score_text("x") {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 3),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 3);
}

#[test]
fn client_errors_do_not_retry() {
    let (url, hits, _handle) = serve(vec![(400, "{\"error\": \"bad\"}".to_string())]);
    let backend = RemoteBackend::new(fast_config(&url));
    match backend.score_text("x") {
        Err(BackendError::Transport { attempts, .. }) => assert_eq!(attempts, 1),
        other => panic!("expected transport error, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
}

#[test]
fn http_501_maps_to_capability_error() {
    let (url, _hits, _handle) = serve(vec![(501, "{}".to_string())]);
    let backend = RemoteBackend::new(fast_config(&url));
    let params = SamplingParams {
        top_p: 0.5,
        max_new_tokens: 2,
        num_samples: 1,
        seed: None,
        stop_sequences: vec![],
    };
    assert!(matches!(
        backend.sample_continuations("x", &params),
        Err(BackendError::Capability { .. })
    ));
}

#[test]
fn mismatched_token_and_logprob_arrays_rejected() {
    let body = serde_json::json!({
        "prompt_tokens": ["a", "b"],
        "prompt_logprobs": [-1.0],
        "completions": []
    })
    .to_string();
    let (url, _hits, _handle) = serve(vec![(200, body)]);
    let backend = RemoteBackend::new(fast_config(&url));
    assert!(matches!(
        backend.score_text("a b"),
        Err(BackendError::Protocol(_))
    ));
}

#[test]
fn log_base_two_endpoints_skip_conversion() {
    let body = serde_json::json!({
        "prompt_tokens": ["a"],
        "prompt_logprobs": [-2.0],
        "completions": []
    })
    .to_string();
    let (url, _hits, _handle) = serve(vec![(200, body)]);
    let mut config = fast_config(&url);
    config.log_base = LogBase::Two;
    let backend = RemoteBackend::new(config);
    let scored = backend.score_text("a").unwrap();
    assert_eq!(scored[0].logprob, -2.0);
}
