use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use ocrbench::backends::{transcribe, Backend, BackendSpec, HttpBackend, Request, RequestStyle};
use ocrbench::latency::estimate_params;

struct Captured {
    head: String,
    body: Vec<u8>,
}

fn read_request(stream: &mut TcpStream) -> Captured {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut head = String::new();
    loop {
        let mut line = String::new();
        reader.read_line(&mut line).unwrap();
        if line == "\r\n" || line.is_empty() {
            break;
        }
        head.push_str(&line);
    }
    let lower = head.to_ascii_lowercase();
    let len = lower
        .lines()
        .find_map(|l| l.strip_prefix("content-length:"))
        .map(|v| v.trim().parse::<usize>().unwrap());
    let mut body = Vec::new();
    match len {
        Some(n) => {
            body.resize(n, 0);
            reader.read_exact(&mut body).unwrap();
        }
        None if lower.contains("transfer-encoding: chunked") => loop {
            let mut size = String::new();
            reader.read_line(&mut size).unwrap();
            let n = usize::from_str_radix(size.trim(), 16).unwrap();
            let mut chunk = vec![0; n + 2];
            reader.read_exact(&mut chunk).unwrap();
            if n == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..n]);
        },
        None => {}
    }
    Captured { head, body }
}

/// Serve one connection: capture the request and hand the socket to `reply`.
fn serve_once<F>(reply: F) -> (String, mpsc::Receiver<Captured>)
where
    F: FnOnce(&mut TcpStream) + Send + 'static,
{
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        let (mut stream, _) = listener.accept().unwrap();
        let captured = read_request(&mut stream);
        tx.send(captured).unwrap();
        reply(&mut stream);
    });
    (format!("http://{addr}/v1/chat/completions"), rx)
}

fn spec(endpoint: String, style: RequestStyle, stream: bool) -> BackendSpec {
    BackendSpec {
        name: "local".into(),
        endpoint,
        model: Some("test-vlm".into()),
        auth_env: None,
        request_style: style,
        timeout_secs: 5.0,
        max_concurrency: 1,
        stream,
    }
}

fn request(dir: &tempfile::TempDir) -> Request {
    let img = dir.path().join("page.png");
    std::fs::write(&img, b"\x89PNG fake").unwrap();
    Request {
        sample_id: "s1".into(),
        images: vec![img],
        prompt: "Transcribe the page.".into(),
    }
}

const SSE_HEAD: &str = "HTTP/1.1 200 OK\r\nContent-Type: text/event-stream\r\nConnection: close\r\n\r\n";

fn sse(stream: &mut TcpStream, delta: &str) {
    let ev = serde_json::json!({"choices": [{"delta": {"content": delta}}]});
    write!(stream, "data: {ev}\n\n").unwrap();
    stream.flush().unwrap();
}

#[test]
fn streamed_chat_recovers_inter_token_delay() {
    let (url, rx) = serve_once(|s| {
        s.write_all(SSE_HEAD.as_bytes()).unwrap();
        // A role-only event carries no text and must not count.
        write!(s, "data: {}\n\n", serde_json::json!({"choices": [{"delta": {"role": "assistant"}}]})).unwrap();
        thread::sleep(Duration::from_millis(50));
        let start = Instant::now();
        for i in 0..201u32 {
            let due = start + Duration::from_millis(4 * i as u64);
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                thread::sleep(wait);
            }
            sse(s, "w ");
        }
        s.write_all(b"data: [DONE]\n\n").unwrap();
    });
    let dir = tempfile::tempdir().unwrap();
    std::env::set_var("OCRBENCH_TEST_TOKEN", "sekrit");
    let mut sp = spec(url, RequestStyle::ChatImage, true);
    sp.auth_env = Some("OCRBENCH_TEST_TOKEN".into());
    let backend = HttpBackend::new(sp).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert_eq!(rec.error, None);
    assert_eq!(rec.output_text, "w ".repeat(201));
    let trace = rec.trace.expect("streamed response carries a trace");
    assert_eq!(trace.token_count, 201);
    assert!(trace.ttft() >= 0.05, "ttft {}", trace.ttft());
    let est = estimate_params(&[trace]).unwrap();
    assert!((est.inter_token - 0.004).abs() < 0.0005, "tau {}", est.inter_token);

    let req = rx.recv().unwrap();
    assert!(req.head.to_ascii_lowercase().contains("authorization: bearer sekrit"));
    let body: serde_json::Value = serde_json::from_slice(&req.body).unwrap();
    assert_eq!(body["model"], "test-vlm");
    assert_eq!(body["stream"], true);
    let content = body["messages"][0]["content"].as_array().unwrap();
    assert_eq!(content.len(), 2);
    assert!(content[0]["image_url"]["url"].as_str().unwrap().starts_with("data:image/png;base64,"));
    assert_eq!(content[1]["type"], "text");
    assert_eq!(content[1]["text"], "Transcribe the page.");
}

#[test]
fn non_streaming_chat_has_no_trace() {
    let (url, _rx) = serve_once(|s| {
        let body = serde_json::json!({"choices": [{"message": {"content": "hello world"}}]}).to_string();
        write!(s, "HTTP/1.1 200 OK\r\nContent-Type: application/json\r\nContent-Length: {}\r\n\r\n{body}", body.len()).unwrap();
    });
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(url, RequestStyle::ChatImage, false)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert_eq!(rec.output_text, "hello world");
    assert!(rec.trace.is_none());
    assert!(rec.elapsed_seconds.is_some());
}

#[test]
fn simple_image_posts_multipart_form() {
    let (url, rx) = serve_once(|s| {
        let body = r#"{"text": "ಕನ್ನಡ"}"#;
        write!(s, "HTTP/1.1 200 OK\r\nContent-Length: {}\r\n\r\n{body}", body.len()).unwrap();
    });
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(url, RequestStyle::SimpleImage, false)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert_eq!(rec.output_text, "ಕನ್ನಡ");
    let req = rx.recv().unwrap();
    assert!(req.head.to_ascii_lowercase().contains("multipart/form-data"));
    let body = String::from_utf8_lossy(&req.body);
    assert!(body.contains("name=\"prompt\""));
    assert!(body.contains("Transcribe the page."));
    assert!(body.contains("name=\"image\"; filename=\"page.png\""));
}

#[test]
fn simple_image_ndjson_stream() {
    let (url, _rx) = serve_once(|s| {
        s.write_all(b"HTTP/1.1 200 OK\r\nConnection: close\r\n\r\n").unwrap();
        for t in ["one ", "two ", "three"] {
            writeln!(s, "{}", serde_json::json!({"text": t})).unwrap();
            s.flush().unwrap();
            thread::sleep(Duration::from_millis(2));
        }
        writeln!(s, "{}", serde_json::json!({"done": true})).unwrap();
    });
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(url, RequestStyle::SimpleImage, true)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert_eq!(rec.output_text, "one two three");
    assert_eq!(rec.trace.unwrap().token_count, 3);
}

#[test]
fn http_failure_becomes_error_record() {
    let (url, _rx) = serve_once(|s| {
        s.write_all(b"HTTP/1.1 503 Service Unavailable\r\nContent-Length: 4\r\n\r\nbusy").unwrap();
    });
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(url, RequestStyle::ChatImage, true)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    let err = rec.error.unwrap();
    assert!(err.contains("503") && err.contains("busy"), "{err}");
    assert!(rec.trace.is_none());
}

#[test]
fn malformed_stream_becomes_error_record() {
    let (url, _rx) = serve_once(|s| {
        s.write_all(SSE_HEAD.as_bytes()).unwrap();
        sse(s, "ok");
        s.write_all(b"data: {not json\n\n").unwrap();
    });
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(url, RequestStyle::ChatImage, true)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert!(rec.error.unwrap().starts_with("malformed stream"));
}

#[test]
fn stream_without_done_marker_is_rejected() {
    let (url, _rx) = serve_once(|s| {
        s.write_all(SSE_HEAD.as_bytes()).unwrap();
        sse(s, "partial");
    });
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(url, RequestStyle::ChatImage, true)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert!(rec.error.unwrap().contains("[DONE]"));
}

#[test]
fn timeout_becomes_error_record() {
    let (url, _rx) = serve_once(|s| {
        thread::sleep(Duration::from_millis(1500));
        let _ = s.write_all(SSE_HEAD.as_bytes());
    });
    let dir = tempfile::tempdir().unwrap();
    let mut sp = spec(url, RequestStyle::ChatImage, true);
    sp.timeout_secs = 0.3;
    let backend = HttpBackend::new(sp).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert_eq!(rec.error.as_deref(), Some("request timed out"));
}

#[test]
fn unreachable_endpoint_becomes_error_record() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let dir = tempfile::tempdir().unwrap();
    let backend = HttpBackend::new(spec(format!("http://127.0.0.1:{port}/"), RequestStyle::ChatImage, true)).unwrap();
    let rec = transcribe(&backend, &request(&dir), Instant::now());
    assert!(rec.is_error());
    assert_eq!(backend.name(), "local");
}

#[test]
fn missing_image_and_empty_request_fail_before_sending() {
    let backend = HttpBackend::new(spec("http://127.0.0.1:9/".into(), RequestStyle::ChatImage, true)).unwrap();
    let mut req = Request {
        sample_id: "s".into(),
        images: vec![],
        prompt: String::new(),
    };
    assert_eq!(transcribe(&backend, &req, Instant::now()).error.as_deref(), Some("no images in request"));
    req.images.push(PathBuf::from("/nonexistent/page.png"));
    assert!(transcribe(&backend, &req, Instant::now()).error.unwrap().starts_with("image /nonexistent/page.png"));
}

#[test]
fn missing_token_variable_is_reported() {
    let mut sp = spec("http://127.0.0.1:9/".into(), RequestStyle::ChatImage, true);
    sp.auth_env = Some("OCRBENCH_TEST_UNSET_VAR".into());
    let err = HttpBackend::new(sp).err().unwrap().to_string();
    assert!(err.contains("OCRBENCH_TEST_UNSET_VAR"));
}

#[test]
fn spec_file_validation() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("b.json");
    std::fs::write(&p, r#"{"name":"g","endpoint":"https://x/v1","request_style":"chat_image","max_concurrency":0}"#).unwrap();
    assert!(BackendSpec::load(&p).unwrap_err().to_string().contains("max_concurrency"));
    std::fs::write(&p, r#"{"name":"g","endpoint":"mock://ground-truth","request_style":"simple_image"}"#).unwrap();
    let s = BackendSpec::load(&p).unwrap();
    assert!(s.is_mock());
    assert_eq!(s.max_concurrency, 1);
    assert!(s.stream);
}
