//! OCR / extraction backends, a persistent prediction cache, and the batch
//! runner that drives them.
//!
//! Two HTTP request styles are supported:
//!
//! * `chat_image`: an OpenAI-compatible chat completion with image parts
//!   followed by a text part. Streaming responses are server-sent events whose
//!   `choices[0].delta.content` carries text.
//! * `simple_image`: a multipart form with a `prompt` field and one `image`
//!   part per page. Non-streaming responses are `{"text": ...}` JSON or plain
//!   text; streaming responses are newline-delimited `{"text": ...}` deltas.
//!
//! Timing token counts are the number of content-bearing stream events.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write as _};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::latency::{LatencyParams, TimingTrace};
use crate::schemas::FieldRecord;

pub const CACHE_FORMAT_VERSION: u32 = 1;
const RETRIES: usize = 2;

#[derive(Debug, thiserror::Error)]
pub enum BackendError {
    #[error("request timed out")]
    Timeout,
    #[error("HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport: {0}")]
    Transport(String),
    #[error("malformed stream: {0}")]
    MalformedStream(String),
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("image {path}: {message}")]
    Image { path: String, message: String },
    #[error("no images in request")]
    NoImages,
    #[error("backend unavailable: {0}")]
    Unavailable(String),
    #[error("backend spec {path}: {message}")]
    Spec { path: String, message: String },
}

#[derive(Debug, thiserror::Error)]
#[error("cache {path}: {source}")]
pub struct CacheError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestStyle {
    ChatImage,
    SimpleImage,
}

fn default_timeout() -> f64 {
    120.0
}

fn default_concurrency() -> usize {
    1
}

fn default_stream() -> bool {
    true
}

/// Connection settings for one backend, usually read from a JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSpec {
    pub name: String,
    /// `http(s)://...`, or `mock://ground-truth` / `mock://down` for the
    /// built-in mock.
    pub endpoint: String,
    /// Model identifier sent in chat requests; defaults to `name`.
    #[serde(default)]
    pub model: Option<String>,
    /// Environment variable holding a bearer token.
    #[serde(default)]
    pub auth_env: Option<String>,
    pub request_style: RequestStyle,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_concurrency")]
    pub max_concurrency: usize,
    #[serde(default = "default_stream")]
    pub stream: bool,
}

impl BackendSpec {
    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let spec_err = |message: String| BackendError::Spec {
            path: path.display().to_string(),
            message,
        };
        let text = std::fs::read_to_string(path).map_err(|e| spec_err(e.to_string()))?;
        let spec: BackendSpec = serde_json::from_str(&text).map_err(|e| spec_err(e.to_string()))?;
        if spec.max_concurrency == 0 {
            return Err(spec_err("max_concurrency must be at least 1".into()));
        }
        if spec.timeout_secs.is_nan() || spec.timeout_secs <= 0.0 {
            return Err(spec_err("timeout_secs must be positive".into()));
        }
        Ok(spec)
    }

    pub fn is_mock(&self) -> bool {
        self.endpoint.starts_with("mock://")
    }
}

/// One backend response, or the error that replaced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sample_id: String,
    pub model: String,
    pub output_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub parsed_fields: Option<FieldRecord>,
    /// Present when the response streamed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<TimingTrace>,
    /// Wall time from request to final byte, seconds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl PredictionRecord {
    pub fn is_error(&self) -> bool {
        self.error.is_some()
    }

    /// End-to-end latency: the trace span when streamed, otherwise wall time.
    pub fn end_to_end(&self) -> Option<f64> {
        self.trace.map(|t| t.end_to_end()).or(self.elapsed_seconds)
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> std::io::Result<()> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(std::io::Error::other)?);
        out.push('\n');
    }
    std::fs::write(path, out)
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("{}:{}: {e}", path.display(), i + 1)))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub sample_id: String,
    /// Page images in manifest order.
    pub images: Vec<PathBuf>,
    pub prompt: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Response {
    pub text: String,
    pub trace: Option<TimingTrace>,
    pub elapsed_seconds: f64,
}

pub trait Backend: Send + Sync {
    fn name(&self) -> &str;

    fn max_concurrency(&self) -> usize;

    /// Issue one request. Timestamps in the trace are seconds since `epoch`.
    fn call(&self, request: &Request, epoch: Instant) -> Result<Response, BackendError>;
}

/// Run one request and fold any error into the record.
pub fn transcribe(backend: &dyn Backend, request: &Request, epoch: Instant) -> PredictionRecord {
    let mut record = PredictionRecord {
        sample_id: request.sample_id.clone(),
        model: backend.name().to_string(),
        output_text: String::new(),
        parsed_fields: None,
        trace: None,
        elapsed_seconds: None,
        error: None,
    };
    match backend.call(request, epoch) {
        Ok(resp) => {
            record.output_text = resp.text;
            record.trace = resp.trace;
            record.elapsed_seconds = Some(resp.elapsed_seconds);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

fn since(epoch: Instant, t: Instant) -> f64 {
    t.saturating_duration_since(epoch).as_secs_f64()
}

/// Collects stream events into text and a timing trace.
struct StreamTimer {
    epoch: Instant,
    request_at: Instant,
    first: Option<Instant>,
    last: Option<Instant>,
    events: u64,
    text: String,
}

impl StreamTimer {
    fn new(epoch: Instant, request_at: Instant) -> Self {
        Self {
            epoch,
            request_at,
            first: None,
            last: None,
            events: 0,
            text: String::new(),
        }
    }

    fn event(&mut self, delta: &str) {
        if delta.is_empty() {
            return;
        }
        let now = Instant::now();
        self.first.get_or_insert(now);
        self.last = Some(now);
        self.events += 1;
        self.text.push_str(delta);
    }

    fn finish(self) -> Response {
        let end = Instant::now();
        let trace = self.first.map(|first| TimingTrace {
            request_at: since(self.epoch, self.request_at),
            first_token_at: since(self.epoch, first),
            last_token_at: since(self.epoch, self.last.unwrap_or(first)),
            token_count: self.events,
        });
        Response {
            text: self.text,
            trace,
            elapsed_seconds: end.duration_since(self.request_at).as_secs_f64(),
        }
    }
}

pub struct HttpBackend {
    spec: BackendSpec,
    client: reqwest::blocking::Client,
    token: Option<String>,
}

impl HttpBackend {
    pub fn new(spec: BackendSpec) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs_f64(spec.timeout_secs))
            .build()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let token = match &spec.auth_env {
            Some(var) => Some(std::env::var(var).map_err(|_| BackendError::Spec {
                path: spec.name.clone(),
                message: format!("environment variable {var} is not set"),
            })?),
            None => None,
        };
        Ok(Self { spec, client, token })
    }

    fn build(&self, request: &Request) -> Result<reqwest::blocking::RequestBuilder, BackendError> {
        let mut builder = self.client.post(&self.spec.endpoint);
        if let Some(token) = &self.token {
            builder = builder.bearer_auth(token);
        }
        match self.spec.request_style {
            RequestStyle::ChatImage => {
                let mut content = Vec::new();
                for path in &request.images {
                    let bytes = read_image(path)?;
                    let url = format!(
                        "data:{};base64,{}",
                        mime_for(path),
                        base64::engine::general_purpose::STANDARD.encode(bytes)
                    );
                    content.push(serde_json::json!({"type": "image_url", "image_url": {"url": url}}));
                }
                content.push(serde_json::json!({"type": "text", "text": request.prompt}));
                let body = serde_json::json!({
                    "model": self.spec.model.as_deref().unwrap_or(&self.spec.name),
                    "stream": self.spec.stream,
                    "messages": [{"role": "user", "content": content}],
                });
                Ok(builder.json(&body))
            }
            RequestStyle::SimpleImage => {
                let mut form = reqwest::blocking::multipart::Form::new()
                    .text("prompt", request.prompt.clone())
                    .text("stream", self.spec.stream.to_string());
                for path in &request.images {
                    let bytes = read_image(path)?;
                    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                    let part = reqwest::blocking::multipart::Part::bytes(bytes)
                        .file_name(name)
                        .mime_str(mime_for(path))
                        .map_err(|e| BackendError::Transport(e.to_string()))?;
                    form = form.part("image", part);
                }
                Ok(builder.multipart(form))
            }
        }
    }

    fn send(&self, request: &Request) -> Result<(reqwest::blocking::Response, Instant), BackendError> {
        let mut attempt = 0;
        loop {
            let builder = self.build(request)?;
            let started = Instant::now();
            match builder.send() {
                Ok(resp) => return Ok((resp, started)),
                Err(e) if e.is_timeout() => return Err(BackendError::Timeout),
                Err(e) if e.is_connect() && attempt < RETRIES => {
                    attempt += 1;
                    log::warn!("{}: connect failed ({e}); retry {attempt}/{RETRIES}", self.spec.name);
                    std::thread::sleep(Duration::from_millis(100 * attempt as u64));
                }
                Err(e) => return Err(BackendError::Transport(e.to_string())),
            }
        }
    }
}

fn read_image(path: &Path) -> Result<Vec<u8>, BackendError> {
    std::fs::read(path).map_err(|e| BackendError::Image {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn mime_for(path: &Path) -> &'static str {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("jpg" | "jpeg") => "image/jpeg",
        Some("webp") => "image/webp",
        Some("tif" | "tiff") => "image/tiff",
        Some("gif") => "image/gif",
        _ => "image/png",
    }
}

fn map_read_err(e: std::io::Error) -> BackendError {
    if e.kind() == std::io::ErrorKind::TimedOut {
        BackendError::Timeout
    } else {
        BackendError::MalformedStream(e.to_string())
    }
}

fn chat_delta(v: &serde_json::Value) -> Option<&str> {
    v.pointer("/choices/0/delta/content").and_then(|c| c.as_str())
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        &self.spec.name
    }

    fn max_concurrency(&self) -> usize {
        self.spec.max_concurrency
    }

    fn call(&self, request: &Request, epoch: Instant) -> Result<Response, BackendError> {
        if request.images.is_empty() {
            return Err(BackendError::NoImages);
        }
        let (resp, started) = self.send(request)?;
        let status = resp.status();
        if !status.is_success() {
            let body = resp.text().unwrap_or_default();
            return Err(BackendError::Status {
                status: status.as_u16(),
                body: body.chars().take(500).collect(),
            });
        }
        if !self.spec.stream {
            let body = resp.text().map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            let elapsed_seconds = started.elapsed().as_secs_f64();
            let text = match self.spec.request_style {
                RequestStyle::ChatImage => {
                    let v: serde_json::Value =
                        serde_json::from_str(&body).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
                    v.pointer("/choices/0/message/content")
                        .and_then(|c| c.as_str())
                        .ok_or_else(|| BackendError::MalformedResponse("missing choices[0].message.content".into()))?
                        .to_string()
                }
                RequestStyle::SimpleImage => match serde_json::from_str::<serde_json::Value>(&body) {
                    Ok(v) => v
                        .get("text")
                        .and_then(|t| t.as_str())
                        .ok_or_else(|| BackendError::MalformedResponse("missing \"text\"".into()))?
                        .to_string(),
                    Err(_) => body,
                },
            };
            return Ok(Response {
                text,
                trace: None,
                elapsed_seconds,
            });
        }

        let mut timer = StreamTimer::new(epoch, started);
        let reader = BufReader::new(resp);
        let mut done = false;
        for line in reader.lines() {
            let line = line.map_err(map_read_err)?;
            let line = line.trim_end_matches('\r');
            match self.spec.request_style {
                RequestStyle::ChatImage => {
                    let Some(data) = line.strip_prefix("data:") else {
                        continue;
                    };
                    let data = data.trim();
                    if data == "[DONE]" {
                        done = true;
                        break;
                    }
                    let v: serde_json::Value =
                        serde_json::from_str(data).map_err(|e| BackendError::MalformedStream(e.to_string()))?;
                    if let Some(delta) = chat_delta(&v) {
                        timer.event(delta);
                    }
                }
                RequestStyle::SimpleImage => {
                    if line.trim().is_empty() {
                        continue;
                    }
                    let v: serde_json::Value =
                        serde_json::from_str(line).map_err(|e| BackendError::MalformedStream(e.to_string()))?;
                    if let Some(delta) = v.get("text").and_then(|t| t.as_str()) {
                        timer.event(delta);
                    }
                    if v.get("done").and_then(|d| d.as_bool()) == Some(true) {
                        done = true;
                        break;
                    }
                }
            }
        }
        if !done && self.spec.request_style == RequestStyle::ChatImage {
            return Err(BackendError::MalformedStream("stream ended without [DONE]".into()));
        }
        Ok(timer.finish())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MockTiming {
    /// Report a trace computed from the configured delays without sleeping.
    /// Request time is always 0.
    Virtual,
    /// Sleep for the configured delays and measure.
    Sleep,
}

/// Deterministic in-process backend. Responses are split into stream events
/// at whitespace boundaries.
pub struct MockBackend {
    name: String,
    responses: HashMap<String, String>,
    params: LatencyParams,
    timing: MockTiming,
    down: bool,
    max_concurrency: usize,
    in_flight: AtomicUsize,
    peak: AtomicUsize,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new(name: impl Into<String>, responses: HashMap<String, String>) -> Self {
        Self {
            name: name.into(),
            responses,
            params: LatencyParams::default(),
            timing: MockTiming::Virtual,
            down: false,
            max_concurrency: 1,
            in_flight: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            calls: AtomicUsize::new(0),
        }
    }

    /// A backend whose every call fails.
    pub fn down(name: impl Into<String>) -> Self {
        let mut m = Self::new(name, HashMap::new());
        m.down = true;
        m
    }

    pub fn with_timing(mut self, params: LatencyParams, timing: MockTiming) -> Self {
        self.params = params;
        self.timing = timing;
        self
    }

    pub fn with_max_concurrency(mut self, n: usize) -> Self {
        self.max_concurrency = n.max(1);
        self
    }

    /// Largest number of requests observed in flight at once.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    fn respond(&self, request: &Request, epoch: Instant) -> Result<Response, BackendError> {
        if self.down {
            return Err(BackendError::Unavailable(format!("{} is down", self.name)));
        }
        if request.images.is_empty() {
            return Err(BackendError::NoImages);
        }
        let text = self
            .responses
            .get(&request.sample_id)
            .cloned()
            .ok_or_else(|| BackendError::Unavailable(format!("no fixture for {}", request.sample_id)))?;
        let events = word_events(&text);
        let n = events.len().max(1) as u64;
        match self.timing {
            MockTiming::Virtual => {
                let trace = TimingTrace::synthesize(0.0, self.params, n);
                Ok(Response {
                    text,
                    elapsed_seconds: trace.end_to_end(),
                    trace: Some(trace),
                })
            }
            MockTiming::Sleep => {
                let started = Instant::now();
                let mut timer = StreamTimer::new(epoch, started);
                std::thread::sleep(Duration::from_secs_f64(self.params.ttft));
                for (i, e) in events.iter().enumerate() {
                    if i > 0 {
                        std::thread::sleep(Duration::from_secs_f64(self.params.inter_token));
                    }
                    timer.event(e);
                }
                let mut resp = timer.finish();
                resp.text = text;
                Ok(resp)
            }
        }
    }
}

/// Split text into words, each carrying its trailing whitespace.
fn word_events(text: &str) -> Vec<&str> {
    let mut events = Vec::new();
    let mut start = 0;
    let mut prev_ws = false;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if prev_ws && !ws && i > start && !text[start..i].trim().is_empty() {
            events.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        events.push(&text[start..]);
    }
    events
}

impl Backend for MockBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn max_concurrency(&self) -> usize {
        self.max_concurrency
    }

    fn call(&self, request: &Request, epoch: Instant) -> Result<Response, BackendError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        let out = self.respond(request, epoch);
        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn prompt_digest(prompt: &str) -> String {
    sha256_hex(prompt.as_bytes())
}

#[derive(Serialize, Deserialize)]
struct CacheEntry {
    format_version: u32,
    sample_id: String,
    model: String,
    prompt_digest: String,
    record: PredictionRecord,
}

/// One JSON file per prediction, named by the digest of
/// (sample id, model, prompt digest).
#[derive(Debug, Clone)]
pub struct PredictionCache {
    dir: PathBuf,
}

impl PredictionCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| CacheError {
            path: dir.display().to_string(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, sample_id: &str, model: &str, prompt_digest: &str) -> PathBuf {
        let mut h = Sha256::new();
        for part in [sample_id, model, prompt_digest] {
            h.update(part.as_bytes());
            h.update([0u8]);
        }
        self.dir.join(format!("{}.json", hex::encode(h.finalize())))
    }

    pub fn get(&self, sample_id: &str, model: &str, prompt_digest: &str) -> Result<Option<PredictionRecord>, CacheError> {
        let path = self.path_for(sample_id, model, prompt_digest);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(source) => {
                return Err(CacheError {
                    path: path.display().to_string(),
                    source,
                })
            }
        };
        match serde_json::from_slice::<CacheEntry>(&bytes) {
            Ok(entry)
                if entry.format_version == CACHE_FORMAT_VERSION
                    && entry.sample_id == sample_id
                    && entry.model == model
                    && entry.prompt_digest == prompt_digest =>
            {
                Ok(Some(entry.record))
            }
            Ok(_) => Ok(None),
            Err(e) => {
                log::warn!("evicting corrupt cache entry {}: {e}", path.display());
                let _ = std::fs::remove_file(&path);
                Ok(None)
            }
        }
    }

    pub fn put(&self, prompt_digest: &str, record: &PredictionRecord) -> Result<(), CacheError> {
        let path = self.path_for(&record.sample_id, &record.model, prompt_digest);
        let io_err = |source| CacheError {
            path: path.display().to_string(),
            source,
        };
        let entry = CacheEntry {
            format_version: CACHE_FORMAT_VERSION,
            sample_id: record.sample_id.clone(),
            model: record.model.clone(),
            prompt_digest: prompt_digest.to_string(),
            record: record.clone(),
        };
        let json = serde_json::to_vec_pretty(&entry).map_err(|e| io_err(std::io::Error::other(e)))?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io_err)?;
        tmp.write_all(&json).map_err(io_err)?;
        tmp.persist(&path).map_err(|e| io_err(e.error))?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// One request at a time.
    Sequential,
    /// Up to `n` requests at once, capped by the backend's own limit.
    Parallel(usize),
}

impl RunMode {
    pub fn label(&self) -> String {
        match self {
            RunMode::Sequential => "sequential".into(),
            RunMode::Parallel(n) => format!("parallel({n})"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunStats {
    pub cache_hits: usize,
    pub requests: usize,
    pub errors: usize,
}

/// Run every request, reusing cached predictions. Results come back in input
/// order. Error records are returned but never cached.
pub fn run_batch(
    backend: &dyn Backend,
    requests: &[Request],
    cache: Option<&PredictionCache>,
    mode: RunMode,
) -> Result<(Vec<PredictionRecord>, RunStats), CacheError> {
    let mut stats = RunStats::default();
    let mut slots: Vec<Option<PredictionRecord>> = vec![None; requests.len()];
    let mut pending = Vec::new();
    for (i, req) in requests.iter().enumerate() {
        let hit = match cache {
            Some(c) => c.get(&req.sample_id, backend.name(), &prompt_digest(&req.prompt))?,
            None => None,
        };
        match hit {
            Some(rec) => {
                stats.cache_hits += 1;
                slots[i] = Some(rec);
            }
            None => pending.push(i),
        }
    }

    let workers = match mode {
        RunMode::Sequential => 1,
        RunMode::Parallel(n) => n.max(1).min(backend.max_concurrency()),
    }
    .min(pending.len().max(1));
    let epoch = Instant::now();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<(usize, PredictionRecord)>> = Mutex::new(Vec::with_capacity(pending.len()));
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(&i) = pending.get(k) else { break };
                let rec = transcribe(backend, &requests[i], epoch);
                results.lock().expect("results lock").push((i, rec));
            });
        }
    });

    for (i, rec) in results.into_inner().expect("results lock") {
        stats.requests += 1;
        if rec.is_error() {
            stats.errors += 1;
        } else if let Some(c) = cache {
            c.put(&prompt_digest(&requests[i].prompt), &rec)?;
        }
        slots[i] = Some(rec);
    }
    Ok((slots.into_iter().map(|r| r.expect("every slot filled")).collect(), stats))
}
